import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from idmk.core import Action, InvalidInputError, validate_trajectory
from idmk.envsim import (
    ARENA,
    PAUSE_STEPS,
    SCENARIOS,
    EnvConfig,
    EnvState,
    HazardRegion,
    Scenario,
    StochasticitySpec,
    generate_dataset,
    make_reference,
    observe,
    replay,
    step,
)

GAIN = 0.2 * (10 / 11)


def _state(pos=(0.0, 0.0), vel=(0.0, 0.0), seed=None):
    s = EnvState.initial(pos, seed)
    return EnvState(s.pos, np.asarray(vel, dtype=float), s.rng)


# -- dynamics

def test_zero_input_stays_put():
    s = step(_state((3.0, -2.0)), Action((False, False), (5, 5)))
    assert s.pos.tolist() == [3.0, -2.0]
    assert s.vel.tolist() == [0.0, 0.0]


def test_single_push():
    s = step(_state(), Action((False, False), (10, 5)))
    np.testing.assert_allclose(s.vel, [GAIN, 0.0], atol=1e-15)


def test_boost_doubles_stick_term():
    s = step(_state(), Action((True, False), (10, 5)))
    np.testing.assert_allclose(s.vel, [2 * GAIN, 0.0], atol=1e-15)


def test_second_button_has_no_effect():
    a = step(_state(), Action((False, True), (10, 3)))
    b = step(_state(), Action((False, False), (10, 3)))
    assert a.pos.tolist() == b.pos.tolist()


def test_velocity_decays():
    s = step(_state(vel=(0.5, 0.0)), Action.noop())
    np.testing.assert_allclose(s.vel, [0.4, 0.0])
    np.testing.assert_allclose(s.pos, [0.4, 0.0])


def test_hazard_region_biases_velocity():
    cfg = EnvConfig(stochasticity=StochasticitySpec(0.0, (HazardRegion((0.0, 0.0), 1.0, (0.1, -0.1)),)))
    s = step(_state(), Action.noop(), cfg)
    np.testing.assert_allclose(s.vel, [0.1, -0.1])


def test_noise_needs_seeded_state():
    with pytest.raises(InvalidInputError):
        step(_state(), Action.noop(), EnvConfig(stochasticity=StochasticitySpec(0.1)))


def test_invalid_specs_rejected():
    with pytest.raises(InvalidInputError):
        StochasticitySpec(-0.1)
    with pytest.raises(InvalidInputError):
        HazardRegion((0, 0), 0.0, (0, 0))
    with pytest.raises(InvalidInputError):
        Scenario("maze")


actions = st.builds(Action, st.tuples(st.booleans(), st.booleans()), st.tuples(st.integers(0, 10), st.integers(0, 10)))


@given(st.lists(actions, min_size=1, max_size=60), st.integers(0, 2**31), st.floats(0.0, 2.0))
def test_state_invariants_hold(seq, seed, sigma):
    cfg = EnvConfig(stochasticity=StochasticitySpec(sigma))
    s = _state((95.0, -95.0), seed=seed)
    for a in seq:
        s = step(s, a, cfg)
        assert np.hypot(*s.vel) <= cfg.v_max + 1e-12
        assert np.all(np.abs(s.pos) <= ARENA)


@given(st.lists(actions, min_size=1, max_size=30), st.integers(0, 2**31))
def test_stepping_is_deterministic(seq, seed):
    cfg = EnvConfig(stochasticity=StochasticitySpec(0.3))
    runs = []
    for _ in range(2):
        s = _state(seed=seed)
        for a in seq:
            s = step(s, a, cfg)
        runs.append((s.pos.tobytes(), s.vel.tobytes()))
    assert runs[0] == runs[1]


# -- observation

def test_observe_at_goal_has_zero_offsets():
    ref = make_reference("winding-0")
    p = ref.positions()[7]
    obs = observe(_state(p[:2]), ref, 7, window=1)
    assert obs[4:].tolist() == [0.0, 0.0]


@pytest.mark.parametrize("F", [0, 1, 5, 10])
def test_observe_dimension(F):
    ref = make_reference("loop")
    assert len(observe(_state(), ref, 3, window=F)) == 4 + 2 * F


def test_observe_translation_invariance():
    ref = make_reference("winding-1")
    shift = np.array([7.5, -3.25])
    moved = ref.positions()[:, :2] + shift

    class Shifted:
        def positions(self):
            return np.hstack([moved, np.zeros((len(moved), 1))])

    a = observe(_state((1.0, 2.0)), ref, 10, window=4, stride=2)
    b = observe(_state((1.0 + shift[0], 2.0 + shift[1])), Shifted(), 10, window=4, stride=2)
    np.testing.assert_allclose(a[4:], b[4:], atol=1e-12)


def test_observe_rejects_bad_index():
    ref = make_reference("loop")
    with pytest.raises(InvalidInputError):
        observe(_state(), ref, len(ref), window=1)


# -- scenarios

@pytest.mark.parametrize("name", SCENARIOS)
def test_references_are_valid(name):
    ref = make_reference(name)
    assert validate_trajectory(ref) == []
    assert ref.obs_dim == 4 and ref.n_buttons == 2 and ref.n_sticks == 2
    assert np.all(ref.positions()[:, 2] == 0)


def test_crossroads_share_prefix_then_diverge():
    refs = [make_reference(n).positions() for n in ("crossroads-left", "crossroads-right", "crossroads-mid")]
    for other in refs[1:]:
        assert np.array_equal(refs[0][:30], other[:30])
    ends = [r[-1, :2] for r in refs]
    assert min(np.linalg.norm(a - b) for i, a in enumerate(ends) for b in ends[i + 1:]) > 20


def test_loop_revisits_a_point():
    pos = make_reference("loop").positions()
    d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
    i, j = np.nonzero((d < 0.01) & (np.arange(len(pos))[None, :] - np.arange(len(pos))[:, None] >= 20))
    assert len(i) > 0


def test_pause_then_go_holds_then_moves():
    ref = make_reference("pause-then-go")
    pos = ref.positions()
    assert np.array_equal(pos[0], pos[24])
    assert np.all(pos[:PAUSE_STEPS] == pos[0])
    assert np.linalg.norm(pos[-1] - pos[0]) > 10
    # the recorded-only button is held during the pause
    assert all(s.action.buttons[1] for s in ref.steps[:PAUSE_STEPS])


def test_unknown_scenario():
    with pytest.raises(InvalidInputError):
        make_reference("spiral")


def test_reference_generation_ignores_noise():
    noisy = EnvConfig(stochasticity=StochasticitySpec(0.5))
    assert make_reference("winding-2", cfg=noisy) == make_reference("winding-2")


# -- datasets and replay

def test_dataset_needs_trajectories():
    with pytest.raises(InvalidInputError):
        generate_dataset(["loop"], 0, 0)


def test_dataset_members_differ_and_validate():
    data = generate_dataset(["winding-0", "loop"], 3, 0)
    assert len(data) == 6
    for tr in data:
        assert validate_trajectory(tr) == []
    a, b = data[0], data[1]
    assert any(x.action != y.action for x, y in zip(a.steps, b.steps))


def test_dataset_is_reproducible():
    assert generate_dataset(["winding-1"], 2, 5) == generate_dataset(["winding-1"], 2, 5)


@pytest.mark.parametrize("name", SCENARIOS)
def test_noise_free_replay_reproduces_reference(name):
    ref = make_reference(name)
    rep = replay(ref)
    assert np.max(np.abs(rep.positions() - ref.positions())) <= 1e-9


def test_noisy_replay_drifts():
    ref = make_reference("winding-0")
    rep = replay(ref, EnvConfig(stochasticity=StochasticitySpec(0.05)), seed=0)
    assert np.linalg.norm(rep.positions()[-1] - ref.positions()[-1]) >= 1.0
