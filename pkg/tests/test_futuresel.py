import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from idmk import futuresel as fs
from idmk.core import InvalidInputError
from idmk.envsim import make_reference

coords = st.floats(-50, 50, allow_nan=False)
points = st.tuples(coords, coords)
paths = st.lists(points, min_size=1, max_size=40)


def _xyz(p):
    return np.array([p[0], p[1], 0.0])


def _line(n, spacing=1.0):
    return [(i * spacing, 0.0) for i in range(n)]


# -- static

@pytest.mark.parametrize("t, K, T, expected", [(7, 10, 100, 17), (0, 0, 100, 0), (95, 10, 100, 99)])
def test_static_examples(t, K, T, expected):
    assert fs.static_select(t, K, T) == expected


def test_static_rejects_negative_t():
    with pytest.raises(InvalidInputError):
        fs.static_select(-1, 0, 10)


@given(st.integers(0, 500), st.integers(0, 50), st.integers(1, 300), points)
def test_static_dispatch_ignores_position(t, K, T, p):
    state = fs.initial_state(fs.Static(K), _line(T))
    idx, new = fs.select(state, t, p)
    assert idx == fs.static_select(t, K, T)
    assert new is state


# -- closest

def test_closest_exact_hit_plus_k():
    ref = _line(20)
    assert fs.closest_select(ref, (3.0, 0.0), 5) == 8


def test_closest_tie_goes_to_first_index():
    ref = [(0.0, 10.0)] * 12
    ref[2] = (-1.0, 0.0)
    ref[9] = (1.0, 0.0)
    assert fs.closest_select(ref, (0.0, 0.0), 0) == 2


def test_closest_clamps_at_end():
    assert fs.closest_select(_line(10), (9.0, 0.0), 4) == 9


@given(paths, points, st.integers(0, 10))
def test_closest_matches_linear_scan(ref, p, K):
    best, best_d = 0, math.inf
    for i, q in enumerate(ref):
        d = math.hypot(q[0] - p[0], q[1] - p[1])
        if d < best_d:
            best, best_d = i, d
    assert fs.closest_select(ref, p, K) == min(best + K, len(ref) - 1)


@given(paths, points, st.integers(-40, 40), st.integers(-40, 40))
def test_closest_translation_covariant(ref, p, dx, dy):
    # integer shifts keep the arithmetic exact enough that ties survive translation
    ref = [(round(x), round(y)) for x, y in ref]
    p = (round(p[0]), round(p[1]))
    moved = [(x + dx, y + dy) for x, y in ref]
    assert fs.closest_select(ref, p, 0) == fs.closest_select(moved, (p[0] + dx, p[1] + dy), 0)


# -- radius

def _radius_state(idx=0, r=1.0, n=10):
    return fs.SelectorState(fs.Radius(r), idx, np.array([_xyz(q) for q in _line(n)]))


def test_radius_advances_when_close():
    assert fs.radius_update(_radius_state(2), (2.0, 0.0)).fut_idx == 3


def test_radius_waits_when_far():
    assert fs.radius_update(_radius_state(2), (2.0, 5.0)).fut_idx == 2


def test_radius_boundary_is_inclusive():
    assert fs.radius_update(_radius_state(2, r=1.0), (2.0, 1.0)).fut_idx == 3


def test_radius_advances_only_one_step():
    # agent is within r of many points; still a single increment
    assert fs.radius_update(_radius_state(0, r=50.0), (0.0, 0.0)).fut_idx == 1


def test_radius_clamps_at_end():
    assert fs.radius_update(_radius_state(9), (9.0, 0.0)).fut_idx == 9


def test_glued_agent_sees_k_then_successors():
    ref = _line(30)
    kind = fs.Radius(1.0, K=3)
    state = fs.initial_state(kind, ref)
    seen = []
    for t in range(10):
        idx, state = fs.select(state, t, ref[state.fut_idx])
        seen.append(idx)
    assert seen == list(range(3, 13))


# -- inner/outer

def _io_state(idx, r_in, r_out, ref):
    return fs.SelectorState(fs.InnerOuter(r_in, r_out), idx, np.array([_xyz(q) for q in ref]))


def test_inner_outer_far_is_unchanged():
    assert fs.inner_outer_update(_io_state(2, 0.5, 2.0, _line(10)), (2.0, 9.0)).fut_idx == 2


def test_inner_outer_band_advances_one():
    assert fs.inner_outer_update(_io_state(2, 0.5, 2.0, _line(10)), (2.0, 1.0)).fut_idx == 3


def test_inner_outer_jumps_dense_segment():
    # indices 3..6 sit within 0.05 of the agent, index 7 is 1.0 away
    ref = _line(3) + [(3.0, 0.01 * k) for k in range(4)] + [(4.0, 0.0), (5.0, 0.0)]
    state = fs.inner_outer_update(_io_state(3, 0.5, 2.0, ref), (3.0, 0.0))
    assert state.fut_idx == 7


def test_inner_outer_stops_at_end():
    ref = [(0.0, 0.0)] * 6
    assert fs.inner_outer_update(_io_state(0, 0.5, 2.0, ref), (0.0, 0.0)).fut_idx == 5


walks = st.lists(st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5)), min_size=1, max_size=60)


def _walk(steps, start=(0.0, 0.0)):
    out, p = [], np.array(start, dtype=float)
    for dx, dy in steps:
        p = p + (dx, dy)
        out.append(tuple(p))
    return out


@given(walks, st.floats(0.1, 5.0), st.integers(0, 5))
def test_radius_monotone_and_bounded(steps, r, K):
    ref = _line(25)
    idx = fs.run_selector(fs.Radius(r, K), ref, _walk(steps)).fut_indices
    assert all(a <= b for a, b in zip(idx, idx[1:]))
    assert all(0 <= i <= 24 for i in idx)


@given(walks, st.floats(0.0, 1.0), st.floats(0.1, 4.0), st.integers(0, 5))
def test_inner_outer_monotone(steps, r_in, extra, K):
    idx = fs.run_selector(fs.InnerOuter(r_in, r_in + extra, K), _line(25), _walk(steps)).fut_indices
    assert all(a <= b for a, b in zip(idx, idx[1:]))


@given(walks, st.floats(0.1, 5.0), st.integers(0, 5))
def test_inner_outer_without_inner_equals_radius(steps, r, K):
    ref = _line(25, 0.7)
    pos = _walk(steps)
    a = fs.run_selector(fs.InnerOuter(0.0, r, K), ref, pos)
    b = fs.run_selector(fs.Radius(r, K), ref, pos)
    assert a.fut_indices == b.fut_indices
    assert [e.dist for e in a.entries] == [e.dist for e in b.entries]


# -- trace and configuration

def test_trace_has_one_entry_per_step():
    ref = _line(10)
    pos = [(0.0, 0.5)] * 7
    trace = fs.run_selector(fs.Closest(0), ref, pos)
    assert len(trace) == 7
    assert trace.to_csv_rows()[0] == (0, 0, repr(0.5))


def test_make_kind_and_labels():
    assert fs.make_kind("static", 10) == fs.Static(10)
    assert fs.make_kind("inner_outer", 1, r_in=0.5, r_out=3) == fs.InnerOuter(0.5, 3, 1)
    assert fs.kind_label(fs.Radius(2.0, 1)) == "radius(r=2,K=1)"
    with pytest.raises(InvalidInputError):
        fs.make_kind("nearest")


@pytest.mark.parametrize("build", [
    lambda: fs.Static(-1),
    lambda: fs.Closest(1.5),
    lambda: fs.Radius(0.0),
    lambda: fs.InnerOuter(2.0, 1.0),
    lambda: fs.InnerOuter(-0.1, 1.0),
])
def test_invalid_kinds_rejected(build):
    with pytest.raises(InvalidInputError):
        build()


def test_initial_index_clamped():
    assert fs.initial_state(fs.Radius(1.0, 50), _line(10)).fut_idx == 9


# -- pathologies on the constructed scenarios

def test_loop_revisit_conditions_on_earlier_index():
    ref = make_reference("loop")
    pos = ref.positions()
    d = np.linalg.norm(pos[:, None, :2] - pos[None, :, :2], axis=2)
    gap = np.arange(len(pos))[None, :] - np.arange(len(pos))[:, None]
    i, j = np.argwhere((d < 0.01) & (gap >= 20))[0]
    # an agent standing on the revisited spot during its second pass
    assert fs.closest_select(ref, pos[i], 0) <= i < j
    trace = fs.run_selector(fs.Radius(1.0, 0), ref, [pos[t] for t in range(len(pos))])
    assert trace.fut_indices == list(range(len(pos)))


def test_pause_then_go_closest_fixed_point_radius_advances():
    ref = make_reference("pause-then-go")
    start = ref.positions()[0]
    stuck = [start] * 60
    closest = fs.run_selector(fs.Closest(0), ref, stuck).fut_indices
    radius = fs.run_selector(fs.Radius(1.0, 0), ref, stuck).fut_indices
    assert set(closest) == {0}
    assert radius[:25] == list(range(25))
