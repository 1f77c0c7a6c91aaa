"""2D damped point-mass environment and scripted expert demonstrations.

The arena is the square [-100, 100]^2 with z fixed at 0. Stick axes 0 and 1
drive x and y; button 0 is a boost that doubles the stick contribution for
one step, button 1 is recorded but has no effect on the dynamics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    N_BINS,
    Action,
    InvalidInputError,
    Position,
    Trajectory,
    TrajectoryStep,
    dequantize_stick,
    discretize_stick,
)

ARENA = 100.0
VEL_DECAY = 0.8
STICK_GAIN = 0.2
PAUSE_STEPS = 25

SCENARIOS = (
    "crossroads-left",
    "crossroads-right",
    "crossroads-mid",
    "winding-0",
    "winding-1",
    "winding-2",
    "loop",
    "pause-then-go",
)


@dataclass(frozen=True)
class HazardRegion:
    """Disc that pushes the agent with a constant velocity bias while inside."""

    center: tuple[float, float]
    radius: float
    bias: tuple[float, float]

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidInputError("hazard radius must be positive")


@dataclass(frozen=True)
class StochasticitySpec:
    sigma: float = 0.0
    hazard_regions: tuple[HazardRegion, ...] = ()

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise InvalidInputError("sigma must be finite and >= 0")
        object.__setattr__(self, "hazard_regions", tuple(self.hazard_regions))


@dataclass(frozen=True)
class Scenario:
    name: str
    hazard: StochasticitySpec = field(default_factory=StochasticitySpec)

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise InvalidInputError(f"unknown scenario {self.name!r}")


@dataclass(frozen=True)
class EnvConfig:
    v_max: float = 1.0
    n_buttons: int = 2
    n_sticks: int = 2
    stochasticity: StochasticitySpec = field(default_factory=StochasticitySpec)

    def __post_init__(self):
        if self.n_sticks < 2:
            raise InvalidInputError("the environment needs at least two stick axes")
        if self.n_buttons < 0:
            raise InvalidInputError("n_buttons must be >= 0")


@dataclass(frozen=True)
class EnvState:
    pos: np.ndarray
    vel: np.ndarray
    rng: np.random.Generator | None = None

    @classmethod
    def initial(cls, pos, seed: int | None = None) -> "EnvState":
        p = np.zeros(2)
        p[:] = np.asarray(pos, dtype=float)[:2]
        rng = np.random.default_rng(seed) if seed is not None else None
        return cls(p, np.zeros(2), rng)

    @property
    def position(self) -> Position:
        return Position(float(self.pos[0]), float(self.pos[1]), 0.0)


def _clip_norm(v: np.ndarray, limit: float) -> np.ndarray:
    n = math.hypot(v[0], v[1])
    if n > limit:
        return v * (limit / n)
    return v


def step(state: EnvState, action: Action, cfg: EnvConfig = EnvConfig()) -> EnvState:
    """Advance the environment by one step.

    The generator inside ``state`` is advanced in place when noise is drawn;
    callers that need to branch a state must copy it first.
    """
    stick = np.array([dequantize_stick(action.sticks[0]), dequantize_stick(action.sticks[1])])
    gain = STICK_GAIN
    if action.buttons and action.buttons[0]:
        gain *= 2.0
    vel = VEL_DECAY * state.vel + gain * stick
    spec = cfg.stochasticity
    if spec.sigma > 0:
        if state.rng is None:
            raise InvalidInputError("stochastic stepping needs a seeded state")
        vel = vel + state.rng.normal(0.0, spec.sigma, size=2)
    for region in spec.hazard_regions:
        if math.hypot(state.pos[0] - region.center[0], state.pos[1] - region.center[1]) <= region.radius:
            vel = vel + np.asarray(region.bias, dtype=float)
    vel = _clip_norm(vel, cfg.v_max)
    pos = np.clip(state.pos + vel, -ARENA, ARENA)
    return EnvState(pos, vel, state.rng)


def observe(
    state: EnvState,
    ref: Trajectory | None = None,
    fut_idx: int = 0,
    window: int = 0,
    stride: int = 1,
) -> np.ndarray:
    """Agent position and velocity followed by offsets to ``window`` reference points.

    The offsets point from the agent to ``ref`` at ``fut_idx + j * stride``
    for ``j = 0 .. window-1``, clamped at the last reference index.
    """
    parts = [state.pos, state.vel]
    if window > 0:
        refpos = ref.positions()
        last = len(refpos) - 1
        if not 0 <= fut_idx <= last:
            raise InvalidInputError(f"fut_idx {fut_idx} outside [0, {last}]")
        for j in range(window):
            k = min(fut_idx + j * stride, last)
            parts.append(refpos[k, :2] - state.pos)
    return np.concatenate(parts)


# Scenario geometry. Each path is a polyline of (x, y, speed) waypoints; the
# speed on a vertex applies to the segment that ends there.

_PREFIX = [(0.0, 0.0, 0.7), (0.0, 28.0, 0.7)]

_PATHS = {
    "crossroads-left": _PREFIX + [(-3.0, 31.0, 0.6), (-34.0, 34.0, 0.7)],
    "crossroads-right": _PREFIX + [(3.0, 31.0, 0.6), (34.0, 34.0, 0.7)],
    "crossroads-mid": _PREFIX + [(0.0, 62.0, 0.7)],
    "winding-0": [(0.0, 0.0, 0.6), (12.0, 6.0, 0.6), (14.0, 20.0, 0.6), (2.0, 28.0, 0.6),
                  (6.0, 40.0, 0.6), (20.0, 42.0, 0.6)],
    "winding-1": [(0.0, 0.0, 0.6), (-10.0, 10.0, 0.6), (-10.0, 30.0, 1.0), (6.0, 34.0, 0.6),
                  (14.0, 22.0, 0.6), (26.0, 26.0, 0.6)],
    "winding-2": [(0.0, 0.0, 0.5), (8.0, -8.0, 0.5), (20.0, -6.0, 0.6), (22.0, 8.0, 0.6),
                  (34.0, 12.0, 1.0), (36.0, 30.0, 0.6)],
    "pause-then-go": [(0.0, 0.0, 0.6), (10.0, 10.0, 0.6), (10.0, 30.0, 0.6)],
}

_LOOKAHEAD = 2.0
_FEEDBACK = 1.5
_STOP_RADIUS = 0.3


def _segment_lengths(path: np.ndarray) -> np.ndarray:
    return np.hypot(*np.diff(path[:, :2], axis=0).T)


class WaypointExpert:
    """Pure-pursuit follower of a polyline with per-segment target speeds."""

    def __init__(self, waypoints, n_buttons: int, n_sticks: int):
        self.path = np.asarray(waypoints, dtype=float)
        self.seg_len = _segment_lengths(self.path)
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.total = float(self.cum[-1])
        self.n_buttons = n_buttons
        self.n_sticks = n_sticks
        self.progress = 0.0

    def _point_at(self, s: float) -> tuple[np.ndarray, float]:
        s = min(max(s, 0.0), self.total)
        i = int(np.searchsorted(self.cum, s, side="right") - 1)
        i = min(i, len(self.seg_len) - 1)
        frac = (s - self.cum[i]) / self.seg_len[i]
        p = self.path[i, :2] + frac * (self.path[i + 1, :2] - self.path[i, :2])
        return p, float(self.path[i + 1, 2])

    def _project(self, pos: np.ndarray) -> float:
        # search forward from the current progress only, so crossings and
        # branch points cannot pull the expert backwards
        best_s, best_d = self.progress, math.inf
        for i in range(len(self.seg_len)):
            if self.cum[i + 1] < self.progress:
                continue
            a, b = self.path[i, :2], self.path[i + 1, :2]
            ab = b - a
            u = float(np.clip(np.dot(pos - a, ab) / np.dot(ab, ab), 0.0, 1.0))
            s = max(self.cum[i] + u * self.seg_len[i], self.progress)
            p, _ = self._point_at(s)
            d = float(np.hypot(*(p - pos)))
            if d < best_d - 1e-12:
                best_s, best_d = s, d
            if self.cum[i] > self.progress + 4 * _LOOKAHEAD:
                break
        return best_s

    def stick_command(self, pos: np.ndarray, vel: np.ndarray) -> tuple[np.ndarray, bool]:
        self.progress = self._project(pos)
        target, speed = self._point_at(self.progress + _LOOKAHEAD)
        end, _ = self._point_at(self.total)
        to_end = float(np.hypot(*(end - pos)))
        if self.total - self.progress < _LOOKAHEAD:
            # final approach: slow down proportionally to the remaining distance
            speed = min(speed, 0.5 * to_end)
            target = end
            if to_end < _STOP_RADIUS:
                speed = 0.0
        d = target - pos
        n = float(np.hypot(*d))
        desired = d / n * speed if n > 1e-9 else np.zeros(2)
        boost = speed > 0.9
        cmd = desired + _FEEDBACK * (desired - vel)
        if boost:
            cmd = cmd / 2.0
        return cmd, boost

    def act(self, pos: np.ndarray, vel: np.ndarray, jitter: np.ndarray | None = None) -> Action:
        cmd, boost = self.stick_command(pos, vel)
        if jitter is not None:
            cmd = cmd + jitter
        sticks = [discretize_stick(cmd[0]), discretize_stick(cmd[1])]
        sticks += [N_BINS // 2] * (self.n_sticks - 2)
        buttons = [False] * self.n_buttons
        if self.n_buttons >= 1:
            buttons[0] = boost
        return Action(tuple(buttons), tuple(sticks))


def _loop_script() -> list[tuple[int, int]]:
    """Open-loop stick bins for the loop scenario.

    The loop section is a closed square whose per-axis bin offsets sum to
    zero, followed by a rest that lets the velocity decay, so the agent comes
    back to its starting point.
    """
    c = N_BINS // 2
    hi, lo = c + 4, c - 4
    script = []
    script += [(c, hi)] * 9  # north
    script += [(lo, c)] * 9  # west
    script += [(c, lo)] * 9  # south
    script += [(hi, c)] * 9  # east
    script += [(c, c)] * 28  # settle back onto the start
    script += [(c + 3, c)] * 30  # leave eastwards
    script += [(c, c)] * 6
    return script


def _wrap_sticks(bins: tuple[int, int], n_buttons: int, n_sticks: int, pressed: bool = False) -> Action:
    buttons = [False] * n_buttons
    if n_buttons >= 2:
        buttons[1] = pressed
    return Action(tuple(buttons), tuple(bins) + (N_BINS // 2,) * (n_sticks - 2))


def _expert_length(name: str) -> int:
    return {
        "crossroads-left": 100,
        "crossroads-right": 100,
        "crossroads-mid": 100,
        "winding-0": 130,
        "winding-1": 134,
        "winding-2": 130,
        "pause-then-go": 96,
    }[name]


def run_expert(
    name: str,
    cfg: EnvConfig = EnvConfig(),
    rng: np.random.Generator | None = None,
    jitter: float = 0.0,
    seed: int | None = None,
) -> Trajectory:
    """Roll out the scripted expert for a scenario in the noise-free environment.

    With ``jitter > 0`` every stick command is perturbed by U(-jitter, jitter)
    before binning (script-driven scenarios perturb the scripted stick values).
    """
    det_cfg = replace(cfg, stochasticity=StochasticitySpec())
    state = EnvState.initial((0.0, 0.0))
    nb, ns = cfg.n_buttons, cfg.n_sticks
    steps = []

    def noisy(bins: tuple[int, int]) -> tuple[int, int]:
        if rng is None or jitter <= 0:
            return bins
        vals = [dequantize_stick(b) + rng.uniform(-jitter, jitter) for b in bins]
        return discretize_stick(vals[0]), discretize_stick(vals[1])

    def record(t: int, action: Action):
        steps.append(TrajectoryStep(t, state.position, tuple(observe(state)), action))

    if name == "loop":
        for t, bins in enumerate(_loop_script()):
            action = _wrap_sticks(noisy(bins), nb, ns)
            record(t, action)
            state = step(state, action, det_cfg)
    else:
        expert = WaypointExpert(_PATHS[name], nb, ns)
        hold = PAUSE_STEPS if name == "pause-then-go" else 0
        for t in range(_expert_length(name)):
            if t < hold:
                action = _wrap_sticks(noisy((N_BINS // 2, N_BINS // 2)), nb, ns, pressed=True)
            else:
                jit = rng.uniform(-jitter, jitter, size=2) if rng is not None and jitter > 0 else None
                action = expert.act(state.pos, state.vel, jit)
            record(t, action)
            state = step(state, action, det_cfg)
    return Trajectory(tuple(steps), scenario=name, seed=seed)


def make_reference(scenario: Scenario | str, seed: int = 0, cfg: EnvConfig = EnvConfig()) -> Trajectory:
    """Noise-free expert demonstration for ``scenario``.

    The expert is deterministic, so ``seed`` is only recorded in the metadata.
    """
    name = scenario.name if isinstance(scenario, Scenario) else Scenario(scenario).name
    return run_expert(name, cfg, seed=seed)


def generate_dataset(
    scenarios,
    n_per_scenario: int,
    seed: int,
    cfg: EnvConfig = EnvConfig(),
    jitter: float = 0.1,
) -> list[Trajectory]:
    """Jittered expert demonstrations, ``n_per_scenario`` for each scenario."""
    if n_per_scenario < 1:
        raise InvalidInputError("n_per_scenario must be >= 1")
    out = []
    for si, sc in enumerate(scenarios):
        name = sc.name if isinstance(sc, Scenario) else Scenario(sc).name
        for i in range(n_per_scenario):
            traj_seed = seed * 100_003 + si * 1_009 + i
            rng = np.random.default_rng(traj_seed)
            out.append(run_expert(name, cfg, rng=rng, jitter=jitter, seed=traj_seed))
    return out


def replay(
    ref: Trajectory,
    cfg: EnvConfig = EnvConfig(),
    seed: int | None = None,
) -> Trajectory:
    """Replay the recorded actions of ``ref`` open-loop from its first position."""
    state = EnvState.initial(ref.positions()[0], seed)
    steps = []
    for t, s in enumerate(ref.steps):
        steps.append(TrajectoryStep(t, state.position, tuple(observe(state)), s.action))
        state = step(state, s.action, cfg)
    return Trajectory(tuple(steps), scenario=ref.scenario, seed=seed)
