"""Future-conditioning strategies: which reference index conditions each step.

Static and Closest are memoryless. Radius and InnerOuter keep a pointer into
the reference that only moves forward; ``select`` hands out the current
pointer and then updates it from the agent's position, so an agent that
tracks the reference perfectly is conditioned on ``t + K`` exactly as during
training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from .core import InvalidInputError, Position, Trajectory


@dataclass(frozen=True)
class Static:
    K: int = 0

    def __post_init__(self):
        _check_k(self.K)


@dataclass(frozen=True)
class Closest:
    K: int = 0

    def __post_init__(self):
        _check_k(self.K)


@dataclass(frozen=True)
class Radius:
    r: float
    K: int = 0

    def __post_init__(self):
        _check_k(self.K)
        if not self.r > 0:
            raise InvalidInputError("radius must be > 0")


@dataclass(frozen=True)
class InnerOuter:
    r_in: float
    r_out: float
    K: int = 0

    def __post_init__(self):
        _check_k(self.K)
        if not 0 <= self.r_in < self.r_out:
            raise InvalidInputError("need 0 <= r_in < r_out")


SelectorKind = Union[Static, Closest, Radius, InnerOuter]


def _check_k(K):
    if int(K) != K or K < 0:
        raise InvalidInputError(f"K must be a non-negative integer, got {K!r}")


def make_kind(strategy: str, K: int = 0, r: float = 1.5, r_in: float = 0.5, r_out: float = 2.0) -> SelectorKind:
    if strategy == "static":
        return Static(K)
    if strategy == "closest":
        return Closest(K)
    if strategy == "radius":
        return Radius(r, K)
    if strategy in ("inner_outer", "inner-outer"):
        return InnerOuter(r_in, r_out, K)
    raise InvalidInputError(f"unknown strategy {strategy!r}")


def kind_label(kind: SelectorKind) -> str:
    if isinstance(kind, Static):
        return f"static(K={kind.K})"
    if isinstance(kind, Closest):
        return f"closest(K={kind.K})"
    if isinstance(kind, Radius):
        return f"radius(r={kind.r:g},K={kind.K})"
    return f"inner_outer(r_in={kind.r_in:g},r_out={kind.r_out:g},K={kind.K})"


@dataclass
class TraceEntry:
    t: int
    pos: tuple[float, float, float]
    fut_idx: int
    dist: float


@dataclass
class SelectorTrace:
    entries: list[TraceEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    @property
    def fut_indices(self) -> list[int]:
        return [e.fut_idx for e in self.entries]

    def to_csv_rows(self) -> list[tuple]:
        return [(e.t, e.fut_idx, repr(e.dist)) for e in self.entries]


@dataclass(frozen=True)
class SelectorState:
    kind: SelectorKind
    fut_idx: int
    ref_pos: np.ndarray = field(repr=False, compare=False)

    @property
    def T(self) -> int:
        return len(self.ref_pos)


def _as_xyz(pos) -> np.ndarray:
    if isinstance(pos, Position):
        return pos.as_array()
    arr = np.zeros(3)
    p = np.asarray(pos, dtype=float)
    arr[: len(p)] = p
    return arr


def _ref_positions(ref) -> np.ndarray:
    if isinstance(ref, Trajectory):
        return ref.positions()
    arr = np.asarray(ref, dtype=float)
    if arr.ndim != 2 or len(arr) == 0:
        raise InvalidInputError("reference must be a non-empty sequence of positions")
    if arr.shape[1] < 3:
        arr = np.hstack([arr, np.zeros((len(arr), 3 - arr.shape[1]))])
    return arr


def _dist(ref_pos: np.ndarray, i: int, p: np.ndarray) -> float:
    d = ref_pos[i] - p
    return math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])


def initial_state(kind: SelectorKind, ref) -> SelectorState:
    ref_pos = _ref_positions(ref)
    return SelectorState(kind, min(kind.K, len(ref_pos) - 1), ref_pos)


def static_select(t_current: int, K: int, T: int) -> int:
    if t_current < 0:
        raise InvalidInputError("t_current must be >= 0")
    return min(t_current + K, T - 1)


def closest_select(ref, agent_pos, K: int) -> int:
    """Index of the nearest reference point (first one on ties) plus ``K``."""
    ref_pos = _ref_positions(ref)
    d = np.sqrt(np.sum((ref_pos - _as_xyz(agent_pos)) ** 2, axis=1))
    return min(int(np.argmin(d)) + K, len(ref_pos) - 1)


def radius_update(state: SelectorState, agent_pos) -> SelectorState:
    if not isinstance(state.kind, Radius):
        raise InvalidInputError("radius_update needs a Radius selector")
    p = _as_xyz(agent_pos)
    if _dist(state.ref_pos, state.fut_idx, p) <= state.kind.r:
        return replace(state, fut_idx=min(state.fut_idx + 1, state.T - 1))
    return state


def inner_outer_update(state: SelectorState, agent_pos) -> SelectorState:
    if not isinstance(state.kind, InnerOuter):
        raise InvalidInputError("inner_outer_update needs an InnerOuter selector")
    p = _as_xyz(agent_pos)
    kind, last = state.kind, state.T - 1
    idx = state.fut_idx
    d = _dist(state.ref_pos, idx, p)
    if d < kind.r_in:
        while idx < last and _dist(state.ref_pos, idx, p) < kind.r_in:
            idx += 1
    elif d <= kind.r_out:
        idx = min(idx + 1, last)
    if idx == state.fut_idx:
        return state
    return replace(state, fut_idx=idx)


def select(
    state: SelectorState,
    t_current: int,
    agent_pos,
    trace: SelectorTrace | None = None,
) -> tuple[int, SelectorState]:
    """Conditioning index for this step and the selector state for the next."""
    kind = state.kind
    p = _as_xyz(agent_pos)
    if isinstance(kind, Static):
        idx, new = static_select(t_current, kind.K, state.T), state
    elif isinstance(kind, Closest):
        idx, new = closest_select(state.ref_pos, p, kind.K), state
    elif isinstance(kind, Radius):
        idx, new = state.fut_idx, radius_update(state, p)
    elif isinstance(kind, InnerOuter):
        idx, new = state.fut_idx, inner_outer_update(state, p)
    else:
        raise InvalidInputError(f"unknown selector kind {kind!r}")
    if trace is not None:
        trace.entries.append(TraceEntry(t_current, tuple(p), idx, _dist(state.ref_pos, idx, p)))
    return idx, new


def run_selector(kind: SelectorKind, ref, positions) -> SelectorTrace:
    """Drive a selector over a fixed stream of agent positions."""
    state = initial_state(kind, ref)
    trace = SelectorTrace()
    for t, p in enumerate(positions):
        _, state = select(state, t, p, trace)
    return trace
