"""Domain types, the controller action codec and trajectory I/O."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

N_BINS = 11
DEFAULT_BUTTONS = 2
DEFAULT_STICKS = 2


class InvalidInputError(ValueError):
    """Raised when a value falls outside an operation's domain."""


@dataclass(frozen=True)
class Position:
    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.x, self.y, self.z)):
            raise InvalidInputError(f"non-finite position {self!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def from_seq(cls, seq: Sequence[float]) -> "Position":
        vals = [float(v) for v in seq]
        if len(vals) == 2:
            vals.append(0.0)
        if len(vals) != 3:
            raise InvalidInputError(f"position needs 2 or 3 components, got {len(vals)}")
        return cls(*vals)


@dataclass(frozen=True)
class Action:
    """Button states plus one 11-way bin index per stick axis."""

    buttons: tuple[bool, ...]
    sticks: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "buttons", tuple(bool(b) for b in self.buttons))
        object.__setattr__(self, "sticks", tuple(int(s) for s in self.sticks))
        for s in self.sticks:
            if not 0 <= s < N_BINS:
                raise InvalidInputError(f"stick bin {s} outside [0, {N_BINS - 1}]")

    @classmethod
    def noop(cls, n_buttons: int = DEFAULT_BUTTONS, n_sticks: int = DEFAULT_STICKS) -> "Action":
        return cls((False,) * n_buttons, (N_BINS // 2,) * n_sticks)

    @property
    def width(self) -> int:
        return len(self.buttons) + len(self.sticks)


@dataclass(frozen=True)
class TrajectoryStep:
    t: int
    pos: Position
    obs: tuple[float, ...]
    action: Action

    def __post_init__(self):
        object.__setattr__(self, "obs", tuple(float(v) for v in self.obs))


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[TrajectoryStep, ...]
    scenario: str = ""
    seed: int | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    def __len__(self) -> int:
        return len(self.steps)

    def __getitem__(self, i: int) -> TrajectoryStep:
        return self.steps[i]

    @property
    def n_buttons(self) -> int:
        return len(self.steps[0].action.buttons) if self.steps else 0

    @property
    def n_sticks(self) -> int:
        return len(self.steps[0].action.sticks) if self.steps else 0

    @property
    def obs_dim(self) -> int:
        return len(self.steps[0].obs) if self.steps else 0

    def positions(self) -> np.ndarray:
        """(T, 3) array of positions, cached."""
        if "pos" not in self._cache:
            arr = np.array([[s.pos.x, s.pos.y, s.pos.z] for s in self.steps], dtype=float)
            arr.setflags(write=False)
            self._cache["pos"] = arr
        return self._cache["pos"]

    def observations(self) -> np.ndarray:
        if "obs" not in self._cache:
            arr = np.array([s.obs for s in self.steps], dtype=float).reshape(len(self.steps), -1)
            arr.setflags(write=False)
            self._cache["obs"] = arr
        return self._cache["obs"]

    def encoded_actions(self) -> np.ndarray:
        if "act" not in self._cache:
            arr = np.array([encode_action(s.action) for s in self.steps], dtype=float)
            arr = arr.reshape(len(self.steps), -1)
            arr.setflags(write=False)
            self._cache["act"] = arr
        return self._cache["act"]


def discretize_stick(v: float) -> int:
    """Map a stick value to one of 11 uniform bins over [-1, 1].

    Values outside the range are clamped; the last bin is closed on the right.
    """
    v = float(v)
    if not math.isfinite(v):
        raise InvalidInputError(f"non-finite stick value {v}")
    v = min(1.0, max(-1.0, v))
    return min(N_BINS - 1, math.floor((v + 1.0) * N_BINS / 2.0))


def dequantize_stick(b: int) -> float:
    """Center of stick bin ``b``."""
    if isinstance(b, bool) or int(b) != b or not 0 <= b < N_BINS:
        raise InvalidInputError(f"stick bin {b!r} outside [0, {N_BINS - 1}]")
    return -1.0 + (int(b) + 0.5) * (2.0 / N_BINS)


def encode_action(a: Action) -> np.ndarray:
    """Flat vector: buttons as 0/1 followed by dequantized stick values."""
    vec = [1.0 if b else 0.0 for b in a.buttons]
    vec.extend(dequantize_stick(s) for s in a.sticks)
    return np.array(vec, dtype=float)


def decode_action(vec: Sequence[float], n_buttons: int) -> Action:
    vec = list(vec)
    buttons = tuple(v >= 0.5 for v in vec[:n_buttons])
    sticks = tuple(discretize_stick(v) for v in vec[n_buttons:])
    return Action(buttons, sticks)


def validate_trajectory(tr: Trajectory) -> list[str]:
    """Return every violation found; an empty list means the trajectory is valid."""
    violations = []
    if len(tr.steps) == 0:
        return ["empty trajectory"]
    dim = len(tr.steps[0].obs)
    n_buttons, n_sticks = tr.n_buttons, tr.n_sticks
    for i, step in enumerate(tr.steps):
        if step.t != i:
            violations.append(f"non-contiguous timestep at index {i} (t={step.t})")
        if not all(math.isfinite(c) for c in (step.pos.x, step.pos.y, step.pos.z)):
            violations.append(f"non-finite position at step {i}")
        if len(step.obs) != dim:
            violations.append(f"obs dimension {len(step.obs)} != {dim} at step {i}")
        if not all(math.isfinite(v) for v in step.obs):
            violations.append(f"non-finite observation at step {i}")
        if len(step.action.buttons) != n_buttons or len(step.action.sticks) != n_sticks:
            violations.append(f"action shape mismatch at step {i}")
    return violations


# JSONL trajectory files: one header line, then one line per step.

def trajectory_to_lines(tr: Trajectory) -> list[str]:
    header = {
        "scenario": tr.scenario,
        "seed": tr.seed,
        "obs_dim": tr.obs_dim,
        "buttons": tr.n_buttons,
        "sticks": tr.n_sticks,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for s in tr.steps:
        rec = {
            "t": s.t,
            "pos": [s.pos.x, s.pos.y, s.pos.z],
            "obs": list(s.obs),
            "buttons": list(s.action.buttons),
            "sticks": list(s.action.sticks),
        }
        lines.append(json.dumps(rec, sort_keys=True))
    return lines


def write_trajectory(tr: Trajectory, path: str | Path) -> None:
    # json.dumps uses repr() for floats, which round-trips exactly
    Path(path).write_text("\n".join(trajectory_to_lines(tr)) + "\n")


def trajectory_from_lines(lines: Iterable[str]) -> Trajectory:
    it = (ln for ln in lines if ln.strip())
    try:
        header = json.loads(next(it))
    except StopIteration:
        raise InvalidInputError("empty trajectory file") from None
    steps = []
    for rec in map(json.loads, it):
        steps.append(
            TrajectoryStep(
                t=int(rec["t"]),
                pos=Position.from_seq(rec["pos"]),
                obs=tuple(rec["obs"]),
                action=Action(tuple(rec["buttons"]), tuple(rec["sticks"])),
            )
        )
    tr = Trajectory(tuple(steps), scenario=header.get("scenario", ""), seed=header.get("seed"))
    if steps and (tr.n_buttons != header["buttons"] or tr.n_sticks != header["sticks"]):
        raise InvalidInputError("action widths disagree with header")
    if steps and tr.obs_dim != header["obs_dim"]:
        raise InvalidInputError("obs dimension disagrees with header")
    return tr


def read_trajectory(path: str | Path) -> Trajectory:
    with open(path) as fh:
        try:
            return trajectory_from_lines(fh)
        except (KeyError, json.JSONDecodeError, TypeError) as exc:
            raise InvalidInputError(f"{path}: malformed trajectory file ({exc})") from exc
