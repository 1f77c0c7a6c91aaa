"""Trajectory similarity and progress metrics."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass

import numpy as np

from .core import InvalidInputError, Trajectory


@dataclass(frozen=True)
class CoverageCurve:
    radii: np.ndarray
    coverage: np.ndarray
    R: float


@dataclass(frozen=True)
class MetricReport:
    auc: float
    fi: float
    dtw: float
    R: float
    degenerate: bool = False


def _points(seq) -> np.ndarray:
    if isinstance(seq, Trajectory):
        return seq.positions()
    arr = np.asarray(
        [[p.x, p.y, p.z] if hasattr(p, "x") else list(p) for p in seq], dtype=float
    )
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return arr


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def dtw_accumulated(a, b) -> np.ndarray:
    """Full DTW accumulated-cost matrix with Euclidean point cost."""
    pa, pb = _points(a), _points(b)
    if len(pa) == 0 or len(pb) == 0:
        raise InvalidInputError("dtw needs two non-empty sequences")
    cost = _pairwise(pa, pb)
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row, prev = acc[i], acc[i - 1]
        c = cost[i - 1]
        for j in range(1, m + 1):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if row[j - 1] < best:
                best = row[j - 1]
            row[j] = c[j - 1] + best
    return acc


def dtw_distance(a, b) -> float:
    return float(dtw_accumulated(a, b)[-1, -1])


def dtw_path(a, b) -> list[tuple[int, int]]:
    """Optimal warping path as (i, j) index pairs, start to end."""
    acc = dtw_accumulated(a, b)
    i, j = acc.shape[0] - 1, acc.shape[1] - 1
    path = [(i - 1, j - 1)]
    while (i, j) != (1, 1):
        # prefer the diagonal, then the earlier-index moves, on ties
        moves = [(i - 1, j - 1), (i - 1, j), (i, j - 1)]
        i, j = min(moves, key=lambda ij: acc[ij])
        path.append((i - 1, j - 1))
    return path[::-1]


def _distances(rollout, ref) -> np.ndarray:
    x, xh = _points(ref), _points(rollout)
    if len(x) != len(xh):
        raise InvalidInputError(f"length mismatch: rollout {len(xh)} vs reference {len(x)}")
    return np.sqrt(np.sum((x - xh) ** 2, axis=1))


def coverage_rate(rollout, ref, r: float) -> float:
    """Fraction of timesteps where the rollout is strictly within ``r`` of the reference."""
    if r < 0:
        raise InvalidInputError("radius must be >= 0")
    d = _distances(rollout, ref)
    return float(np.count_nonzero(d < r)) / len(d)


def max_radius(ref) -> float:
    x = _points(ref)
    return float(np.max(np.sqrt(np.sum((x - x[0]) ** 2, axis=1))))


def _auc_from_distances(d: np.ndarray, R: float) -> tuple[float, bool]:
    if R == 0:
        return (1.0 if np.all(d == 0) else 0.0), True
    # each timestep contributes the length of [d_t, R) on which it is covered
    return float(np.mean(np.maximum(0.0, 1.0 - d / R))), False


def auc(rollout, ref, return_flag: bool = False):
    """Mean coverage rate over radii in [0, R], integrated exactly.

    ``R`` is the largest distance of any reference point from the reference
    start. With ``R == 0`` the result is 1 if the rollout never leaves the
    reference and 0 otherwise; ``return_flag`` also returns whether that
    degenerate case was hit.
    """
    if len(_points(ref)) < 2:
        raise InvalidInputError("reference needs at least two points")
    d = _distances(rollout, ref)
    value, degenerate = _auc_from_distances(d, max_radius(ref))
    return (value, degenerate) if return_flag else value


def dtw_aligned_auc(rollout, ref) -> float:
    """AUC variant that pairs points along the optimal DTW path instead of by timestep."""
    x, xh = _points(ref), _points(rollout)
    path = dtw_path(xh, x)
    d = np.array([math.dist(xh[i], x[j]) for i, j in path])
    return _auc_from_distances(d, max_radius(x))[0]


def coverage_curve(rollout, ref, n: int = 101) -> CoverageCurve:
    d = _distances(rollout, ref)
    R = max_radius(ref)
    radii = np.linspace(0.0, R, n) if n > 1 else np.array([R])
    cov = np.array([np.count_nonzero(d < r) / len(d) for r in radii])
    return CoverageCurve(radii, cov, R)


def future_index_ratio(trace, T: int) -> float:
    """Furthest monitor index reached, as a fraction of the last reference index."""
    idx = trace.fut_indices if hasattr(trace, "fut_indices") else list(trace)
    if not idx:
        raise InvalidInputError("empty trace")
    if T < 2:
        return 1.0
    return max(idx) / (T - 1)


def median(values) -> float:
    values = list(values)
    if not values:
        raise InvalidInputError("median of an empty list")
    return float(statistics.median(values))
