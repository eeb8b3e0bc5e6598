"""Weighted aggregation kernels for client uploads.

Every function takes an ``(M, p)`` array of points and a length-``M`` weight
vector summing to one. Reductions over clients run in ascending row order
(numpy's axis-0 add reduces row by row), so results are reproducible bit for
bit for a fixed input order.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

DEFAULT_SMOOTHING = 1e-12
DEFAULT_MAX_ITERS = 10_000
_WEIGHT_TOL = 1e-12
_STALL_WINDOW = 5
_RESOLUTION = 64 * np.finfo(float).eps
# relative margin below which a vertex optimality test counts as a tie
_TIE_MARGIN = 1e-9


class AggregationError(ValueError):
    """Malformed point set or aggregator configuration."""


@dataclass(frozen=True)
class GeomedResult:
    point: np.ndarray
    objective: float
    iterations: int
    achieved_gap: float
    # False when max_iters ran out before the stopping rule fired.
    certified: bool = True


def check_point_set(points, weights) -> tuple[np.ndarray, np.ndarray]:
    pts = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
        raise AggregationError(f"expected a non-empty (M, p) point array, got shape {pts.shape}")
    if w.shape != (pts.shape[0],):
        raise AggregationError(f"{pts.shape[0]} points but weights have shape {w.shape}")
    if np.any(w < 0):
        raise AggregationError("weights must be non-negative")
    if abs(w.sum() - 1.0) > _WEIGHT_TOL * max(1, len(w)):
        raise AggregationError(f"weights must sum to 1, got {w.sum()!r}")
    return pts, w


def _weighted_sum(coef: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return (coef[:, None] * pts).sum(axis=0)


def weighted_mean(points, weights) -> np.ndarray:
    pts, w = check_point_set(points, weights)
    return _weighted_sum(w, pts)


def _sorted_columns(pts: np.ndarray, w: np.ndarray):
    order = np.argsort(pts, axis=0, kind="stable")
    values = np.take_along_axis(pts, order, axis=0)
    cum = np.cumsum(w[order], axis=0)
    return values, w[order], cum


def coordinate_median(points, weights) -> np.ndarray:
    """Per-coordinate weighted median, lower value on an exact 0.5 split."""
    pts, w = check_point_set(points, weights)
    values, _, cum = _sorted_columns(pts, w)
    idx = np.argmax(cum >= 0.5 - _WEIGHT_TOL, axis=0)
    return values[idx, np.arange(pts.shape[1])]


def trimmed_mean(points, weights, trim_fraction: float) -> np.ndarray:
    """Per-coordinate mean after dropping ``trim_fraction`` of weight from each tail.

    Points straddling a cut keep only the part of their weight inside
    ``[trim_fraction, 1 - trim_fraction]``.
    """
    if not 0.0 <= trim_fraction < 0.5:
        raise AggregationError(f"trim_fraction must lie in [0, 0.5), got {trim_fraction}")
    pts, w = check_point_set(points, weights)
    if trim_fraction == 0.0:
        return _weighted_sum(w, pts)
    values, sw, cum = _sorted_columns(pts, w)
    lo, hi = trim_fraction, 1.0 - trim_fraction
    kept = np.clip(np.minimum(cum, hi) - np.maximum(cum - sw, lo), 0.0, None)
    total = kept.sum(axis=0)
    if np.any(total <= 0):
        raise AggregationError("no weight left after trimming")
    return (kept * values).sum(axis=0) / total


def geomed_objective(y: np.ndarray, points, weights) -> float:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return float(np.dot(weights, np.linalg.norm(pts - y, axis=1)))


def weiszfeld_step(current, points, weights, smoothing: float = DEFAULT_SMOOTHING) -> np.ndarray:
    """One inverse-distance-weighted averaging step.

    Distances are floored at ``smoothing`` so an iterate sitting on an input
    point stays finite.
    """
    if smoothing <= 0:
        raise AggregationError("smoothing must be positive")
    pts, w = check_point_set(points, weights)
    return _step(np.asarray(current, dtype=float), pts, w, smoothing)


def _step(y, pts, w, smoothing):
    d = np.maximum(np.linalg.norm(pts - y, axis=1), smoothing)
    coef = w / d
    return _weighted_sum(coef, pts) / coef.sum()


def _anchor_if_optimal(y, pts, w) -> np.ndarray | None:
    """Return the input point nearest ``y`` if it is the unique minimizer.

    A data point ``x`` minimizes the weighted distance sum iff the pull of the
    other points, ``||sum_i w_i (x - z_i)/||x - z_i|| ||``, does not exceed the
    weight sitting at ``x``; with strict inequality it is the only minimizer.
    Weiszfeld only approaches such points at a linear (or worse) rate, so this
    snaps to them exactly. Ties, including ties blurred by rounding, leave
    the iterate alone, since it is then already one of several minimizers.
    """
    x = pts[np.argmin(np.linalg.norm(pts - y, axis=1))]
    diff = x - pts
    dist = np.linalg.norm(diff, axis=1)
    at_x = dist == 0.0
    own = w[at_x].sum()
    others = ~at_x
    if not np.any(others):
        return x.copy()
    pull = _weighted_sum(w[others] / dist[others], diff[others])
    if np.linalg.norm(pull) < own * (1.0 - _TIE_MARGIN):
        return x.copy()
    return None


def canonical_order(pts: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Permutation sorting (point, weight) pairs by their byte representation."""
    keys = [pts[i].tobytes() + w[i : i + 1].tobytes() for i in range(len(w))]
    return np.array(sorted(range(len(w)), key=keys.__getitem__), dtype=int)


def _remaining_decrease(history, noise: float) -> float:
    """Last decrease plus a geometric-series estimate of all later ones.

    Uses the slowest contraction ratio seen in the window, so slow linear
    convergence is not mistaken for stalling. Steps at or below ``noise`` are
    rounding jitter and count as converged.
    """
    steps = -np.diff(np.asarray(history))
    last = abs(steps[-1])
    if last <= noise:
        return 0.0
    ratios = [abs(b) / a for a, b in zip(steps[:-1], steps[1:]) if a > noise]
    if not ratios or max(ratios) >= 1.0:
        return np.inf
    return last / (1.0 - max(ratios))


def geometric_median(
    points,
    weights,
    epsilon: float = 1e-5,
    max_iters: int = DEFAULT_MAX_ITERS,
    smoothing: float = DEFAULT_SMOOTHING,
) -> GeomedResult:
    """Epsilon-approximate weighted geometric median by Weiszfeld iteration.

    Starts from the weighted mean. Stops once the objective decrease over the
    last five steps, and the last decrease extrapolated geometrically at the
    slowest recent contraction ratio, are both below ``epsilon / 10`` (or below
    the objective's floating-point resolution, if that is larger).
    Input pairs are put in a canonical order first, so the output does not
    depend on how clients were listed. If the cap is hit the best iterate is
    returned with ``certified=False``.
    """
    if epsilon <= 0:
        raise AggregationError("epsilon must be positive")
    if max_iters < 1:
        raise AggregationError("max_iters must be at least 1")
    pts, w = check_point_set(points, weights)
    order = canonical_order(pts, w)
    pts, w = pts[order], w[order]

    y = _weighted_sum(w, pts)
    obj = geomed_objective(y, pts, w)
    best_y, best_obj = y, obj
    history = deque([obj], maxlen=_STALL_WINDOW + 1)
    tail = np.inf
    certified = False
    iterations = 0
    while iterations < max_iters:
        y_next = _step(y, pts, w, smoothing)
        obj_next = geomed_objective(y_next, pts, w)
        iterations += 1
        y, obj = y_next, obj_next
        if obj < best_obj:
            best_y, best_obj = y, obj
        history.append(obj)
        # absolute tolerances below the objective's float resolution are unreachable
        noise = _RESOLUTION * obj
        tol = max(epsilon / 10.0, noise)
        tail = _remaining_decrease(history, noise)
        if len(history) > _STALL_WINDOW and history[0] - history[-1] < tol and tail < tol:
            certified = True
            break

    anchor = _anchor_if_optimal(best_y, pts, w)
    if anchor is not None:
        anchor_obj = geomed_objective(anchor, pts, w)
        if anchor_obj <= best_obj:
            return GeomedResult(anchor, anchor_obj, iterations, 0.0, True)
    return GeomedResult(best_y, best_obj, iterations, float(tail), certified)
