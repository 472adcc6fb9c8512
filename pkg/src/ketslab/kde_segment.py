"""One-dimensional Gaussian KDE over trust scores and honest-segment selection.

The trust scores of the sampled clients are smoothed with a Gaussian kernel on
a fixed grid ``[0, max(scores) + 1]``; the last local minimum of that curve is
the cut, and clients at or above it form the honest segment.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EmptyAggregateError, InsufficientSamplesError

GRID_POINTS = 1000
BANDWIDTH_SENTINEL = 1e-9
DEFAULT_QUANTILE = 0.3

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class DensityCurve:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float


def estimate_bandwidth(scores, quantile=DEFAULT_QUANTILE):
    """Mean over points of the distance to the farthest of their nearest neighbours.

    ``n_neighbors = max(1, floor(quantile * n))`` other points are considered
    (capped at ``n - 1``). Degenerate inputs, where every such distance is
    zero, return ``BANDWIDTH_SENTINEL``.
    """
    x = np.asarray(scores, dtype=np.float64).ravel()
    n = x.size
    if n == 0:
        raise InsufficientSamplesError("cannot estimate a bandwidth from no scores")
    if not 0.0 < quantile <= 1.0:
        raise ValueError(f"quantile must lie in (0, 1], got {quantile}")
    if n == 1:
        return BANDWIDTH_SENTINEL
    k = min(max(1, int(np.floor(quantile * n))), n - 1)
    dist = np.abs(x[:, None] - x[None, :])
    np.fill_diagonal(dist, np.inf)
    kth = np.sort(dist, axis=1)[:, k - 1]
    bw = float(kth.mean())
    if bw <= BANDWIDTH_SENTINEL:
        return BANDWIDTH_SENTINEL
    return bw


def density_grid(scores):
    x = np.asarray(scores, dtype=np.float64)
    return np.linspace(0.0, float(x.max()) + 1.0, GRID_POINTS)


def kde_at(points, scores, bandwidth):
    """Evaluate the Gaussian KDE of ``scores`` at ``points``."""
    x = np.asarray(scores, dtype=np.float64).ravel()
    pts = np.asarray(points, dtype=np.float64)
    z = (pts[:, None] - x[None, :]) / bandwidth
    return np.exp(-0.5 * z * z).sum(axis=1) * (_INV_SQRT_2PI / (x.size * bandwidth))


def kde_density(scores, bandwidth):
    x = np.asarray(scores, dtype=np.float64).ravel()
    if x.size == 0:
        raise InsufficientSamplesError("KDE needs at least one score")
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    grid = density_grid(x)
    return DensityCurve(grid=grid, density=kde_at(grid, x, bandwidth), bandwidth=float(bandwidth))


def find_local_minima(curve):
    """Grid values where the density strictly falls and then strictly rises.

    Flat stretches (including underflowed zero tails) never count.
    """
    diff = np.diff(curve.density)
    idx = np.nonzero((diff[:-1] < 0) & (diff[1:] > 0))[0] + 1
    return [float(curve.grid[i]) for i in idx]


def honest_boundary(scores, quantile=DEFAULT_QUANTILE):
    """Return the segmentation cut for ``scores``, or None when no valley exists."""
    bw = estimate_bandwidth(scores, quantile)
    if bw <= BANDWIDTH_SENTINEL:
        return None
    minima = find_local_minima(kde_density(scores, bw))
    if not minima:
        return None
    return minima[-1]


def segment_honest(scores, sampled, quantile=DEFAULT_QUANTILE):
    """Split ``sampled`` client ids by the last density valley of their trust scores.

    Returns the ids (in ``sampled`` order) whose score is at or above the cut;
    every sampled id when the density has no valley.
    """
    sampled = list(sampled)
    if not sampled:
        raise EmptyAggregateError("no sampled clients to segment")
    values = [float(scores[c]) for c in sampled]
    cut = honest_boundary(values, quantile)
    if cut is None:
        return sampled
    return [c for c, s in zip(sampled, values) if s >= cut]
