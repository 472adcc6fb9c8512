"""Flat update-vector arithmetic and the two abnormality metrics.

Every attack and defense in the lab works on flat float64 vectors of
model-parameter deltas; these helpers are the only place the basic
geometry (angle, distance, weighted averaging, spread) is defined.
"""

import numpy as np

from .errors import DimensionError, EmptyAggregateError, InsufficientSamplesError, ZeroNormError


def as_vector(v):
    """Return ``v`` as a 1-D float64 array, rejecting non-finite entries."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(f"expected a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("update vector contains NaN or Inf")
    return arr


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def stack(vs):
    """Stack a list of equal-length vectors into an (n, d) matrix."""
    if len(vs) == 0:
        raise EmptyAggregateError("no vectors to stack")
    arrs = [np.asarray(v, dtype=np.float64) for v in vs]
    d = arrs[0].shape
    for a in arrs:
        if a.shape != d or a.ndim != 1:
            raise DimensionError(f"shape mismatch: {a.shape} vs {d}")
    return np.vstack(arrs)


def cosine_similarity(a, b):
    a, b = _pair(a, b)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroNormError("cosine similarity is undefined for a zero-norm vector")
    cos = float(np.dot(a, b) / (na * nb))
    # rounding can push |cos| slightly past 1
    return min(1.0, max(-1.0, cos))


def l2_distance(a, b):
    a, b = _pair(a, b)
    return float(np.linalg.norm(a - b))


def weighted_mean(vs, ws):
    """Coordinate-wise average of ``vs`` with weights ``ws`` normalized to sum to 1."""
    if len(vs) == 0 or len(vs) != len(ws):
        raise EmptyAggregateError(f"need matching non-empty inputs, got {len(vs)} vectors and {len(ws)} weights")
    w = np.asarray(ws, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    total = w.sum()
    if total <= 0:
        raise EmptyAggregateError("weights sum to zero")
    return (w / total) @ stack(vs)


def coordinate_std(vs):
    """Per-coordinate population standard deviation (divides by n)."""
    if len(vs) < 2:
        raise InsufficientSamplesError(f"need at least 2 vectors, got {len(vs)}")
    return stack(vs).std(axis=0, ddof=0)
