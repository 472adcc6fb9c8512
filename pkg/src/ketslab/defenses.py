"""Aggregation rules: FedAvg, Krum, Trim-Mean, Median, FLTrust, KeTS and the KeTSv2 filter.

Every rule reads one round's updates from an :class:`AggregationContext` and
returns a single global update vector. Client ids are iterated in ascending
order everywhere, which is also the tie-break order.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EmptyAggregateError, InsufficientClientsError
from .kde_segment import segment_honest
from .training import compute_update, local_train
from .trust import DEFAULT_BETA
from .vector_core import cosine_similarity, stack, weighted_mean


@dataclass
class AggregationContext:
    updates: dict
    dataset_sizes: dict = field(default_factory=dict)
    ledger: object = None
    previous_global_update: np.ndarray = None
    root_dataset: object = None
    assumed_attackers: int = 0
    global_model: object = None

    def ids(self):
        return sorted(self.updates)

    def matrix(self, ids=None):
        ids = self.ids() if ids is None else ids
        if not ids:
            raise EmptyAggregateError("no updates to aggregate")
        return stack([self.updates[c] for c in ids])

    def size(self, cid):
        return self.dataset_sizes.get(cid, 1)


def fed_avg(ctx, ids=None):
    """Dataset-size weighted mean of the updates (restricted to ``ids`` if given)."""
    ids = ctx.ids() if ids is None else sorted(ids)
    if not ids:
        raise EmptyAggregateError("no updates to aggregate")
    return weighted_mean([ctx.updates[c] for c in ids], [ctx.size(c) for c in ids])


def krum_scores(updates, c):
    """Krum score per update: summed squared distance to its ``n - c - 2`` nearest others."""
    u = stack(updates)
    n = u.shape[0]
    if n < c + 3:
        raise InsufficientClientsError(f"krum needs n >= c + 3, got n={n}, c={c}")
    diff = u[:, None, :] - u[None, :, :]
    d = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d, np.inf)
    m = n - c - 2
    return np.sort(d, axis=1)[:, :m].sum(axis=1)


def krum_index(updates, c):
    # argmin returns the first minimum, i.e. the lowest position
    return int(np.argmin(krum_scores(updates, c)))


def krum_select(ctx):
    ids = ctx.ids()
    if not ids:
        raise EmptyAggregateError("no updates to aggregate")
    idx = krum_index([ctx.updates[c] for c in ids], ctx.assumed_attackers)
    return np.array(ctx.updates[ids[idx]], dtype=np.float64)


def trim_mean(ctx, k=None):
    """Coordinate-wise mean after dropping the ``k`` lowest and ``k`` highest values."""
    k = ctx.assumed_attackers if k is None else k
    u = ctx.matrix()
    n = u.shape[0]
    if n <= 2 * k:
        raise InsufficientClientsError(f"trim_mean needs n > 2k, got n={n}, k={k}")
    s = np.sort(u, axis=0)
    return s[k:n - k].mean(axis=0)


def coordinate_median(ctx, ids=None):
    ids = ctx.ids() if ids is None else sorted(ids)
    return np.median(ctx.matrix(ids), axis=0)


def fltrust_combine(updates, server_update):
    """Cosine-clipped, norm-matched weighted average of ``updates`` around ``server_update``."""
    g0 = np.asarray(server_update, dtype=np.float64)
    g0_norm = np.linalg.norm(g0)
    total = 0.0
    acc = np.zeros_like(g0)
    if g0_norm == 0.0:
        return acc
    for u in updates:
        u = np.asarray(u, dtype=np.float64)
        u_norm = np.linalg.norm(u)
        if u_norm == 0.0:
            continue
        ts = max(0.0, cosine_similarity(u, g0))
        if ts == 0.0:
            continue
        acc += ts * (g0_norm / u_norm) * u
        total += ts
    if total == 0.0:
        return acc
    return acc / total


def fltrust_server_update(global_model, root_dataset, epochs, batch_size, lr, momentum=0.0, seed=0):
    local = local_train(global_model, root_dataset, epochs, batch_size, lr, momentum, seed)
    return compute_update(local, global_model)


def fltrust_aggregate(ctx, epochs, batch_size, lr, momentum=0.0, seed=0):
    """FLTrust with the server update trained on ``ctx.root_dataset`` from ``ctx.global_model``."""
    if ctx.root_dataset is None or ctx.global_model is None:
        raise ConfigError("fltrust needs a root dataset and the current global model")
    g0 = fltrust_server_update(ctx.global_model, ctx.root_dataset, epochs, batch_size, lr, momentum, seed)
    return fltrust_combine([ctx.updates[c] for c in ctx.ids()], g0)


def kets_honest(ctx, beta=DEFAULT_BETA):
    """Update the ledger with this round's uploads and return the honest segment.

    Zero-trust clients are always dropped, even when the density has no valley.
    """
    if ctx.ledger is None:
        raise ConfigError("kets needs a trust ledger")
    ids = ctx.ids()
    if not ids:
        raise EmptyAggregateError("no sampled clients")
    for c in ids:
        ctx.ledger.observe(c, ctx.updates[c], beta)
    scores = {c: ctx.ledger.trust(c) for c in ids}
    honest = segment_honest(scores, ids)
    return [c for c in honest if scores[c] > 0.0]


def kets_aggregate(ctx, beta=DEFAULT_BETA):
    """Returns ``(global_update, honest_ids)``; aggregation is FedAvg over the honest segment."""
    honest = kets_honest(ctx, beta)
    if not honest:
        raise EmptyAggregateError("every sampled client ended with zero trust")
    return fed_avg(ctx, honest), honest


def kets_median_aggregate(ctx, beta=DEFAULT_BETA):
    honest = kets_honest(ctx, beta)
    if not honest:
        raise EmptyAggregateError("every sampled client ended with zero trust")
    return coordinate_median(ctx, honest), honest


def ketsv2_filter(honest_updates, previous_global_update, threshold=0.0, mu=0.1, dataset_sizes=None):
    """Drop updates pointing away from the momentum reference, then refresh it.

    Returns ``(kept, new_reference)`` where ``kept`` maps client id to update and
    ``new_reference = (1 - mu) * reference + mu * fedavg(kept)``. Without a usable
    reference the unweighted mean of the given updates seeds it.
    """
    ids = sorted(honest_updates)
    if not ids:
        raise EmptyAggregateError("no updates to filter")
    sizes = dataset_sizes or {}
    ref = None if previous_global_update is None else np.asarray(previous_global_update, dtype=np.float64)
    if ref is None or np.linalg.norm(ref) == 0.0:
        ref = stack([honest_updates[c] for c in ids]).mean(axis=0)
    if np.linalg.norm(ref) == 0.0:
        kept_ids = ids
    else:
        cos = {}
        for c in ids:
            u = np.asarray(honest_updates[c], dtype=np.float64)
            cos[c] = cosine_similarity(u, ref) if np.linalg.norm(u) > 0 else -np.inf
        kept_ids = [c for c in ids if cos[c] >= threshold]
        if not kept_ids:
            best = max(ids, key=lambda c: (cos[c], -c))
            kept_ids = [best]
    kept = {c: honest_updates[c] for c in kept_ids}
    update_new = weighted_mean([kept[c] for c in kept_ids], [sizes.get(c, 1) for c in kept_ids])
    new_reference = (1.0 - mu) * ref + mu * update_new
    return kept, new_reference


def ketsv2_aggregate(ctx, beta=DEFAULT_BETA, threshold=0.0, mu=0.1):
    """KeTS trust segmentation followed by the momentum-reference cosine filter.

    Returns ``(global_update, kept_ids, new_reference)``.
    """
    honest = kets_honest(ctx, beta)
    if not honest:
        raise EmptyAggregateError("every sampled client ended with zero trust")
    kept, new_ref = ketsv2_filter(
        {c: ctx.updates[c] for c in honest}, ctx.previous_global_update, threshold, mu, ctx.dataset_sizes
    )
    kept_ids = sorted(kept)
    return fed_avg(ctx, kept_ids), kept_ids, new_ref
