"""Per-client trust bookkeeping: penalties, trust decay and trust-weighted sampling."""

from dataclasses import dataclass

import numpy as np

from .errors import PoolExhaustedError, ZeroNormError
from .vector_core import cosine_similarity, l2_distance

DEFAULT_BETA = 0.1
INITIAL_TRUST = 1.0


def compute_penalty(u_t, u_prev, trust_prev, beta=DEFAULT_BETA):
    """Dissimilarity penalty between a client's two consecutive updates.

    Consistent direction (cos >= 0) costs ``(1 - cos) + ||u_t - u_prev||``.
    A reversal, or a zero-norm update, costs ``trust_prev / beta`` so that a
    single trust update drives the score to zero.
    """
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    try:
        cos = cosine_similarity(u_t, u_prev)
    except ZeroNormError:
        return trust_prev / beta
    if cos < 0:
        return trust_prev / beta
    return (1.0 - cos) + l2_distance(u_t, u_prev)


def update_trust(trust_prev, penalty, beta=DEFAULT_BETA):
    new = trust_prev - beta * penalty
    # beta * (t / beta) can round to just under t; that residue means zero
    if new <= 4 * np.spacing(trust_prev):
        return 0.0
    return new


@dataclass
class ClientRecord:
    dataset_size: int
    trust: float = INITIAL_TRUST
    last_update: np.ndarray = None

    @property
    def excluded(self):
        return self.trust <= 0.0


class TrustLedger:
    """Trust score, last received update and dataset size for every client."""

    def __init__(self, dataset_sizes, initial_trust=INITIAL_TRUST):
        self.records = {
            int(cid): ClientRecord(dataset_size=int(size), trust=float(initial_trust))
            for cid, size in dataset_sizes.items()
        }

    def __contains__(self, cid):
        return cid in self.records

    def __len__(self):
        return len(self.records)

    def client_ids(self):
        return sorted(self.records)

    def trust(self, cid):
        return self.records[cid].trust

    def dataset_size(self, cid):
        return self.records[cid].dataset_size

    def is_excluded(self, cid):
        return self.records[cid].excluded

    def active_ids(self):
        return [c for c in self.client_ids() if not self.records[c].excluded]

    def snapshot(self):
        """Copy of ``{client_id: trust}`` safe to hand to readers."""
        return {c: self.records[c].trust for c in self.client_ids()}

    def observe(self, cid, update, beta=DEFAULT_BETA):
        """Score ``update`` against the client's previous one, store it, return the penalty.

        The first upload from a client only seeds its history.
        """
        rec = self.records[cid]
        update = np.asarray(update, dtype=np.float64)
        if rec.last_update is None:
            penalty = 0.0
        else:
            penalty = compute_penalty(update, rec.last_update, rec.trust, beta)
            rec.trust = update_trust(rec.trust, penalty, beta)
        rec.last_update = update.copy()
        return penalty


def sample_clients(ledger, k, round_idx, rng_seed):
    """Draw clients with probability proportional to trust, without replacement.

    Round 0 returns every non-excluded client. Zero-trust clients are never
    drawn. Result is sorted by client id.
    """
    active = ledger.active_ids()
    if not active:
        raise PoolExhaustedError("all clients have been excluded")
    if round_idx == 0 or k >= len(active):
        return active
    rng = np.random.default_rng(rng_seed)
    pool = list(active)
    weights = np.array([ledger.trust(c) for c in pool], dtype=np.float64)
    chosen = []
    for _ in range(k):
        p = weights / weights.sum()
        i = int(rng.choice(len(pool), p=p))
        chosen.append(pool.pop(i))
        weights = np.delete(weights, i)
    return sorted(chosen)
