"""White-box crafting of malicious updates.

Attackers see the current round's benign updates before aggregation. The
optimization attacks perturb the benign mean along a fixed direction and
search for the largest scaling factor that still satisfies a distance bound;
the aggregation-tailored attacks follow fixed coordinate or search rules.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientClientsError, InsufficientSamplesError, ZeroNormError
from .vector_core import coordinate_std, stack

ATTACK_KINDS = ("none", "trim", "krum", "min_max", "min_sum", "sign_flip", "label_flip")
PERTURBATIONS = ("unit", "std")


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "none"
    perturbation: str = "unit"
    start_round: int = 0
    # exclusive; None means the attack never stops
    stop_round: int = None
    gamma_init: float = 10.0
    tau: float = 0.01
    b: float = 2.0
    lambda_init: float = 10.0
    lambda_floor: float = 1e-5

    def __post_init__(self):
        checks = [
            (self.kind in ATTACK_KINDS, "kind", f"unknown attack kind {self.kind!r}; expected one of {ATTACK_KINDS}"),
            (self.perturbation in PERTURBATIONS, "perturbation",
             f"unknown perturbation {self.perturbation!r}; expected one of {PERTURBATIONS}"),
            (self.stop_round is None or self.start_round <= self.stop_round, "stop_round",
             f"start_round {self.start_round} is after stop_round {self.stop_round}"),
            (self.tau > 0, "tau", "tau must be positive"),
            (self.gamma_init > 0, "gamma_init", "gamma_init must be positive"),
            (self.b > 1, "b", "b must exceed 1"),
            (0 < self.lambda_floor <= self.lambda_init, "lambda_floor", "need 0 < lambda_floor <= lambda_init"),
        ]
        for ok, name, msg in checks:
            if not ok:
                err = ValueError(msg)
                err.field = name
                raise err

    def active(self, round_idx):
        """True when attackers send poisoned updates in ``round_idx``."""
        if self.kind == "none" or round_idx < self.start_round:
            return False
        return self.stop_round is None or round_idx < self.stop_round


def perturbation_vector(benign, kind):
    """Inverse unit vector of the benign mean, or the negated coordinate-wise std."""
    if len(benign) < 2:
        raise InsufficientSamplesError(f"need at least 2 benign updates, got {len(benign)}")
    if kind == "unit":
        mean = stack(benign).mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0.0:
            raise ZeroNormError("benign mean has zero norm; no unit direction exists")
        return -mean / norm
    if kind == "std":
        return -coordinate_std(benign)
    raise ValueError(f"unknown perturbation kind {kind!r}")


def gamma_search(benign, p, constraint, gamma_init=10.0, tau=0.01):
    """Oscillating halving search for the largest feasible scaling of ``p``.

    Returns ``(gamma, mean + gamma * p)`` where the candidate is the last one
    that satisfied ``constraint``; ``gamma = 0`` (the benign mean) when none did.
    """
    mean = stack(benign).mean(axis=0)
    p = np.asarray(p, dtype=np.float64)
    gamma = float(gamma_init)
    step = gamma / 2.0
    gamma_succ = 0.0
    # the final evaluated move is below tau / 2, so the feasible/infeasible bracket is below tau
    while step >= tau / 4:
        if constraint(mean + gamma * p):
            gamma_succ = gamma
            gamma += step
        else:
            gamma -= step
        step /= 2.0
    return gamma_succ, mean + gamma_succ * p


def _sq_dists(m, updates):
    diff = updates - m
    return np.einsum("ij,ij->i", diff, diff)


def min_max_bound(benign):
    u = stack(benign)
    return float(np.sqrt(max(0.0, max(_sq_dists(x, u).max() for x in u))))


def min_sum_bound(benign):
    u = stack(benign)
    return float(max(_sq_dists(x, u).sum() for x in u))


def min_max_satisfied(m, benign, bound=None):
    u = stack(benign)
    bound = min_max_bound(benign) if bound is None else bound
    return float(np.sqrt(_sq_dists(np.asarray(m, dtype=np.float64), u).max())) <= bound


def min_sum_satisfied(m, benign, bound=None):
    u = stack(benign)
    bound = min_sum_bound(benign) if bound is None else bound
    return float(_sq_dists(np.asarray(m, dtype=np.float64), u).sum()) <= bound


def min_max_attack(benign, perturbation_kind="unit", gamma_init=10.0, tau=0.01):
    """Malicious vector whose farthest benign distance stays within the benign diameter."""
    p = perturbation_vector(benign, perturbation_kind)
    bound = min_max_bound(benign)
    _, m = gamma_search(benign, p, lambda c: min_max_satisfied(c, benign, bound), gamma_init, tau)
    return m


def min_sum_attack(benign, perturbation_kind="unit", gamma_init=10.0, tau=0.01):
    """Malicious vector whose summed squared distance to the benign set stays within the worst benign sum."""
    p = perturbation_vector(benign, perturbation_kind)
    bound = min_sum_bound(benign)
    _, m = gamma_search(benign, p, lambda c: min_sum_satisfied(c, benign, bound), gamma_init, tau)
    return m


def trim_attack_intervals(benign, b=2.0):
    """Per-coordinate ``(low, high)`` sampling intervals for the trim attack."""
    u = stack(benign)
    s = np.sign(u.mean(axis=0))
    lo_v, hi_v = u.min(axis=0), u.max(axis=0)
    # s > 0: push below the smallest benign value; s < 0: above the largest
    ref = np.where(s > 0, lo_v, hi_v)
    far = np.where(s > 0, np.where(lo_v < 0, b * lo_v, lo_v / b), np.where(hi_v > 0, b * hi_v, hi_v / b))
    low = np.minimum(ref, far)
    high = np.maximum(ref, far)
    zero = s == 0
    low[zero] = 0.0
    high[zero] = 0.0
    return low, high


def trim_attack(benign, n_malicious, b=2.0, seed=0):
    """One independently sampled vector per malicious client, each inside the trim intervals."""
    if len(benign) < 2:
        raise InsufficientSamplesError(f"need at least 2 benign updates, got {len(benign)}")
    low, high = trim_attack_intervals(benign, b)
    rng = np.random.default_rng(seed)
    return [low + (high - low) * rng.random(low.size) for _ in range(n_malicious)]


def krum_attack(benign, c, krum, lambda_init=10.0, lambda_floor=1e-5):
    """Shrink ``-lambda * sign(mean)`` until ``krum`` picks it from c copies plus the benign set.

    ``krum(updates, c)`` must return the index of the selected update; the
    malicious copies occupy indices ``0..c-1``. If lambda drops below the
    floor the floor itself is used.
    """
    if c < 1:
        raise ValueError("krum attack needs at least one malicious client")
    u = stack(benign)
    if u.shape[0] + c < c + 3:
        raise InsufficientClientsError(f"krum needs n >= c + 3; have {u.shape[0] + c} updates for c={c}")
    s = np.sign(u.mean(axis=0))
    lam = float(lambda_init)
    while lam >= lambda_floor:
        cand = -lam * s
        pool = [cand] * c + list(u)
        if krum(pool, c) < c:
            return cand
        lam /= 2.0
    return -lambda_floor * s


def sign_flip_attack(honest_update):
    return -np.asarray(honest_update, dtype=np.float64)


def craft_updates(cfg, benign, attacker_ids, honest_attacker_updates, n_assumed, krum, seed):
    """Poisoned update for every attacker in ``attacker_ids`` (sorted order).

    ``honest_attacker_updates`` holds what each attacker would have sent
    honestly (or after training on flipped labels for ``label_flip``). The
    optimization attacks fall back to those when fewer than two benign
    updates are visible.
    """
    ids = sorted(attacker_ids)
    if not ids:
        return {}
    kind = cfg.kind
    if kind in ("sign_flip",):
        return {a: sign_flip_attack(honest_attacker_updates[a]) for a in ids}
    if kind in ("label_flip", "none"):
        return {a: np.asarray(honest_attacker_updates[a], dtype=np.float64) for a in ids}
    # too few benign updates to craft against: behave honestly
    if len(benign) < (3 if kind == "krum" else 2):
        return {a: np.asarray(honest_attacker_updates[a], dtype=np.float64) for a in ids}
    if kind == "min_max":
        m = min_max_attack(benign, cfg.perturbation, cfg.gamma_init, cfg.tau)
        return {a: m.copy() for a in ids}
    if kind == "min_sum":
        m = min_sum_attack(benign, cfg.perturbation, cfg.gamma_init, cfg.tau)
        return {a: m.copy() for a in ids}
    if kind == "trim":
        vs = trim_attack(benign, len(ids), cfg.b, seed)
        return dict(zip(ids, vs))
    if kind == "krum":
        c = max(1, n_assumed)
        m = krum_attack(benign, c, krum, cfg.lambda_init, cfg.lambda_floor)
        return {a: m.copy() for a in ids}
    raise ValueError(f"unknown attack kind {kind!r}")
