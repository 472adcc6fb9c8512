"""The federated round loop and experiment driver.

One round: sample clients, train the benign ones, let the attackers craft
their uploads from the benign snapshot, aggregate with the configured
defense, apply the aggregate to the global model and evaluate it on the
held-out server test set.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import defenses
from .attacks import craft_updates
from .data import (
    dirichlet_partition,
    flip_labels,
    generate_synthetic,
    load_csv,
    load_idx,
    sample_root_dataset,
    stratified_split,
)
from .errors import DivergenceError
from .training import compute_update, evaluate, init_model, local_train
from .trust import TrustLedger, sample_clients
from .vector_core import cosine_similarity

log = logging.getLogger(__name__)

KETS_FAMILY = ("kets", "kets_median_prefilter", "ketsv2")

# stream tags for derive_seed so that independent draws never share a stream
_SPLIT, _PARTITION, _ATTACKERS, _MODEL, _TRAIN, _SAMPLE, _CRAFT, _ROOT, _SERVER = range(9)


def derive_seed(*keys):
    """Stable 63-bit seed from integer keys, independent of call order."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> 1)


@dataclass
class RoundReport:
    round: int
    accuracy: float
    selected: list
    honest: list
    trust: dict
    attacker_excluded: dict
    poisoned: bool = False

    @property
    def n_excluded_total(self):
        return sum(1 for t in self.trust.values() if t <= 0.0)


@dataclass
class ExperimentState:
    global_model: object
    ledger: TrustLedger
    partitions: dict
    attacker_ids: list
    test: object
    n_classes: int
    poisoned_partitions: dict = field(default_factory=dict)
    root: object = None
    reference: np.ndarray = None


def load_dataset(cfg):
    """Return ``(train, test, n_classes)`` with a stratified held-out server test set."""
    if cfg.dataset == "synthetic":
        data = generate_synthetic(cfg.n_samples, cfg.n_features, cfg.n_classes, cfg.spread, cfg.seed)
    elif cfg.dataset == "idx":
        data = load_idx(cfg.train_images, cfg.train_labels)
    else:
        data = load_csv(cfg.csv_path)
    n_classes = int(data.labels.max()) + 1
    if cfg.dataset == "synthetic":
        n_classes = cfg.n_classes
    train, test = stratified_split(data, cfg.test_fraction, derive_seed(cfg.seed, _SPLIT))
    return train, test, n_classes


def select_attackers(cfg):
    """Attacker ids: the first ceil(fraction * n) clients of a seeded shuffle."""
    rng = np.random.default_rng(derive_seed(cfg.seed, _ATTACKERS))
    order = rng.permutation(cfg.n_clients)
    return sorted(int(c) for c in order[: cfg.n_attackers])


def build_state(cfg):
    train, test, n_classes = load_dataset(cfg)
    plan = dirichlet_partition(train.labels, cfg.n_clients, cfg.alpha, derive_seed(cfg.seed, _PARTITION))
    partitions = {c: train.subset(idx) for c, idx in plan.assignments.items()}
    attackers = select_attackers(cfg)
    poisoned = {}
    if cfg.attack.kind == "label_flip":
        poisoned = {a: flip_labels(partitions[a], n_classes) for a in attackers}
    root = None
    if cfg.defense == "fltrust":
        root = sample_root_dataset(train, cfg.fltrust_root_size, n_classes, derive_seed(cfg.seed, _ROOT))
    sizes = [train.n_features, *cfg.hidden, n_classes]
    model = init_model(sizes, derive_seed(cfg.seed, _MODEL))
    ledger = TrustLedger({c: len(p) for c, p in partitions.items()})
    return ExperimentState(
        global_model=model,
        ledger=ledger,
        partitions=partitions,
        attacker_ids=attackers,
        test=test,
        n_classes=n_classes,
        poisoned_partitions=poisoned,
        root=root,
    )


def _sample(state, cfg, round_idx):
    if cfg.defense in KETS_FAMILY:
        return sample_clients(state.ledger, cfg.clients_per_round, round_idx, derive_seed(cfg.seed, _SAMPLE, round_idx))
    k = cfg.clients_per_round
    if k >= cfg.n_clients:
        return list(range(cfg.n_clients))
    rng = np.random.default_rng(derive_seed(cfg.seed, _SAMPLE, round_idx))
    return sorted(int(c) for c in rng.choice(cfg.n_clients, size=k, replace=False))


def _train_one(state, cfg, client, round_idx, data):
    local = local_train(
        state.global_model,
        data,
        cfg.local_epochs,
        cfg.batch_size,
        cfg.lr,
        cfg.momentum,
        derive_seed(cfg.seed, _TRAIN, client, round_idx),
    )
    return compute_update(local, state.global_model)


def _train_all(state, cfg, jobs, round_idx):
    """Train every ``(client, dataset)`` job; results keyed by client id."""
    if cfg.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(lambda j: _train_one(state, cfg, j[0], round_idx, j[1]), jobs))
    else:
        results = [_train_one(state, cfg, c, round_idx, d) for c, d in jobs]
    return {c: u for (c, _), u in zip(jobs, results)}


def _aggregate(state, cfg, ctx, round_idx):
    d = cfg.defense
    if d == "fedavg":
        return defenses.fed_avg(ctx), ctx.ids()
    if d == "krum":
        ids = ctx.ids()
        idx = defenses.krum_index([ctx.updates[c] for c in ids], ctx.assumed_attackers)
        return np.array(ctx.updates[ids[idx]]), [ids[idx]]
    if d == "trim_mean":
        return defenses.trim_mean(ctx), ctx.ids()
    if d == "median":
        return defenses.coordinate_median(ctx), ctx.ids()
    if d == "fltrust":
        g0 = defenses.fltrust_server_update(
            state.global_model, state.root, cfg.local_epochs, cfg.batch_size, cfg.lr, cfg.momentum,
            derive_seed(cfg.seed, _SERVER, round_idx),
        )
        ids = ctx.ids()
        accepted = [
            c for c in ids
            if np.linalg.norm(ctx.updates[c]) > 0 and np.linalg.norm(g0) > 0
            and cosine_similarity(ctx.updates[c], g0) > 0
        ]
        return defenses.fltrust_combine([ctx.updates[c] for c in ids], g0), accepted
    if d == "kets":
        return defenses.kets_aggregate(ctx, cfg.beta)
    if d == "kets_median_prefilter":
        return defenses.kets_median_aggregate(ctx, cfg.beta)
    if d == "ketsv2":
        update, kept, state.reference = defenses.ketsv2_aggregate(
            ctx, cfg.beta, cfg.ketsv2_threshold, cfg.ketsv2_mu
        )
        return update, kept
    raise ValueError(f"unknown defense {d!r}")


def run_round(state, cfg, round_idx):
    """Advance ``state`` by one global round; returns ``(state, report)``."""
    selected = _sample(state, cfg, round_idx)
    attackers = set(state.attacker_ids)
    poisoning = cfg.attack.active(round_idx)

    jobs = []
    for c in selected:
        data = state.partitions[c]
        if poisoning and c in attackers and c in state.poisoned_partitions:
            data = state.poisoned_partitions[c]
        jobs.append((c, data))
    trained = _train_all(state, cfg, jobs, round_idx)

    updates = dict(trained)
    sel_attackers = [c for c in selected if c in attackers]
    if poisoning and sel_attackers:
        benign = [trained[c] for c in selected if c not in attackers]
        crafted = craft_updates(
            cfg.attack,
            benign,
            sel_attackers,
            {a: trained[a] for a in sel_attackers},
            cfg.n_attackers,
            defenses.krum_index,
            derive_seed(cfg.seed, _CRAFT, round_idx),
        )
        updates.update(crafted)

    ctx = defenses.AggregationContext(
        updates=updates,
        dataset_sizes={c: len(state.partitions[c]) for c in selected},
        ledger=state.ledger,
        previous_global_update=state.reference,
        root_dataset=state.root,
        assumed_attackers=cfg.n_attackers,
        global_model=state.global_model,
    )
    aggregate, honest = _aggregate(state, cfg, ctx, round_idx)
    if not np.all(np.isfinite(aggregate)):
        raise DivergenceError(round_idx, -1, "aggregated update is non-finite")
    state.global_model = state.global_model.unflatten(state.global_model.flatten() + aggregate)

    report = RoundReport(
        round=round_idx,
        accuracy=evaluate(state.global_model, state.test),
        selected=list(selected),
        honest=sorted(honest),
        trust=state.ledger.snapshot(),
        attacker_excluded={a: state.ledger.is_excluded(a) for a in state.attacker_ids},
        poisoned=bool(poisoning and sel_attackers),
    )
    log.debug("round %d acc=%.4f selected=%d honest=%d", round_idx, report.accuracy, len(selected), len(honest))
    return state, report


def run_experiment(cfg, state=None):
    """Run ``cfg.global_epochs`` rounds and return every :class:`RoundReport`.

    A :class:`DivergenceError` is re-raised with the reports collected so far
    attached as ``partial_reports``.
    """
    state = build_state(cfg) if state is None else state
    reports = []
    for r in range(cfg.global_epochs):
        try:
            state, report = run_round(state, cfg, r)
        except DivergenceError as exc:
            exc.partial_reports = reports
            raise
        reports.append(report)
    return reports


def compute_metrics(reports, attacker_ids, censor_at=None):
    """Accuracy and detection summary of a run.

    Exclusion means trust reached zero. ``rounds_to_exclusion`` maps each
    attacker to the first round it was excluded (None if never);
    ``mean_rounds_to_exclusion`` counts never-excluded attackers as
    ``censor_at`` (defaults to the number of rounds).
    """
    attacker_ids = sorted(attacker_ids)
    if not reports:
        return {
            "final_accuracy": None,
            "mean_accuracy": None,
            "tpr": None,
            "fpr": None,
            "rounds_to_exclusion": {a: None for a in attacker_ids},
            "mean_rounds_to_exclusion": None,
            "trust_matrix": [],
            "client_ids": [],
        }
    clients = sorted(reports[0].trust)
    benign = [c for c in clients if c not in set(attacker_ids)]
    first_excluded = {}
    for rep in reports:
        for c, t in rep.trust.items():
            if t <= 0.0 and c not in first_excluded:
                first_excluded[c] = rep.round
    censor = len(reports) if censor_at is None else censor_at
    rte = {a: first_excluded.get(a) for a in attacker_ids}
    tpr = sum(1 for a in attacker_ids if a in first_excluded) / len(attacker_ids) if attacker_ids else None
    fpr = sum(1 for b in benign if b in first_excluded) / len(benign) if benign else None
    mean_rte = float(np.mean([censor if v is None else v for v in rte.values()])) if attacker_ids else None
    acc = [r.accuracy for r in reports]
    return {
        "final_accuracy": acc[-1],
        "mean_accuracy": float(np.mean(acc)),
        "tpr": tpr,
        "fpr": fpr,
        "rounds_to_exclusion": rte,
        "mean_rounds_to_exclusion": mean_rte,
        "trust_matrix": [[rep.trust[c] for c in clients] for rep in reports],
        "client_ids": clients,
    }
