"""Datasets: synthetic blobs, IDX/CSV loaders, non-IID partitioning and label corruption."""

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InfeasiblePartitionError
from .training import LabeledDataset

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class PartitionPlan:
    assignments: dict = field(default_factory=dict)
    alpha: float = 0.5
    seed: int = 0
    # per-label Dirichlet proportions, kept for inspection
    proportions: dict = field(default_factory=dict)

    def sizes(self):
        return {c: len(idx) for c, idx in self.assignments.items()}


def _largest_remainder(count, props):
    raw = props * count
    base = np.floor(raw).astype(np.int64)
    short = count - int(base.sum())
    if short > 0:
        # stable sort keeps lower client ids first on equal remainders
        order = np.argsort(-(raw - base), kind="stable")
        base[order[:short]] += 1
    return base


def _dirichlet(rng, alpha, k):
    while True:
        g = rng.gamma(alpha, 1.0, size=k)
        total = g.sum()
        if total > 0:
            return g / total


def dirichlet_partition(labels, n_clients, alpha, seed):
    """Label-skewed split: each label's samples are divided by a Dirichlet(alpha) draw.

    Counts use largest-remainder rounding; afterwards every empty client takes
    one sample from the currently largest client.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if n_clients < 2:
        raise ValueError(f"need at least 2 clients, got {n_clients}")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if n_clients > labels.size:
        raise InfeasiblePartitionError(f"{n_clients} clients cannot share {labels.size} samples")
    rng = np.random.default_rng(seed)
    buckets = [[] for _ in range(n_clients)]
    proportions = {}
    for label in np.unique(labels):
        idx = np.nonzero(labels == label)[0]
        idx = idx[rng.permutation(idx.size)]
        props = _dirichlet(rng, alpha, n_clients)
        proportions[int(label)] = props
        counts = _largest_remainder(idx.size, props)
        pos = 0
        for c, cnt in enumerate(counts):
            buckets[c].extend(idx[pos:pos + cnt].tolist())
            pos += cnt
    for c in range(n_clients):
        if not buckets[c]:
            donor = max(range(n_clients), key=lambda j: (len(buckets[j]), -j))
            buckets[c].append(buckets[donor].pop())
    assignments = {c: sorted(b) for c, b in enumerate(buckets)}
    return PartitionPlan(assignments=assignments, alpha=alpha, seed=seed, proportions=proportions)


def generate_synthetic(n, d, n_classes, spread, seed, max_tries=1000):
    """Gaussian blobs around unit-norm class means with isotropic noise of std ``spread``.

    Class means are redrawn until every pair is at least ``2 * spread`` apart.
    Class counts are balanced (the first ``n % n_classes`` classes get one extra).
    """
    if n < n_classes:
        raise ValueError(f"need at least one sample per class: n={n}, classes={n_classes}")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        means = rng.standard_normal((n_classes, d))
        means /= np.linalg.norm(means, axis=1, keepdims=True)
        gaps = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=2)
        gaps[np.diag_indices(n_classes)] = np.inf
        if gaps.min() >= 2.0 * spread:
            break
    else:
        raise ValueError(f"could not place {n_classes} unit-norm means {2 * spread} apart in {d} dims")
    counts = np.full(n_classes, n // n_classes)
    counts[: n % n_classes] += 1
    labels = np.repeat(np.arange(n_classes), counts)
    features = means[labels] + spread * rng.standard_normal((n, d))
    order = rng.permutation(n)
    return LabeledDataset(features[order], labels[order])


def stratified_split(data, test_fraction, seed):
    """Hold out ``test_fraction`` of every class; returns ``(train, test)``."""
    rng = np.random.default_rng(seed)
    test_idx = []
    for label in np.unique(data.labels):
        idx = np.nonzero(data.labels == label)[0]
        idx = idx[rng.permutation(idx.size)]
        take = int(round(test_fraction * idx.size))
        test_idx.extend(idx[:take].tolist())
    mask = np.zeros(len(data), dtype=bool)
    mask[test_idx] = True
    return data.subset(np.nonzero(~mask)[0]), data.subset(np.nonzero(mask)[0])


def sample_root_dataset(data, size, n_classes, seed):
    """Class-balanced uniform sample of ``size`` items (capped by the rarest class)."""
    rng = np.random.default_rng(seed)
    per_class = max(1, size // n_classes)
    chosen = []
    for label in range(n_classes):
        idx = np.nonzero(data.labels == label)[0]
        if idx.size == 0:
            continue
        chosen.extend(rng.choice(idx, size=min(per_class, idx.size), replace=False).tolist())
    return data.subset(sorted(chosen))


def flip_labels(data, n_classes):
    """Map every label ``y`` to ``n_classes - 1 - y``."""
    if np.any(data.labels < 0) or np.any(data.labels >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return LabeledDataset(data.features.copy(), n_classes - 1 - data.labels)


def _read_header(raw, path, magic, ndims):
    need = 4 + 4 * ndims
    if len(raw) < need:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise FormatError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}", offset=0)
    dims = struct.unpack(f">{ndims}I", raw[4:need])
    return dims, need


def load_idx(images_path, labels_path):
    """Parse a big-endian IDX image/label pair; pixels are scaled to [0, 1]."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    raw = images_path.read_bytes()
    (count, rows, cols), off = _read_header(raw, images_path, IDX_IMAGES_MAGIC, 3)
    size = count * rows * cols
    if len(raw) < off + size:
        raise FormatError(f"{images_path}: expected {size} pixel bytes", offset=len(raw))
    pixels = np.frombuffer(raw, dtype=np.uint8, count=size, offset=off)
    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0

    raw = labels_path.read_bytes()
    (n_labels,), off = _read_header(raw, labels_path, IDX_LABELS_MAGIC, 1)
    if len(raw) < off + n_labels:
        raise FormatError(f"{labels_path}: expected {n_labels} label bytes", offset=len(raw))
    if n_labels != count:
        raise FormatError(f"{labels_path}: {n_labels} labels for {count} images", offset=4)
    labels = np.frombuffer(raw, dtype=np.uint8, count=n_labels, offset=off).astype(np.int64)
    return LabeledDataset(features, labels)


def write_idx(images, labels, images_path, labels_path):
    """Write ``images`` (count x rows x cols, uint8) and ``labels`` as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    count, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">4I", IDX_IMAGES_MAGIC, count, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2I", IDX_LABELS_MAGIC, labels.size) + labels.tobytes())


def load_csv(path):
    """Tabular loader: header row, last column is the integer label."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file", offset=0) from None
        rows = [r for r in reader if r]
    if len(header) < 2:
        raise FormatError(f"{path}: need at least one feature column and a label column", offset=0)
    if not rows:
        raise FormatError(f"{path}: no data rows")
    try:
        table = np.array(rows, dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric cell ({exc})") from None
    if table.shape[1] != len(header):
        raise FormatError(f"{path}: rows have {table.shape[1]} columns, header has {len(header)}")
    labels = table[:, -1]
    if not np.all(labels == np.round(labels)):
        raise FormatError(f"{path}: label column must hold integers")
    return LabeledDataset(table[:, :-1], labels.astype(np.int64))
