import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ketslab.data import (
    dirichlet_partition,
    flip_labels,
    generate_synthetic,
    load_csv,
    load_idx,
    sample_root_dataset,
    stratified_split,
    write_idx,
)
from ketslab.errors import FormatError, InfeasiblePartitionError
from ketslab.training import LabeledDataset


def label_entropy(labels, plan):
    ents = []
    for idx in plan.assignments.values():
        counts = np.bincount(labels[idx])
        p = counts[counts > 0] / counts.sum()
        ents.append(-(p * np.log(p)).sum())
    return float(np.mean(ents))


class TestDirichletPartition:
    def test_huge_alpha_splits_evenly(self):
        plan = dirichlet_partition(np.zeros(100, dtype=int), 2, 1e6, 0)
        assert plan.sizes() == {0: 50, 1: 50}

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 12), st.floats(0.01, 10), st.integers(0, 10_000), st.integers(1, 6))
    def test_disjoint_cover_nonempty(self, n_clients, alpha, seed, n_classes):
        labels = np.random.default_rng(seed).integers(0, n_classes, 60)
        plan = dirichlet_partition(labels, n_clients, alpha, seed)
        flat = sorted(i for idx in plan.assignments.values() for i in idx)
        assert flat == list(range(60))
        assert all(len(idx) >= 1 for idx in plan.assignments.values())
        for props in plan.proportions.values():
            assert abs(props.sum() - 1.0) <= 1e-9

    def test_lower_alpha_means_more_skew(self):
        labels = np.repeat(np.arange(10), 100)
        skewed = dirichlet_partition(labels, 10, 0.1, 3)
        even = dirichlet_partition(labels, 10, 100.0, 3)
        assert label_entropy(labels, skewed) < label_entropy(labels, even)

    def test_deterministic(self):
        labels = np.arange(50) % 5
        assert dirichlet_partition(labels, 7, 0.5, 1).assignments == dirichlet_partition(labels, 7, 0.5, 1).assignments

    def test_infeasible(self):
        with pytest.raises(InfeasiblePartitionError):
            dirichlet_partition(np.zeros(3, dtype=int), 5, 1.0, 0)


class TestSynthetic:
    def test_deterministic_and_balanced(self):
        a = generate_synthetic(1000, 20, 5, 0.3, 4)
        b = generate_synthetic(1000, 20, 5, 0.3, 4)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(np.bincount(a.labels), [200] * 5)

    def test_tiny_spread_is_separable(self):
        from ketslab.training import evaluate, init_model, local_train
        data = generate_synthetic(200, 5, 3, 1e-3, 0)
        m = local_train(init_model([5, 3], 0), data, 30, 20, 0.5)
        assert evaluate(m, data) == 1.0

    def test_stratified_split_keeps_class_shares(self):
        data = generate_synthetic(500, 4, 5, 0.3, 1)
        train, test = stratified_split(data, 0.2, 0)
        assert len(test) == 100 and len(train) == 400
        np.testing.assert_array_equal(np.bincount(test.labels), [20] * 5)

    def test_root_dataset_is_class_balanced(self):
        data = generate_synthetic(500, 4, 5, 0.3, 1)
        root = sample_root_dataset(data, 50, 5, 0)
        np.testing.assert_array_equal(np.bincount(root.labels), [10] * 5)


class TestFlipLabels:
    def test_examples(self):
        assert flip_labels(LabeledDataset(np.zeros((1, 1)), np.array([0])), 10).labels[0] == 9
        d = LabeledDataset(np.zeros((3, 1)), np.array([0, 11, 9]))
        assert flip_labels(d, 23).labels[1] == 11
        np.testing.assert_array_equal(flip_labels(flip_labels(d, 12), 12).labels, d.labels)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            flip_labels(LabeledDataset(np.zeros((1, 1)), np.array([4])), 4)


class TestIdx:
    def test_tiny_image_scaling(self, tmp_path):
        write_idx(np.array([[[0, 255], [0, 255]]]), [7], tmp_path / "i", tmp_path / "l")
        data = load_idx(tmp_path / "i", tmp_path / "l")
        np.testing.assert_array_equal(data.features, [[0, 1, 0, 1]])
        assert data.labels.tolist() == [7]

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        imgs = rng.integers(0, 256, (9, 4, 3), dtype=np.uint8)
        labels = rng.integers(0, 10, 9, dtype=np.uint8)
        write_idx(imgs, labels, tmp_path / "i", tmp_path / "l")
        data = load_idx(tmp_path / "i", tmp_path / "l")
        np.testing.assert_array_equal(np.round(data.features * 255).astype(np.uint8), imgs.reshape(9, 12))
        np.testing.assert_array_equal(data.labels, labels)

    def test_count_mismatch(self, tmp_path):
        write_idx(np.zeros((2, 2, 2)), [1, 2, 3], tmp_path / "i", tmp_path / "l")
        with pytest.raises(FormatError):
            load_idx(tmp_path / "i", tmp_path / "l")

    def test_bad_magic_reports_offset(self, tmp_path):
        write_idx(np.zeros((1, 2, 2)), [1], tmp_path / "i", tmp_path / "l")
        (tmp_path / "i").write_bytes(struct.pack(">I", 0x0803) + (tmp_path / "i").read_bytes()[4:])
        (tmp_path / "l").write_bytes(struct.pack(">I", 0xDEAD) + (tmp_path / "l").read_bytes()[4:])
        with pytest.raises(FormatError, match="offset 0"):
            load_idx(tmp_path / "i", tmp_path / "l")

    def test_truncated_pixels(self, tmp_path):
        write_idx(np.zeros((3, 2, 2)), [1, 1, 1], tmp_path / "i", tmp_path / "l")
        raw = (tmp_path / "i").read_bytes()
        (tmp_path / "i").write_bytes(raw[:-3])
        with pytest.raises(FormatError) as exc:
            load_idx(tmp_path / "i", tmp_path / "l")
        assert exc.value.offset == len(raw) - 3

    def test_official_test_file_if_present(self):
        root = Path(__file__).parent / "data"
        images, labels = root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte"
        if not images.exists():
            pytest.skip("MNIST test files not available offline")
        data = load_idx(images, labels)
        assert (len(data), data.n_features) == (10000, 784)


class TestCsv:
    def test_loads_last_column_as_label(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b,label\n0.5,1.5,2\n-1,0,0\n")
        data = load_csv(p)
        np.testing.assert_array_equal(data.features, [[0.5, 1.5], [-1, 0]])
        assert data.labels.tolist() == [2, 0]

    def test_rejects_fractional_labels(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,label\n0.5,1.5\n")
        with pytest.raises(FormatError):
            load_csv(p)
