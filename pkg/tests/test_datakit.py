import struct

import numpy as np
import pytest

from fkbench.datakit import (
    dirichlet_partition,
    export_dataset,
    iid_partition,
    load_dataset,
    partition_stats,
    prepare_splits,
    stratified_split,
    synthetic_blobs,
)
from fkbench.exceptions import FormatError, GenerationError, PartitionError
from fkbench.types import PartitionPlan


def _labels(classes=8, per_class=500):
    return np.repeat(np.arange(classes), per_class)


def _assert_valid_plan(plan, n, min_samples):
    combined = np.concatenate(plan.assignments)
    assert combined.shape[0] == n
    assert np.array_equal(np.sort(combined), np.arange(n))
    assert min(plan.sizes()) >= min_samples
    for assignment in plan.assignments:
        assert np.all(np.diff(assignment) > 0)


# ==================== Synthetic data ====================


def test_blobs_shape():
    data = synthetic_blobs(8, 64, 500, 1.0, np.random.default_rng(0))
    assert data.features.shape == (4000, 64)
    assert np.bincount(data.labels).tolist() == [500] * 8
    assert data.num_classes == 8


def test_blobs_are_deterministic():
    a = synthetic_blobs(4, 8, 20, 0.5, np.random.default_rng(9))
    b = synthetic_blobs(4, 8, 20, 0.5, np.random.default_rng(9))
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)


def test_tight_blobs_are_separable():
    data = synthetic_blobs(8, 16, 50, 1e-6, np.random.default_rng(1))
    means = np.stack([data.features[data.labels == c].mean(axis=0) for c in range(8)])
    distances = np.linalg.norm(data.features[:, None, :] - means[None], axis=2)
    assert np.mean(np.argmin(distances, axis=1) == data.labels) == 1.0


def test_blobs_give_up_when_means_cannot_fit():
    with pytest.raises(GenerationError):
        synthetic_blobs(8, 2, 10, 10.0, np.random.default_rng(0))


def test_stratified_split_counts():
    data = synthetic_blobs(8, 4, 625, 0.2, np.random.default_rng(0))
    train, test = stratified_split(data, 0.2, np.random.default_rng(1))
    assert np.bincount(test.labels).tolist() == [125] * 8
    assert len(train) == 4000 and len(test) == 1000


def test_standardization_uses_train_statistics():
    data = synthetic_blobs(4, 6, 100, 0.3, np.random.default_rng(0))
    train, test = prepare_splits(data, 0.25, np.random.default_rng(2))
    assert np.allclose(train.features.mean(axis=0), 0.0, atol=1e-9)
    assert np.allclose(train.features.std(axis=0), 1.0, atol=1e-6)
    assert not np.allclose(test.features.mean(axis=0), 0.0, atol=1e-9)


# ==================== Files ====================


def test_export_and_load(tmp_path):
    data = synthetic_blobs(3, 5, 10, 0.3, np.random.default_rng(0))
    path = export_dataset(data, tmp_path / "blobs.fkb")
    loaded = load_dataset(path)
    assert np.array_equal(loaded.features, data.features.astype(np.float32).astype(np.float64))
    assert np.array_equal(loaded.labels, data.labels)
    assert loaded.name == "blobs"


def test_load_missing_file(tmp_path):
    with pytest.raises(FormatError, match="not found"):
        load_dataset(tmp_path / "missing.fkb")


def test_load_rejects_missing_class(tmp_path):
    data = synthetic_blobs(3, 5, 4, 0.3, np.random.default_rng(0))
    data = data.subset(np.flatnonzero(data.labels != 1))
    path = export_dataset(data, tmp_path / "gap.fkb")
    with pytest.raises(FormatError, match=r"classes \[1\]"):
        load_dataset(path)


def test_load_hand_written_image_records(tmp_path):
    # three 28x28 RGB crops, one per class
    pixels = np.arange(3 * 28 * 28 * 3, dtype="<f4").reshape(3, 28, 28, 3) / 255.0
    path = tmp_path / "crops.fkb"
    path.write_bytes(
        struct.pack("<4sIII", b"FKB1", 3, 28 * 28 * 3, 3)
        + pixels.astype("<f4").tobytes()
        + np.array([2, 0, 1], dtype="<u2").tobytes()
    )
    dataset = load_dataset(path)
    assert (len(dataset), dataset.dim, dataset.num_classes) == (3, 2352, 3)
    assert dataset.labels.tolist() == [2, 0, 1]
    assert np.array_equal(dataset.features, pixels.reshape(3, -1).astype(np.float64))


# ==================== Partitioning ====================


def test_paper_setting_partition_is_valid():
    labels = _labels()
    plan = dirichlet_partition(labels, 100, 1.0, min_samples=2, seed=0)
    _assert_valid_plan(plan, labels.shape[0], 2)
    assert plan.num_clients == 100


def test_single_client_owns_everything():
    labels = _labels(per_class=20)
    plan = dirichlet_partition(labels, 1, 0.01, seed=4)
    assert np.array_equal(plan.assignments[0], np.arange(labels.shape[0]))


@pytest.mark.parametrize("seed", range(5))
def test_large_alpha_is_near_uniform(seed):
    labels = _labels(per_class=1000)
    plan = dirichlet_partition(labels, 10, 1000.0, seed=seed)
    histogram = partition_stats(plan, labels).histogram
    assert np.all(np.abs(histogram - 100) <= 20)


def test_random_partitions_are_disjoint_and_covering():
    rng = np.random.default_rng(2024)
    labels = _labels(per_class=250)
    for _ in range(20):
        clients = int(rng.integers(2, 60))
        alpha = float(10 ** rng.uniform(-3, 1))
        seed = int(rng.integers(0, 2**31))
        plan = dirichlet_partition(labels, clients, alpha, min_samples=2, seed=seed)
        _assert_valid_plan(plan, labels.shape[0], 2)


def test_tiny_alpha_is_repaired():
    labels = _labels()
    plan = dirichlet_partition(labels, 100, 0.001, min_samples=2, seed=0)
    _assert_valid_plan(plan, labels.shape[0], 2)
    assert plan.repaired_clients > 0


@pytest.mark.parametrize("seed", range(5))
def test_repaired_clients_hold_one_class(seed):
    labels = _labels()
    plan = dirichlet_partition(labels, 100, 0.001, min_samples=2, seed=seed)
    histogram = partition_stats(plan, labels).histogram
    topped_up = [row for row, size in zip(histogram, plan.sizes()) if size == 2]
    assert len(topped_up) >= plan.repaired_clients > 0
    assert all(np.count_nonzero(row) == 1 for row in topped_up)


def test_partition_is_deterministic():
    labels = _labels()
    a = dirichlet_partition(labels, 20, 0.1, seed=11)
    b = dirichlet_partition(labels, 20, 0.1, seed=11)
    assert all(np.array_equal(x, y) for x, y in zip(a.assignments, b.assignments))


def test_too_few_samples_raises():
    with pytest.raises(PartitionError):
        dirichlet_partition(_labels(classes=2, per_class=5), 10, 1.0, min_samples=2)


def test_invalid_alpha_raises():
    with pytest.raises(PartitionError):
        dirichlet_partition(_labels(), 10, 0.0)


def test_heterogeneity_decreases_with_alpha():
    labels = _labels()

    def mean_score(alpha):
        scores = [
            partition_stats(dirichlet_partition(labels, 100, alpha, seed=s), labels).heterogeneity
            for s in range(5)
        ]
        return float(np.mean(scores))

    scores = {alpha: mean_score(alpha) for alpha in (0.001, 0.01, 0.1, 1.0)}
    assert scores[0.001] > scores[0.01] > scores[0.1] > scores[1.0]


def test_iid_partition_is_balanced():
    plan = iid_partition(1003, 10, seed=3)
    _assert_valid_plan(plan, 1003, 100)
    assert set(plan.sizes()) == {100, 101}
    assert plan.alpha is None


def test_single_client_scores_zero():
    labels = _labels(per_class=30)
    plan = dirichlet_partition(labels, 1, 1.0, seed=0)
    assert partition_stats(plan, labels).heterogeneity == 0.0


def test_one_class_per_client_score():
    labels = np.repeat(np.arange(4), 5)
    plan = PartitionPlan(
        assignments=[np.flatnonzero(labels == c) for c in range(4)], alpha=None, seed=0
    )
    stats = partition_stats(plan, labels)
    assert stats.heterogeneity == pytest.approx(3 / 4)
    assert stats.histogram.tolist() == [[5, 0, 0, 0], [0, 5, 0, 0], [0, 0, 5, 0], [0, 0, 0, 5]]
