"""
Datasets and client partitions.

Synthetic Gaussian blobs stand in for real image data; FKB files carry
real flattened images. The training split is divided among clients either
by per-class Dirichlet allocation or uniformly at random.
"""

from __future__ import annotations

from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from loguru import logger

from .exceptions import FormatError, GenerationError, PartitionError
from .protocol import codec
from .types import Dataset, PartitionPlan, PartitionStats

DEFAULT_MIN_SAMPLES = 2
DEFAULT_MAX_RETRIES = 100
MEAN_PLACEMENT_ATTEMPTS = 1000


# ==================== Datasets ====================


def synthetic_blobs(
    num_classes: int,
    dim: int,
    per_class: int,
    spread: float,
    rng: np.random.Generator,
) -> Dataset:
    """
    Isotropic Gaussian class clusters.

    Class means are drawn uniformly in [-1, 1]^dim and rejected until every
    pair is at least 2*spread apart; samples are mean + N(0, spread^2 I),
    stored class by class.

    Raises:
        GenerationError: If a mean cannot be placed within the attempt budget.
    """
    if num_classes < 2 or dim < 2:
        raise GenerationError(f"need num_classes >= 2 and dim >= 2, got {num_classes}, {dim}")

    means: List[np.ndarray] = []
    min_distance = 2.0 * spread
    for label in range(num_classes):
        for _ in range(MEAN_PLACEMENT_ATTEMPTS):
            candidate = rng.uniform(-1.0, 1.0, size=dim)
            if all(np.linalg.norm(candidate - m) >= min_distance for m in means):
                means.append(candidate)
                break
        else:
            raise GenerationError(
                f"could not place mean {label} at distance >= {min_distance} "
                f"after {MEAN_PLACEMENT_ATTEMPTS} attempts"
            )

    features = np.concatenate(
        [m + rng.normal(0.0, spread, size=(per_class, dim)) for m in means]
    )
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    return Dataset(features=features, labels=labels, num_classes=num_classes, name="blobs")


def validate_dataset(dataset: Dataset) -> Dataset:
    """
    Check that every class is present and n >= C.

    Raises:
        FormatError: If the dataset violates either invariant.
    """
    n, c = len(dataset), dataset.num_classes
    if n < c:
        raise FormatError(f"{dataset.name}: {n} records cannot cover {c} classes")
    counts = np.bincount(dataset.labels, minlength=c)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise FormatError(f"{dataset.name}: classes {missing.tolist()} have no records")
    return dataset


def load_dataset(path: Union[str, Path]) -> Dataset:
    """
    Read and validate an FKB file.

    Raises:
        FormatError: If the file is missing, malformed or violates the invariants.
    """
    file = Path(path)
    if not file.is_file():
        raise FormatError(f"dataset file not found: {file}")
    dataset = validate_dataset(codec.read(file))
    logger.debug(f"loaded {file}: {len(dataset)} records, d={dataset.dim}, C={dataset.num_classes}")
    return dataset


def export_dataset(dataset: Dataset, path: Union[str, Path]) -> Path:
    """Write a dataset as FKB (features narrowed to float32)."""
    return codec.write(dataset, path)


def stratified_split(
    dataset: Dataset, test_fraction: float, rng: np.random.Generator
) -> Tuple[Dataset, Dataset]:
    """Hold out round(test_fraction * count) samples of every class."""
    train_idx: List[np.ndarray] = []
    test_idx: List[np.ndarray] = []
    for label in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == label)
        rng.shuffle(idx)
        n_test = int(round(test_fraction * idx.shape[0]))
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    train = dataset.subset(np.sort(np.concatenate(train_idx)))
    test = dataset.subset(np.sort(np.concatenate(test_idx)))
    return train, test


def standardize(train: Dataset, test: Dataset) -> Tuple[Dataset, Dataset]:
    """
    Scale to [0, 1] then z-score per column, using training statistics only.

    Constant columns keep unit scale.
    """
    low = train.features.min(axis=0)
    span = train.features.max(axis=0) - low
    span[span == 0.0] = 1.0
    scaled_train = (train.features - low) / span
    scaled_test = (test.features - low) / span

    mean = scaled_train.mean(axis=0)
    std = scaled_train.std(axis=0)
    std[std == 0.0] = 1.0

    def rebuild(source: Dataset, features: np.ndarray) -> Dataset:
        return Dataset(features=features, labels=source.labels, num_classes=source.num_classes, name=source.name)

    return rebuild(train, (scaled_train - mean) / std), rebuild(test, (scaled_test - mean) / std)


def prepare_splits(
    dataset: Dataset, test_fraction: float, rng: np.random.Generator
) -> Tuple[Dataset, Dataset]:
    """Stratified train/test split followed by train-statistics standardization."""
    train, test = stratified_split(dataset, test_fraction, rng)
    return standardize(train, test)


# ==================== Partitioning ====================


def _dirichlet_draw(
    labels: np.ndarray,
    num_classes: int,
    num_clients: int,
    alpha: float,
    rng: np.random.Generator,
) -> List[List[int]]:
    buckets: List[List[int]] = [[] for _ in range(num_clients)]
    concentration = np.full(num_clients, alpha, dtype=np.float64)
    for label in range(num_classes):
        idx = np.flatnonzero(labels == label)
        if idx.size == 0:
            continue
        rng.shuffle(idx)
        proportions = rng.dirichlet(concentration)
        # Tiny alpha can underflow every gamma draw.
        if not np.all(np.isfinite(proportions)) or proportions.sum() <= 0.0:
            proportions = np.zeros(num_clients)
            proportions[rng.integers(num_clients)] = 1.0
        bounds = (np.cumsum(proportions) * idx.shape[0]).astype(np.int64)[:-1]
        bounds = np.clip(bounds, 0, idx.shape[0])
        for client, part in enumerate(np.split(idx, bounds)):
            buckets[client].extend(part.tolist())
    return buckets


def _take_last(bucket: List[int], labels: np.ndarray, label: int) -> int:
    for position in range(len(bucket) - 1, -1, -1):
        if labels[bucket[position]] == label:
            return bucket.pop(position)
    raise AssertionError(f"no sample of class {label} in donor bucket")


def _repair(buckets: List[List[int]], labels: np.ndarray, num_classes: int, min_samples: int) -> int:
    """
    Top up deficient clients until everyone has min_samples.

    A repaired client is filled with a single class: the class it already
    holds, or the largest client's majority class when it is empty. Samples
    come from the client holding the most of that class that can spare one.
    """
    width = max(num_classes, int(labels.max()) + 1)
    sizes = np.array([len(b) for b in buckets])
    hist = np.stack(
        [np.bincount(labels[np.asarray(b, dtype=np.int64)], minlength=width) for b in buckets]
    )
    repaired = 0
    for client in np.flatnonzero(sizes < min_samples):
        repaired += 1
        while sizes[client] < min_samples:
            if sizes[client]:
                label = int(np.argmax(hist[client]))
            else:
                label = int(np.argmax(hist[int(np.argmax(sizes))]))
            spare = (sizes > min_samples) & (hist[:, label] > 0)
            spare[client] = False
            if spare.any():
                donor = int(np.argmax(np.where(spare, hist[:, label], -1)))
                sample = _take_last(buckets[donor], labels, label)
            else:
                # Nobody can spare this class; fall back to the largest client.
                donor = int(np.argmax(sizes))
                sample = buckets[donor].pop()
            moved = int(labels[sample])
            buckets[client].append(sample)
            hist[donor, moved] -= 1
            hist[client, moved] += 1
            sizes[donor] -= 1
            sizes[client] += 1
    return repaired


def dirichlet_partition(
    labels: np.ndarray,
    num_clients: int,
    alpha: float,
    min_samples: int = DEFAULT_MIN_SAMPLES,
    seed: int = 0,
    num_classes: Optional[int] = None,
    max_retries: int = DEFAULT_MAX_RETRIES,
) -> PartitionPlan:
    """
    Per-class Dirichlet allocation of sample indices to clients.

    For each class, proportions p ~ Dir(alpha * 1_N) split that class's
    shuffled indices by cumulative share. Whole draws are repeated on fresh
    substreams until every client holds min_samples; if no draw qualifies,
    the draw with the fewest deficient clients is repaired by topping up each
    deficient client with samples of a single class.

    Raises:
        PartitionError: If there are fewer than num_clients * min_samples samples,
            or num_clients / alpha are invalid.
    """
    if num_clients < 1:
        raise PartitionError(f"num_clients must be >= 1, got {num_clients}")
    if not alpha > 0:
        raise PartitionError(f"alpha must be positive, got {alpha}")
    n = int(labels.shape[0])
    if n < num_clients * min_samples:
        raise PartitionError(
            f"{n} samples cannot give {num_clients} clients {min_samples} samples each"
        )
    classes = int(labels.max()) + 1 if num_classes is None else num_classes

    best: Optional[List[List[int]]] = None
    best_deficit = num_clients + 1
    for attempt, child in enumerate(np.random.SeedSequence(seed).spawn(max_retries)):
        buckets = _dirichlet_draw(labels, classes, num_clients, alpha, np.random.default_rng(child))
        deficit = sum(1 for b in buckets if len(b) < min_samples)
        if deficit < best_deficit:
            best, best_deficit = buckets, deficit
        if deficit == 0:
            logger.debug(f"dirichlet partition accepted on attempt {attempt + 1}")
            break

    assert best is not None
    repaired = _repair(best, labels, classes, min_samples) if best_deficit else 0
    if repaired:
        logger.debug(
            f"no draw met min_samples={min_samples} in {max_retries} attempts; "
            f"repaired {repaired} clients"
        )
    return PartitionPlan(
        assignments=[np.array(sorted(b), dtype=np.int64) for b in best],
        alpha=alpha,
        seed=seed,
        min_samples=min_samples,
        repaired_clients=repaired,
    )


def iid_partition(num_samples: int, num_clients: int, seed: int = 0) -> PartitionPlan:
    """Shuffle once and deal near-equal shards."""
    if num_clients < 1 or num_samples < num_clients:
        raise PartitionError(f"cannot split {num_samples} samples over {num_clients} clients")
    order = np.random.default_rng(np.random.SeedSequence(seed)).permutation(num_samples)
    shards = np.array_split(order, num_clients)
    return PartitionPlan(
        assignments=[np.sort(s).astype(np.int64) for s in shards],
        alpha=None,
        seed=seed,
        min_samples=min(len(s) for s in shards),
    )


def partition_stats(
    plan: PartitionPlan, labels: np.ndarray, num_classes: Optional[int] = None
) -> PartitionStats:
    """
    Per-client class histograms and the heterogeneity score.

    The score is the mean over non-empty clients of the total-variation
    distance between the client's class distribution and the global one.
    """
    classes = int(labels.max()) + 1 if num_classes is None else num_classes
    histogram = np.stack(
        [np.bincount(labels[idx], minlength=classes) for idx in plan.assignments]
    ).astype(np.int64)
    totals = histogram.sum(axis=0)
    global_dist = totals / totals.sum()

    sizes = histogram.sum(axis=1)
    occupied = sizes > 0
    client_dist = histogram[occupied] / sizes[occupied, None]
    distances = 0.5 * np.abs(client_dist - global_dist).sum(axis=1)
    score = float(distances.mean()) if distances.size else 0.0
    return PartitionStats(histogram=histogram, heterogeneity=score)
