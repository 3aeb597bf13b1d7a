"""
Type definitions for FKBench.

All types are implemented as dataclasses; arrays are numpy float64 unless
stated otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .exceptions import ConfigurationError, LayoutError, ShapeError, SpecError

# Ordered (tensor-name, shape) pairs describing how a flat vector maps to tensors.
Layout = Tuple[Tuple[str, Tuple[int, ...]], ...]


class ModelKind(str, Enum):
    """Supported model families."""

    KAN = "kan"
    MLP = "mlp"


class Algorithm(str, Enum):
    """Federated optimization algorithms."""

    FEDAVG = "fedavg"
    FEDDYN = "feddyn"
    FEDSAM = "fedsam"
    FEDGAMMA = "fedgamma"
    FEDSMOO = "fedsmoo"
    FEDSPEED = "fedspeed"

    @classmethod
    def parse(cls, name: str) -> "Algorithm":
        """Parse an algorithm name case-insensitively."""
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            valid = " | ".join(a.value for a in cls)
            raise ConfigurationError(f"Unknown algorithm {name!r} (expected {valid})") from None

    @property
    def uses_dynamic_regularization(self) -> bool:
        return self in (Algorithm.FEDDYN, Algorithm.FEDSMOO)


class PartitionMode(str, Enum):
    """How the training split is distributed over clients."""

    DIRICHLET = "dirichlet"
    IID = "iid"


def layout_size(layout: Layout) -> int:
    """Total number of scalars described by a layout."""
    return sum(int(np.prod(shape, dtype=np.int64)) for _, shape in layout)


# ==================== Numeric Types ====================


@dataclass(frozen=True, eq=False)
class ParamVector:
    """
    Flat parameter array plus the layout mapping its segments to tensors.

    The unit of federated communication and aggregation: averaging is
    positional, so every party must share the same layout.
    """

    values: np.ndarray
    layout: Layout

    def __post_init__(self) -> None:
        if self.values.ndim != 1:
            raise LayoutError(f"ParamVector values must be 1-D, got shape {self.values.shape}")
        expected = layout_size(self.layout)
        if self.values.shape[0] != expected:
            raise LayoutError(
                f"ParamVector has {self.values.shape[0]} values but layout describes {expected}"
            )

    @property
    def size(self) -> int:
        return int(self.values.shape[0])

    def with_values(self, values: np.ndarray) -> "ParamVector":
        """Same layout, new values."""
        return ParamVector(values=values, layout=self.layout)

    def copy(self) -> "ParamVector":
        return ParamVector(values=self.values.copy(), layout=self.layout)


# Gradients share the ParamVector representation and layout contract.
GradVector = ParamVector


@dataclass(frozen=True, eq=False)
class Batch:
    """A mini-batch: feature rows and integer labels."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: Optional[int] = None

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise ShapeError(f"Batch features must be 2-D, got shape {self.features.shape}")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.features.shape[0]:
            raise ShapeError(
                f"Batch has {self.features.shape[0]} rows but {self.labels.shape[0]} labels"
            )
        if self.num_classes is not None and self.labels.size:
            if int(self.labels.min()) < 0 or int(self.labels.max()) >= self.num_classes:
                raise ShapeError(f"Batch labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return int(self.labels.shape[0])


# ==================== Model Types ====================


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description shared by every party of a federation."""

    kind: ModelKind
    input_dim: int
    hidden_widths: Tuple[int, ...]
    output_dim: int
    grid_size: int = 5
    grid_range: Tuple[float, float] = (-2.0, 2.0)
    preset: Optional[str] = None

    def validate(self) -> None:
        if self.input_dim < 1 or self.output_dim < 1:
            raise SpecError("input_dim and output_dim must be positive")
        if any(w < 1 for w in self.hidden_widths):
            raise SpecError(f"hidden widths must be positive, got {list(self.hidden_widths)}")
        if self.kind == ModelKind.KAN:
            if self.grid_size < 2:
                raise SpecError(f"KAN grid_size must be >= 2, got {self.grid_size}")
            lo, hi = self.grid_range
            if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
                raise SpecError(f"invalid grid_range {self.grid_range}")

    @property
    def layer_dims(self) -> List[Tuple[int, int]]:
        """(fan_in, fan_out) per layer."""
        dims = [self.input_dim, *self.hidden_widths, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def label(self) -> str:
        """Short name used in reports: the preset, else the architecture."""
        if self.preset:
            return self.preset
        widths = "-".join(str(w) for w in self.hidden_widths) or "0"
        return f"{self.kind.value}-[{widths}]"


@dataclass(frozen=True, eq=False)
class RbfGrid:
    """Gaussian RBF centers uniformly spaced over the grid range."""

    centers: np.ndarray
    bandwidth: float

    @classmethod
    def uniform(cls, grid_size: int, grid_range: Tuple[float, float]) -> "RbfGrid":
        lo, hi = grid_range
        centers = np.linspace(lo, hi, grid_size, dtype=np.float64)
        return cls(centers=centers, bandwidth=(hi - lo) / (grid_size - 1))


# ==================== Data Types ====================


@dataclass
class Dataset:
    """Feature matrix with integer class labels."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(
            features=self.features[indices],
            labels=self.labels[indices],
            num_classes=self.num_classes,
            name=self.name,
        )

    def as_batch(self) -> Batch:
        return Batch(features=self.features, labels=self.labels, num_classes=self.num_classes)


@dataclass
class PartitionPlan:
    """Client index -> sorted training-sample indices."""

    assignments: List[np.ndarray]
    alpha: Optional[float]
    seed: int
    min_samples: int = 2
    repaired_clients: int = 0

    @property
    def num_clients(self) -> int:
        return len(self.assignments)

    def sizes(self) -> List[int]:
        return [int(a.shape[0]) for a in self.assignments]


@dataclass
class PartitionStats:
    """Per-client class histograms and the mean total-variation heterogeneity."""

    histogram: np.ndarray
    heterogeneity: float


# ==================== Federated State ====================


@dataclass
class ClientState:
    """
    Persistent per-client algorithm state.

    Arrays are allocated lazily by the algorithms that need them; None
    means all zeros.
    """

    client_id: int
    dyn_dual: Optional[np.ndarray] = None
    control_variate: Optional[np.ndarray] = None
    speed_correction: Optional[np.ndarray] = None


@dataclass
class ServerState:
    """Global model plus server-side algorithm state."""

    global_params: ParamVector
    dyn_h: Optional[np.ndarray] = None
    global_control: Optional[np.ndarray] = None
    round_index: int = 0


# ==================== Result Types ====================


@dataclass
class RoundRecord:
    """Metrics recorded after one global round."""

    round: int
    test_accuracy: float
    test_loss: float
    mean_local_loss: float
    participants: List[int]
    wall_ms: int = 0


@dataclass
class SeedRun:
    """All rounds of one seed, or the reason it failed."""

    seed: int
    records: List[RoundRecord] = field(default_factory=list)
    convergence_round: Optional[int] = None
    failed: bool = False
    error: Optional[str] = None

    @property
    def final_accuracy(self) -> Optional[float]:
        return self.records[-1].test_accuracy if self.records else None


@dataclass
class RunReport:
    """Multi-seed result of one federated configuration."""

    config: Dict[str, Any]
    runs: List[SeedRun]
    final_accuracy_mean: float
    final_accuracy_std: float
    convergence_round_mean: Optional[float]
    failed_seeds: List[int]
    model_label: str = ""
    algorithm: str = ""
    alpha_label: str = ""
    grid_label: str = ""
