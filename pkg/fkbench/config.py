"""
Configuration for FKBench.

A run is described by one JSON document mapped onto nested dataclasses.
Unknown keys are rejected, dotted `--key=value` overrides are applied to the
document before parsing, and worker/debug settings come from the environment.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, ClassVar, Dict, List, Mapping, Optional, Sequence, Tuple, Type, TypeVar

from .exceptions import ConfigurationError, SpecError
from .types import Algorithm, ModelKind, ModelSpec, PartitionMode

THREADS_ENV = "FKB_THREADS"
DEBUG_ENV = "FKB_DEBUG"

DATASET_KINDS = ("synthetic", "fkb")

T = TypeVar("T")


# ==================== Field Converters ====================


def _int(value: Any, path: str) -> int:
    if (
        isinstance(value, bool)
        or not isinstance(value, (int, float))
        or not math.isfinite(value)
        or value != int(value)
    ):
        raise ConfigurationError(f"{path}: expected an integer, got {value!r}")
    return int(value)


def _float(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{path}: expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ConfigurationError(f"{path}: expected a finite number, got {value!r}")
    return float(value)


def _optional_float(value: Any, path: str) -> Optional[float]:
    return None if value is None else _float(value, path)


def _str(value: Any, path: str) -> str:
    if not isinstance(value, str):
        raise ConfigurationError(f"{path}: expected a string, got {value!r}")
    return value


def _optional_str(value: Any, path: str) -> Optional[str]:
    return None if value is None else _str(value, path)


def _int_list(value: Any, path: str) -> List[int]:
    if not isinstance(value, list):
        raise ConfigurationError(f"{path}: expected a list of integers, got {value!r}")
    return [_int(v, f"{path}[{i}]") for i, v in enumerate(value)]


def _optional_int_list(value: Any, path: str) -> Optional[List[int]]:
    return None if value is None else _int_list(value, path)


def _range(value: Any, path: str) -> Tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigurationError(f"{path}: expected [low, high], got {value!r}")
    return (_float(value[0], f"{path}[0]"), _float(value[1], f"{path}[1]"))


def _algorithm(value: Any, path: str) -> Algorithm:
    return Algorithm.parse(_str(value, path))


def _convert(converter: Callable[[Any, str], Any]) -> Dict[str, Any]:
    return {"convert": converter}


def _parse_section(cls: Type[T], data: Any, path: str) -> T:
    """Build a config dataclass from a mapping, rejecting unknown keys."""
    if not isinstance(data, Mapping):
        raise ConfigurationError(f"{path or 'config'}: expected an object, got {data!r}")
    nested: Dict[str, Type[Any]] = getattr(cls, "NESTED", {})
    known = {f.name: f for f in fields(cls)}  # type: ignore[arg-type]
    kwargs: Dict[str, Any] = {}
    for key, value in data.items():
        key_path = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigurationError(f"unknown config key {key_path!r}")
        if key in nested:
            kwargs[key] = _parse_section(nested[key], value, key_path)
        else:
            kwargs[key] = known[key].metadata["convert"](value, key_path)
    return cls(**kwargs)


def _section_dict(section: Any) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for f in fields(section):
        value = getattr(section, f.name)
        if hasattr(value, "to_dict"):
            out[f.name] = value.to_dict()
        elif isinstance(value, Algorithm):
            out[f.name] = value.value
        elif isinstance(value, tuple):
            out[f.name] = list(value)
        elif isinstance(value, list):
            out[f.name] = list(value)
        else:
            out[f.name] = value
    return out


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigurationError(message)


# ==================== Config Sections ====================


@dataclass
class ModelConfig:
    """Model selection: a named preset, or an explicit kind and hidden widths."""

    preset: Optional[str] = field(default="kan-1", metadata=_convert(_optional_str))
    kind: Optional[str] = field(default=None, metadata=_convert(_optional_str))
    hidden_widths: Optional[List[int]] = field(default=None, metadata=_convert(_optional_int_list))
    grid_size: int = field(default=5, metadata=_convert(_int))
    grid_range: Tuple[float, float] = field(default=(-2.0, 2.0), metadata=_convert(_range))
    mlp_width: int = field(default=64, metadata=_convert(_int))

    def resolve(self, input_dim: int, output_dim: int) -> ModelSpec:
        """Concrete ModelSpec once the dataset's dimensions are known."""
        from .models import resolve_preset

        if self.preset is not None:
            return resolve_preset(
                self.preset,
                input_dim,
                output_dim,
                grid_size=self.grid_size,
                grid_range=self.grid_range,
                mlp_width=self.mlp_width,
            )
        assert self.kind is not None and self.hidden_widths is not None
        spec = ModelSpec(
            kind=ModelKind(self.kind.lower()),
            input_dim=input_dim,
            hidden_widths=tuple(self.hidden_widths),
            output_dim=output_dim,
            grid_size=self.grid_size,
            grid_range=self.grid_range,
        )
        spec.validate()
        return spec

    def validate(self) -> None:
        from .models import PRESET_NAMES

        if self.preset is not None:
            _require(
                self.preset.lower() in PRESET_NAMES,
                f"model.preset: unknown preset {self.preset!r} "
                f"(expected one of {', '.join(PRESET_NAMES)})",
            )
        else:
            _require(
                self.kind is not None and self.kind.lower() in (k.value for k in ModelKind),
                "model.kind must be 'kan' or 'mlp' when no preset is given",
            )
            _require(self.hidden_widths is not None, "model.hidden_widths is required without a preset")
        _require(self.grid_size >= 2, f"model.grid_size must be >= 2, got {self.grid_size}")
        lo, hi = self.grid_range
        _require(math.isfinite(lo) and math.isfinite(hi) and hi > lo, "model.grid_range must be [low, high]")
        _require(self.mlp_width >= 1, "model.mlp_width must be positive")

    def to_dict(self) -> Dict[str, Any]:
        return _section_dict(self)


@dataclass
class LocalTrainConfig:
    """Local training hyperparameters shared by every client."""

    algorithm: Algorithm = field(default=Algorithm.FEDAVG, metadata=_convert(_algorithm))
    epochs: int = field(default=5, metadata=_convert(_int))
    batch_size: int = field(default=32, metadata=_convert(_int))
    learning_rate: float = field(default=0.05, metadata=_convert(_float))
    rho: float = field(default=0.05, metadata=_convert(_float))
    alpha_dyn: float = field(default=0.1, metadata=_convert(_float))
    prox_weight: float = field(default=0.1, metadata=_convert(_float))
    merge_alpha: float = field(default=0.5, metadata=_convert(_float))

    def validate(self) -> None:
        _require(self.epochs >= 1, f"local.epochs must be >= 1, got {self.epochs}")
        _require(self.batch_size >= 1, f"local.batch_size must be >= 1, got {self.batch_size}")
        for name in ("learning_rate", "rho", "alpha_dyn", "prox_weight", "merge_alpha"):
            _require(math.isfinite(getattr(self, name)), f"local.{name} must be finite")
        _require(self.learning_rate > 0, "local.learning_rate must be positive")
        _require(self.rho >= 0, "local.rho must be >= 0")
        _require(self.alpha_dyn >= 0, "local.alpha_dyn must be >= 0")
        _require(self.prox_weight >= 0, "local.prox_weight must be >= 0")
        _require(0.0 <= self.merge_alpha <= 1.0, "local.merge_alpha must lie in [0, 1]")

    def to_dict(self) -> Dict[str, Any]:
        return _section_dict(self)


@dataclass
class PartitionConfig:
    """How the training split is divided among clients."""

    mode: str = field(default=PartitionMode.DIRICHLET.value, metadata=_convert(_str))
    alpha: float = field(default=1.0, metadata=_convert(_float))
    min_samples: int = field(default=2, metadata=_convert(_int))

    def validate(self) -> None:
        modes = [m.value for m in PartitionMode]
        _require(self.mode in modes, f"partition.mode must be one of {modes}, got {self.mode!r}")
        _require(
            math.isfinite(self.alpha) and self.alpha > 0,
            f"partition.alpha must be positive, got {self.alpha}",
        )
        _require(self.min_samples >= 0, "partition.min_samples must be >= 0")

    @property
    def label(self) -> str:
        return "iid" if self.mode == PartitionMode.IID.value else repr(self.alpha)

    def to_dict(self) -> Dict[str, Any]:
        return _section_dict(self)


@dataclass
class DatasetConfig:
    """Synthetic Gaussian blobs, or an FKB file."""

    kind: str = field(default="synthetic", metadata=_convert(_str))
    path: Optional[str] = field(default=None, metadata=_convert(_optional_str))
    num_classes: int = field(default=8, metadata=_convert(_int))
    dim: int = field(default=64, metadata=_convert(_int))
    per_class: int = field(default=625, metadata=_convert(_int))
    # Calibrated so FedAvg on kan-1 clears 0.90 after 50 rounds at alpha 1.0.
    spread: float = field(default=0.4, metadata=_convert(_float))
    test_fraction: float = field(default=0.2, metadata=_convert(_float))

    def validate(self) -> None:
        _require(self.kind in DATASET_KINDS, f"dataset.kind must be one of {list(DATASET_KINDS)}")
        if self.kind == "fkb":
            _require(bool(self.path), "dataset.path is required when dataset.kind is 'fkb'")
        else:
            _require(self.num_classes >= 2, "dataset.num_classes must be >= 2")
            _require(self.dim >= 2, "dataset.dim must be >= 2")
            _require(self.per_class >= 1, "dataset.per_class must be >= 1")
            _require(self.spread >= 0, "dataset.spread must be >= 0")
        _require(0.0 < self.test_fraction < 1.0, "dataset.test_fraction must lie in (0, 1)")

    def to_dict(self) -> Dict[str, Any]:
        return _section_dict(self)


@dataclass
class FederationConfig:
    """A complete multi-seed federated benchmark configuration."""

    NESTED: ClassVar[Dict[str, Type[Any]]] = {
        "model": ModelConfig,
        "local": LocalTrainConfig,
        "partition": PartitionConfig,
        "dataset": DatasetConfig,
    }

    num_clients: int = field(default=100, metadata=_convert(_int))
    participation: float = field(default=0.1, metadata=_convert(_float))
    rounds: int = field(default=100, metadata=_convert(_int))
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4], metadata=_convert(_int_list))
    convergence_fraction: float = field(default=0.99, metadata=_convert(_float))
    model: ModelConfig = field(default_factory=ModelConfig)
    local: LocalTrainConfig = field(default_factory=LocalTrainConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FederationConfig":
        return _parse_section(cls, data, "")

    def to_dict(self) -> Dict[str, Any]:
        return _section_dict(self)

    def validate(self) -> "FederationConfig":
        """
        Check every section.

        Returns:
            self, for chaining.

        Raises:
            ConfigurationError: On the first invalid value.
        """
        _require(self.num_clients >= 1, f"num_clients must be >= 1, got {self.num_clients}")
        _require(
            0.0 < self.participation <= 1.0,
            f"participation must lie in (0, 1], got {self.participation}",
        )
        _require(self.rounds >= 1, f"rounds must be >= 1, got {self.rounds}")
        _require(len(self.seeds) > 0, "seeds must be non-empty")
        _require(len(set(self.seeds)) == len(self.seeds), f"seeds must be distinct, got {self.seeds}")
        _require(all(s >= 0 for s in self.seeds), f"seeds must be non-negative, got {self.seeds}")
        _require(
            0.0 < self.convergence_fraction <= 1.0,
            "convergence_fraction must lie in (0, 1]",
        )
        try:
            self.model.validate()
        except SpecError as exc:
            raise ConfigurationError(exc.message) from exc
        self.local.validate()
        self.partition.validate()
        self.dataset.validate()
        if self.local.algorithm.uses_dynamic_regularization:
            _require(
                self.local.alpha_dyn > 0,
                f"local.alpha_dyn must be > 0 for {self.local.algorithm.value}",
            )
        return self


# ==================== Loading ====================


def parse_override(raw: str) -> Tuple[str, Any]:
    """Split `--a.b=value` into ('a.b', parsed value); values parse as JSON, else text."""
    text = raw[2:] if raw.startswith("--") else raw
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise ConfigurationError(f"override {raw!r} must look like --key.path=value")
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    return key, parsed


def apply_overrides(document: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Return a copy of the document with dotted overrides applied."""
    result = json.loads(json.dumps(document))
    for raw in overrides:
        key, value = parse_override(raw)
        node = result
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = {}
                node[part] = child
            if not isinstance(child, dict):
                raise ConfigurationError(f"override {key!r}: {part!r} is not a section")
            node = child
        node[parts[-1]] = value
    return result


def read_document(path: "str | Path") -> Dict[str, Any]:
    """
    Read a JSON config document.

    Raises:
        ConfigurationError: If the file is missing or not a JSON object.
    """
    file = Path(path)
    if not file.is_file():
        raise ConfigurationError(f"config file not found: {file}")
    try:
        document = json.loads(file.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{file}: invalid JSON ({exc})") from exc
    if not isinstance(document, dict):
        raise ConfigurationError(f"{file}: top level must be a JSON object")
    return document


def create_config(
    document: Optional[Mapping[str, Any]] = None,
    overrides: Sequence[str] = (),
) -> FederationConfig:
    """
    Build and validate a config from an in-memory document.

    Args:
        document: Partial config; omitted keys take their defaults
        overrides: Dotted `--key=value` overrides applied before parsing
    """
    merged = apply_overrides(dict(document or {}), overrides)
    return FederationConfig.from_dict(merged).validate()


def load_config(path: "str | Path", overrides: Sequence[str] = ()) -> FederationConfig:
    """Read, override, parse and validate a config file."""
    return create_config(read_document(path), overrides)


# ==================== Environment ====================


def resolve_threads() -> int:
    """
    Worker cap from FKB_THREADS, defaulting to the hardware parallelism.

    Raises:
        ConfigurationError: If FKB_THREADS is set but not a positive integer.
    """
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return os.cpu_count() or 1
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if threads < 1:
        raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return threads


def debug_enabled() -> bool:
    return os.environ.get(DEBUG_ENV, "").lower() in ("true", "1", "yes")
