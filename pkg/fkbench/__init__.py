"""
FKBench - federated benchmarking of FastKAN against MLP baselines.

FKBench simulates cross-device federated training of small from-scratch
numpy models under six federated optimizers and Dirichlet-controlled label
skew, and reports seed-averaged accuracy and convergence.

Quick Start:
    ```python
    from fkbench import create_config, run_federated, write_report_json

    config = create_config(
        {"rounds": 20, "seeds": [0, 1], "local": {"algorithm": "fedsam"}},
        overrides=["--partition.alpha=0.1"],
    )
    report = run_federated(config)
    print(report.final_accuracy_mean, report.final_accuracy_std)
    write_report_json(report, "out/report.json")
    ```

Environment Variables:
    FKB_THREADS: Client worker pool size (optional, defaults to the CPU count)
    FKB_DEBUG: Debug-level CLI logging when true/1/yes (optional)

Logging goes through loguru and is disabled for library use; call
`logger.enable("fkbench")` to see it. The `fkbench` command enables it.
"""

from __future__ import annotations

from loguru import logger

# Configuration
from .config import (
    DatasetConfig,
    FederationConfig,
    LocalTrainConfig,
    ModelConfig,
    PartitionConfig,
    create_config,
    load_config,
    resolve_threads,
)

# Data
from .datakit import (
    dirichlet_partition,
    export_dataset,
    iid_partition,
    load_dataset,
    partition_stats,
    synthetic_blobs,
)

# Simulation
from .engine import FederatedSimulation, convergence_round, evaluate, run_federated
from .fedopt import STRATEGIES, FedAlgorithm, local_train, server_update

# Exceptions
from .exceptions import (
    CacheError,
    ClientError,
    ConfigurationError,
    DivergenceError,
    FKBenchError,
    FormatError,
    GenerationError,
    LayoutError,
    NumericError,
    PartitionError,
    ReportError,
    RunFailedError,
    SelfCheckError,
    ShapeError,
    SpecError,
)

# Models
from .models import PRESET_NAMES, backward, build_model, forward, resolve_preset
from .numkit import finite_difference_gradient, flatten, softmax_cross_entropy, unflatten

# Protocol
from .protocol import FkbCodec, codec

# Reports
from .report import read_report_csv, read_report_json, write_report_csv, write_report_json
from .selfcheck import gradient_check
from .sweep import PRESETS as SWEEP_PRESETS
from .sweep import SweepSpec, run_sweep

# Types
from .types import (
    Algorithm,
    Batch,
    ClientState,
    Dataset,
    GradVector,
    ModelKind,
    ModelSpec,
    ParamVector,
    PartitionMode,
    PartitionPlan,
    RoundRecord,
    RunReport,
    SeedRun,
    ServerState,
)

__version__ = "0.1.0"

logger.disable("fkbench")

__all__ = [
    # Version
    "__version__",
    # Configuration
    "FederationConfig",
    "ModelConfig",
    "LocalTrainConfig",
    "PartitionConfig",
    "DatasetConfig",
    "create_config",
    "load_config",
    "resolve_threads",
    # Data
    "synthetic_blobs",
    "load_dataset",
    "export_dataset",
    "dirichlet_partition",
    "iid_partition",
    "partition_stats",
    # Simulation
    "FederatedSimulation",
    "run_federated",
    "evaluate",
    "convergence_round",
    "FedAlgorithm",
    "STRATEGIES",
    "local_train",
    "server_update",
    # Models
    "PRESET_NAMES",
    "resolve_preset",
    "build_model",
    "forward",
    "backward",
    "flatten",
    "unflatten",
    "softmax_cross_entropy",
    "finite_difference_gradient",
    "gradient_check",
    # Protocol
    "FkbCodec",
    "codec",
    # Reports and sweeps
    "write_report_json",
    "write_report_csv",
    "read_report_json",
    "read_report_csv",
    "SweepSpec",
    "SWEEP_PRESETS",
    "run_sweep",
    # Types
    "Algorithm",
    "ModelKind",
    "PartitionMode",
    "ParamVector",
    "GradVector",
    "Batch",
    "ModelSpec",
    "Dataset",
    "PartitionPlan",
    "ClientState",
    "ServerState",
    "RoundRecord",
    "SeedRun",
    "RunReport",
    # Exceptions
    "FKBenchError",
    "ConfigurationError",
    "SpecError",
    "LayoutError",
    "ShapeError",
    "CacheError",
    "NumericError",
    "ClientError",
    "DivergenceError",
    "RunFailedError",
    "PartitionError",
    "GenerationError",
    "FormatError",
    "ReportError",
    "SelfCheckError",
]
