"""
Benchmark sweeps over algorithm, model preset, Dirichlet alpha and grid size.

A sweep is the cartesian product of its axes applied to a base config.
Each grid point runs in its own directory, named purely from its axis
values, and the sweep writes a combined per-round `sweep.csv` plus a
one-row-per-point `summary.csv`.
"""

from __future__ import annotations

import csv
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from loguru import logger

from .config import FederationConfig, apply_overrides, create_config, read_document
from .engine import run_federated
from .exceptions import ConfigurationError, FKBenchError, RunFailedError
from .report import CsvRow, read_report_csv, write_report_csv, write_report_json, write_rows
from .types import Algorithm

AXES = ("algorithm", "model", "alpha", "grid_size")
ALL_ALGORITHMS = [a.value for a in Algorithm]
SUMMARY_COLUMNS = (
    "point",
    "algorithm",
    "model",
    "alpha",
    "grid",
    "status",
    "final_accuracy_mean",
    "final_accuracy_std",
    "convergence_round_mean",
    "failed_seeds",
)

PRESETS: Dict[str, Dict[str, Any]] = {
    # KAN-1 vs MLP-3 across all algorithms, IID clients.
    "fig1": {
        "base": {"partition": {"mode": "iid"}},
        "axes": {"algorithm": ALL_ALGORITHMS, "model": ["kan-1", "mlp-3"]},
    },
    # Grid size against heterogeneity.
    "fig2": {
        "base": {"model": {"preset": "kan-1"}},
        "axes": {
            "algorithm": ALL_ALGORITHMS,
            "grid_size": [3, 5, 10],
            "alpha": [0.001, 0.01, 0.1, 1.0],
        },
    },
    # KAN-1 vs MLP depths at alpha = 1.0.
    "fig3": {
        "base": {"partition": {"mode": "dirichlet", "alpha": 1.0}},
        "axes": {"algorithm": ALL_ALGORITHMS, "model": ["kan-1", "mlp-1", "mlp-2", "mlp-3"]},
    },
    # Depth vs width under FedAvg; kan-w1 is kan-d1.
    "ablation": {
        "base": {"local": {"algorithm": "fedavg"}},
        "axes": {"model": ["kan-d1", "kan-d3", "kan-d5", "kan-w3", "kan-w5"]},
    },
}


def _safe_tag(value: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "_-." else "_" for ch in value)


def _format_axis(value: Any) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


@dataclass
class SweepPoint:
    """One grid point: its axis values, directory name and config."""

    values: Dict[str, Any]
    dirname: str
    config: FederationConfig


@dataclass
class SweepSpec:
    """Axes over algorithm/model/alpha/grid_size applied to a base config document."""

    axes: Dict[str, List[Any]]
    base: Dict[str, Any] = field(default_factory=dict)
    name: str = "sweep"
    output_dir: Optional[str] = None

    @classmethod
    def preset(cls, name: str) -> "SweepSpec":
        if name not in PRESETS:
            raise ConfigurationError(f"unknown sweep preset {name!r} (expected one of {', '.join(PRESETS)})")
        data = json.loads(json.dumps(PRESETS[name]))
        return cls(axes=data["axes"], base=data["base"], name=name)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SweepSpec":
        """
        Parse a sweep document: optional `preset`, `name`, `base`, `axes`, `output`.

        Keys given explicitly replace the preset's.
        """
        unknown = set(data) - {"preset", "name", "base", "axes", "output"}
        if unknown:
            raise ConfigurationError(f"unknown sweep keys {sorted(unknown)}")
        spec = cls.preset(data["preset"]) if "preset" in data else cls(axes={})
        if "axes" in data:
            spec.axes = dict(data["axes"])
        if "base" in data:
            spec.base = dict(data["base"])
        spec.name = str(data.get("name", data.get("preset", spec.name)))
        spec.output_dir = data.get("output")
        spec.validate_axes()
        return spec

    @classmethod
    def load(cls, path: "str | Path") -> "SweepSpec":
        return cls.from_dict(read_document(path))

    def validate_axes(self) -> None:
        for axis, values in self.axes.items():
            if axis not in AXES:
                raise ConfigurationError(f"unknown sweep axis {axis!r} (expected one of {list(AXES)})")
            if not isinstance(values, list) or not values:
                raise ConfigurationError(f"sweep axis {axis!r} must be a non-empty list")

    def points(self, overrides: Sequence[str] = ()) -> List[SweepPoint]:
        """
        Expand the cartesian product in axis order.

        Raises:
            ConfigurationError: If any combination is not a valid config.
        """
        self.validate_axes()
        base = apply_overrides(self.base, overrides)
        names = [axis for axis in AXES if axis in self.axes]
        points: List[SweepPoint] = []
        for combo in itertools.product(*(self.axes[a] for a in names)):
            values = dict(zip(names, combo))
            document = json.loads(json.dumps(base))
            for axis, value in values.items():
                _apply_axis(document, axis, value)
            dirname = "__".join(
                f"{axis}={_safe_tag(_format_axis(value))}" for axis, value in values.items()
            ) or "base"
            points.append(SweepPoint(values=values, dirname=dirname, config=create_config(document)))
        return points


def _apply_axis(document: Dict[str, Any], axis: str, value: Any) -> None:
    if axis == "algorithm":
        document.setdefault("local", {})["algorithm"] = value
    elif axis == "model":
        document.setdefault("model", {})["preset"] = value
    elif axis == "grid_size":
        document.setdefault("model", {})["grid_size"] = value
    elif axis == "alpha":
        partition = document.setdefault("partition", {})
        partition["mode"] = "dirichlet"
        partition["alpha"] = value


def _run_point(directory: str, config_doc: Dict[str, Any], threads: Optional[int]) -> Dict[str, Any]:
    """Run one grid point into its directory; returns its summary fields."""
    config = create_config(config_doc)
    out = Path(directory)
    try:
        report = run_federated(config, threads=threads)
    except FKBenchError as exc:
        logger.warning(f"sweep point {out.name} failed: {exc.message}")
        return {"status": "failed", "error": exc.message}
    write_report_json(report, out / "report.json")
    write_report_csv(report, out / "report.csv")
    return {
        "status": "ok",
        "model": report.model_label,
        "alpha": report.alpha_label,
        "grid": report.grid_label,
        "final_accuracy_mean": report.final_accuracy_mean,
        "final_accuracy_std": report.final_accuracy_std,
        "convergence_round_mean": report.convergence_round_mean,
        "failed_seeds": len(report.failed_seeds),
    }


@dataclass
class SweepResult:
    points: List[SweepPoint]
    summaries: List[Dict[str, Any]]

    @property
    def succeeded(self) -> int:
        return sum(1 for s in self.summaries if s["status"] == "ok")


def run_sweep(
    spec: SweepSpec,
    output_dir: "str | Path",
    jobs: int = 1,
    threads: Optional[int] = None,
    overrides: Sequence[str] = (),
) -> SweepResult:
    """
    Run every grid point and write `sweep.csv` and `summary.csv`.

    Failing points are recorded and skipped; outputs are merged in grid
    order regardless of `jobs`.

    Raises:
        RunFailedError: If no point succeeded.
    """
    points = spec.points(overrides)
    root = Path(output_dir)
    root.mkdir(parents=True, exist_ok=True)
    logger.info(f"sweep {spec.name}: {len(points)} points into {root}")

    tasks: List[Tuple[str, Dict[str, Any], Optional[int]]] = [
        (str(root / p.dirname), p.config.to_dict(), threads) for p in points
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_point, *task) for task in tasks]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [_run_point(*task) for task in tasks]

    summaries: List[Dict[str, Any]] = []
    rows: List[CsvRow] = []
    for point, outcome in zip(points, outcomes):
        summary = {
            "point": point.dirname,
            "algorithm": point.config.local.algorithm.value,
            "model": point.config.model.preset or point.config.model.kind or "",
            "alpha": point.config.partition.label,
            "grid": "",
            "final_accuracy_mean": "",
            "final_accuracy_std": "",
            "convergence_round_mean": "",
            "failed_seeds": "",
            **outcome,
        }
        summary.pop("error", None)
        summaries.append(summary)
        if outcome["status"] == "ok":
            rows.extend(read_report_csv(root / point.dirname / "report.csv"))

    write_rows(rows, root / "sweep.csv")
    write_summary(summaries, root / "summary.csv")
    result = SweepResult(points=points, summaries=summaries)
    if result.succeeded == 0:
        raise RunFailedError(f"sweep {spec.name}: every point failed")
    return result


def _cell(value: Any) -> str:
    if value is None:
        return ""
    return repr(value) if isinstance(value, float) else str(value)


def write_summary(summaries: Sequence[Dict[str, Any]], path: Path) -> Path:
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for summary in summaries:
            writer.writerow([_cell(summary.get(column)) for column in SUMMARY_COLUMNS])
    return path


def read_summary(path: "str | Path") -> List[Dict[str, str]]:
    """Rows of a summary CSV keyed by column name."""
    with Path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != SUMMARY_COLUMNS:
            raise ConfigurationError(f"{path}: unexpected summary header {reader.fieldnames}")
        return list(reader)
