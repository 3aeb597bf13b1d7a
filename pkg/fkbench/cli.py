"""
Command-line front end.

    fkbench run config.json --local.epochs=1 --out results/
    fkbench sweep fig1 --jobs 4
    fkbench gradcheck --preset kan-d3 --grid 5
    fkbench partition-stats --clients 100 --alpha 0.1 --seed 0
    fkbench export --out blobs.fkb
    fkbench report results/*.csv --json results/report.json
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from dotenv import load_dotenv
from loguru import logger
from rich import box
from rich.console import Console
from rich.table import Table

from . import __version__
from .config import DatasetConfig, create_config, debug_enabled, load_config
from .datakit import dirichlet_partition, export_dataset, iid_partition, partition_stats, synthetic_blobs
from .engine import STREAM_DATA, build_splits, run_federated, stream
from .exceptions import EXIT_OK, ConfigurationError, FKBenchError
from .report import (
    cross_validate,
    merge_csvs,
    read_report_csv,
    read_report_json,
    write_report_csv,
    write_report_json,
)
from .selfcheck import SelfCheckResult, check_targets, gradient_check
from .sweep import PRESETS, SweepSpec, run_sweep
from .types import PartitionMode, RunReport

console = Console()

Handler = Callable[[argparse.Namespace, List[str]], int]


def configure_logging(debug: bool) -> None:
    """Single stderr sink; DEBUG with --debug or FKB_DEBUG, otherwise INFO."""
    logger.remove()
    logger.add(
        sys.stderr,
        level="DEBUG" if debug or debug_enabled() else "INFO",
        format="<green>{time:HH:mm:ss}</green> | <level>{level: <7}</level> | {message}",
    )
    logger.enable("fkbench")


def _overrides(extra: Sequence[str]) -> List[str]:
    for raw in extra:
        if not raw.startswith("--") or "=" not in raw:
            raise ConfigurationError(f"unrecognized argument {raw!r}; overrides look like --key.path=value")
    return list(extra)


def _no_extra(extra: Sequence[str]) -> None:
    if extra:
        raise ConfigurationError(f"unrecognized arguments: {' '.join(extra)}")


def _fmt(value: Optional[float], digits: int = 4) -> str:
    return "-" if value is None or value != value else f"{value:.{digits}f}"


# ==================== Tables ====================


def print_run_summary(report: RunReport) -> None:
    table = Table(
        title=f"{report.algorithm} / {report.model_label} / alpha={report.alpha_label}",
        box=box.ROUNDED,
    )
    table.add_column("Seed", justify="right", style="bold")
    table.add_column("Status")
    table.add_column("Final accuracy", justify="right")
    table.add_column("Convergence round", justify="right")
    for run in report.runs:
        table.add_row(
            str(run.seed),
            "failed" if run.failed else "ok",
            "-" if run.failed else _fmt(run.final_accuracy),
            "-" if run.convergence_round is None else str(run.convergence_round),
        )
    table.add_row(
        "all",
        f"{len(report.runs) - len(report.failed_seeds)}/{len(report.runs)} ok",
        f"{_fmt(report.final_accuracy_mean)} +/- {_fmt(report.final_accuracy_std)}",
        _fmt(report.convergence_round_mean, 1),
        style="bold",
    )
    console.print(table)


def print_gradcheck(results: Sequence[SelfCheckResult]) -> None:
    table = Table(title="Gradient check (relative error)", box=box.ROUNDED)
    table.add_column("Preset", style="bold")
    table.add_column("Grid", justify="right")
    table.add_column("Tensor")
    table.add_column("Coords", justify="right")
    table.add_column("Max error", justify="right")
    for result in results:
        worst: Dict[str, float] = {}
        coords: Dict[str, int] = {}
        for t in result.tensors:
            worst[t.name] = max(worst.get(t.name, 0.0), t.error)
            coords[t.name] = t.coords
        for name, error in worst.items():
            style = None if error <= result.tolerance else "red"
            table.add_row(
                result.preset,
                "-" if result.grid_size is None else str(result.grid_size),
                name,
                str(coords[name]),
                f"{error:.2e}",
                style=style,
            )
    console.print(table)


def print_sweep_summary(name: str, summaries: Sequence[Dict[str, Any]]) -> None:
    table = Table(title=f"Sweep {name}", box=box.ROUNDED)
    for column in ("Point", "Status", "Final accuracy", "Convergence round"):
        table.add_column(column, justify="left" if column in ("Point", "Status") else "right")
    for s in summaries:
        ok = s["status"] == "ok"
        table.add_row(
            str(s["point"]),
            str(s["status"]),
            f"{_fmt(s['final_accuracy_mean'])} +/- {_fmt(s['final_accuracy_std'])}" if ok else "-",
            _fmt(s["convergence_round_mean"], 1) if ok else "-",
            style=None if ok else "red",
        )
    console.print(table)


# ==================== Commands ====================


def cmd_run(args: argparse.Namespace, extra: List[str]) -> int:
    config = load_config(args.config, _overrides(extra))
    report = run_federated(config, threads=args.threads)
    out = Path(args.out)
    json_path = write_report_json(report, out / "report.json")
    csv_path = write_report_csv(report, out / "report.csv")
    print_run_summary(report)
    logger.info(f"wrote {json_path} and {csv_path}")
    return EXIT_OK


def _sweep_spec(source: str) -> SweepSpec:
    path = Path(source)
    if path.is_file():
        return SweepSpec.load(path)
    if source in PRESETS:
        return SweepSpec.preset(source)
    raise ConfigurationError(
        f"sweep file not found: {source} (or use a preset: {', '.join(PRESETS)})"
    )


def cmd_sweep(args: argparse.Namespace, extra: List[str]) -> int:
    spec = _sweep_spec(args.sweep)
    out = Path(args.out or spec.output_dir or Path("sweeps") / spec.name)
    result = run_sweep(spec, out, jobs=args.jobs, threads=args.threads, overrides=_overrides(extra))
    print_sweep_summary(spec.name, result.summaries)
    logger.info(f"{result.succeeded}/{len(result.summaries)} points succeeded; wrote {out / 'summary.csv'}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace, extra: List[str]) -> int:
    _no_extra(extra)
    results = [
        gradient_check(preset, grid_size=grid, seed=args.seed, max_coords=args.max_coords)
        for preset, grid in check_targets(args.preset, args.grid)
    ]
    print_gradcheck(results)
    worst = max(r.max_error for r in results)
    console.print(f"max relative error: {worst:.3e}")
    for result in results:
        result.raise_for_status()
    return EXIT_OK


def _dataset_config(args: argparse.Namespace) -> DatasetConfig:
    if args.config:
        return load_config(args.config).dataset
    if getattr(args, "dataset", None):
        return create_config({"dataset": {"kind": "fkb", "path": args.dataset}}).dataset
    return DatasetConfig()


def cmd_partition_stats(args: argparse.Namespace, extra: List[str]) -> int:
    _no_extra(extra)
    dataset_cfg = _dataset_config(args)
    train, _ = build_splits(dataset_cfg, args.seed)
    if args.mode == PartitionMode.IID.value:
        plan = iid_partition(len(train), args.clients, seed=args.seed)
    else:
        plan = dirichlet_partition(
            train.labels,
            args.clients,
            args.alpha,
            min_samples=args.min_samples,
            seed=args.seed,
            num_classes=train.num_classes,
        )
    stats = partition_stats(plan, train.labels, train.num_classes)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["client", *(f"class_{c}" for c in range(train.num_classes))])
        for client, row in enumerate(stats.histogram):
            writer.writerow([client, *row.tolist()])

    sizes = np.array(plan.sizes())
    table = Table(title="Partition", box=box.ROUNDED)
    table.add_column("Clients", justify="right")
    table.add_column("Alpha", justify="right")
    table.add_column("Samples/client", justify="right")
    table.add_column("Repaired", justify="right")
    table.add_column("Heterogeneity", justify="right", style="bold")
    table.add_row(
        str(plan.num_clients),
        "iid" if plan.alpha is None else repr(plan.alpha),
        f"{sizes.min()}..{sizes.max()}",
        str(plan.repaired_clients),
        f"{stats.heterogeneity:.6f}",
    )
    console.print(table)
    console.print(f"heterogeneity: {stats.heterogeneity!r}")
    logger.info(f"wrote {out}")
    return EXIT_OK


def cmd_export(args: argparse.Namespace, extra: List[str]) -> int:
    document = {"dataset": {"kind": "synthetic"}}
    config = create_config(document, _overrides(extra))
    cfg = config.dataset
    dataset = synthetic_blobs(
        cfg.num_classes, cfg.dim, cfg.per_class, cfg.spread, stream(args.seed, STREAM_DATA)
    )
    path = export_dataset(dataset, args.out)
    console.print(f"wrote {len(dataset)} records (d={dataset.dim}, C={dataset.num_classes}) to {path}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace, extra: List[str]) -> int:
    _no_extra(extra)
    if args.out:
        rows = merge_csvs(args.csv, args.out)
    else:
        rows = [row for path in args.csv for row in read_report_csv(path)]
    if args.json:
        cross_validate(read_report_json(args.json), rows)
        console.print(f"{args.json} and {len(args.csv)} CSV file(s) agree")
    console.print(f"{len(rows)} rows valid" + (f", merged into {args.out}" if args.out else ""))
    return EXIT_OK


# ==================== Parser ====================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fkbench", description="Federated KAN vs MLP benchmark harness"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--debug", action="store_true", help="Debug-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one configuration over all its seeds")
    run.add_argument("config", help="JSON config file")
    run.add_argument("--out", default=".", help="Directory for report.json and report.csv")
    run.add_argument("--threads", type=int, default=None, help="Worker threads (default FKB_THREADS)")
    run.set_defaults(handler=cmd_run)

    sweep = sub.add_parser("sweep", help="Run a sweep file or a named preset")
    sweep.add_argument("sweep", help=f"Sweep JSON file or preset ({', '.join(PRESETS)})")
    sweep.add_argument("--out", default=None, help="Output directory (default sweeps/<name>)")
    sweep.add_argument("--jobs", type=int, default=1, help="Grid points run in parallel processes")
    sweep.add_argument("--threads", type=int, default=None, help="Worker threads per point")
    sweep.set_defaults(handler=cmd_sweep)

    grad = sub.add_parser("gradcheck", help="Check backward against finite differences")
    grad.add_argument("--preset", required=True, help="Model preset, or 'all'")
    grad.add_argument("--grid", type=int, default=None, help="KAN grid size")
    grad.add_argument("--seed", type=int, default=0)
    grad.add_argument("--max-coords", type=int, default=2000, help="Coordinates probed per check")
    grad.set_defaults(handler=cmd_gradcheck)

    stats = sub.add_parser("partition-stats", help="Client class histograms and heterogeneity")
    stats.add_argument("--config", default=None, help="Take the dataset section from this config")
    stats.add_argument("--dataset", default=None, help="FKB file (default: synthetic blobs)")
    stats.add_argument("--clients", type=int, default=100)
    stats.add_argument("--alpha", type=float, default=1.0)
    stats.add_argument("--mode", choices=[m.value for m in PartitionMode], default="dirichlet")
    stats.add_argument("--min-samples", type=int, default=2)
    stats.add_argument("--seed", type=int, default=0)
    stats.add_argument("--out", default="partition.csv", help="Histogram CSV path")
    stats.set_defaults(handler=cmd_partition_stats)

    export = sub.add_parser("export", help="Write synthetic blobs as an FKB file")
    export.add_argument("--out", required=True, help="FKB output path")
    export.add_argument("--seed", type=int, default=0)
    export.set_defaults(handler=cmd_export)

    report = sub.add_parser("report", help="Validate and merge per-round CSVs")
    report.add_argument("csv", nargs="+", help="Per-round CSV files")
    report.add_argument("--out", default=None, help="Merged CSV path")
    report.add_argument("--json", default=None, help="report.json to cross-validate against")
    report.set_defaults(handler=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    configure_logging(args.debug)
    handler: Handler = args.handler
    try:
        return handler(args, extra)
    except FKBenchError as exc:
        logger.error(exc.message)
        return exc.exit_code
