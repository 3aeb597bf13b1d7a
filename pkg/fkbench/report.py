"""
Run report serialization.

`report.json` follows the `fkb-report/1` schema; `report.csv` holds one row
per round per seed. Readers validate both and can cross-check one against
the other.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import astuple, dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

import numpy as np

from .exceptions import ReportError
from .types import RunReport

SCHEMA = "fkb-report/1"
CSV_COLUMNS = ("seed", "round", "algorithm", "model", "alpha", "grid", "accuracy", "loss")

PathLike = Union[str, Path]


@dataclass
class CsvRow:
    """One per-round CSV row."""

    seed: int
    round: int
    algorithm: str
    model: str
    alpha: str
    grid: str
    accuracy: float
    loss: float


def report_to_dict(report: RunReport) -> Dict[str, Any]:
    """JSON-ready report. Wall-clock timings are left out so reruns match byte for byte."""
    return {
        "schema": SCHEMA,
        "labels": {
            "algorithm": report.algorithm,
            "model": report.model_label,
            "alpha": report.alpha_label,
            "grid": report.grid_label,
        },
        "config": report.config,
        "summary": {
            "final_accuracy_mean": report.final_accuracy_mean,
            "final_accuracy_std": report.final_accuracy_std,
            "convergence_round_mean": report.convergence_round_mean,
            "failed_seeds": list(report.failed_seeds),
        },
        "seeds": [
            {
                "seed": run.seed,
                "status": "failed" if run.failed else "ok",
                "error": run.error,
                "convergence_round": run.convergence_round,
                "rounds": [
                    {
                        "round": r.round,
                        "test_accuracy": r.test_accuracy,
                        "test_loss": r.test_loss,
                        "mean_local_loss": r.mean_local_loss,
                        "participants": list(r.participants),
                    }
                    for r in run.records
                ],
            }
            for run in report.runs
        ],
    }


def report_rows(report: RunReport) -> List[CsvRow]:
    return [
        CsvRow(
            seed=run.seed,
            round=r.round,
            algorithm=report.algorithm,
            model=report.model_label,
            alpha=report.alpha_label,
            grid=report.grid_label,
            accuracy=r.test_accuracy,
            loss=r.test_loss,
        )
        for run in report.runs
        if not run.failed
        for r in run.records
    ]


def write_report_json(report: RunReport, path: PathLike) -> Path:
    file = Path(path)
    file.parent.mkdir(parents=True, exist_ok=True)
    file.write_text(json.dumps(report_to_dict(report), indent=2) + "\n", encoding="utf-8")
    return file


def write_rows(rows: Iterable[CsvRow], path: PathLike) -> Path:
    """Write rows under the fixed CSV header."""
    file = Path(path)
    file.parent.mkdir(parents=True, exist_ok=True)
    with file.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            values = list(astuple(row))
            values[-2:] = [repr(float(row.accuracy)), repr(float(row.loss))]
            writer.writerow(values)
    return file


def write_report_csv(report: RunReport, path: PathLike) -> Path:
    return write_rows(report_rows(report), path)


def read_report_csv(path: PathLike) -> List[CsvRow]:
    """
    Parse a per-round CSV.

    Raises:
        ReportError: If the file is missing, the header differs, or a row is malformed.
    """
    file = Path(path)
    if not file.is_file():
        raise ReportError(f"CSV file not found: {file}")
    with file.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise ReportError(f"{file}: header {header} does not match {list(CSV_COLUMNS)}")
        rows: List[CsvRow] = []
        for line, values in enumerate(reader, start=2):
            if len(values) != len(CSV_COLUMNS):
                raise ReportError(f"{file}:{line}: expected {len(CSV_COLUMNS)} fields, got {len(values)}")
            try:
                rows.append(
                    CsvRow(
                        seed=int(values[0]),
                        round=int(values[1]),
                        algorithm=values[2],
                        model=values[3],
                        alpha=values[4],
                        grid=values[5],
                        accuracy=float(values[6]),
                        loss=float(values[7]),
                    )
                )
            except ValueError as exc:
                raise ReportError(f"{file}:{line}: {exc}") from exc
    return rows


def merge_csvs(paths: Sequence[PathLike], out: PathLike) -> List[CsvRow]:
    """Concatenate validated CSVs in the given order into one file."""
    rows: List[CsvRow] = []
    for path in paths:
        rows.extend(read_report_csv(path))
    write_rows(rows, out)
    return rows


def read_report_json(path: PathLike) -> Dict[str, Any]:
    """
    Load a report document and check its schema tag.

    Raises:
        ReportError: If the file is missing, not JSON, or not `fkb-report/1`.
    """
    file = Path(path)
    if not file.is_file():
        raise ReportError(f"report file not found: {file}")
    try:
        document = json.loads(file.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ReportError(f"{file}: invalid JSON ({exc})") from exc
    if not isinstance(document, dict) or document.get("schema") != SCHEMA:
        raise ReportError(f"{file}: not a {SCHEMA} document")
    return document


def _same(a: float, b: float) -> bool:
    return (math.isnan(a) and math.isnan(b)) or a == b


def cross_validate(document: Dict[str, Any], rows: Sequence[CsvRow]) -> None:
    """
    Check that a report document and its CSV describe the same run.

    Per-round accuracies and losses must match exactly, and the summary
    mean/std must recompute exactly from the stored final accuracies.

    Raises:
        ReportError: On the first disagreement.
    """
    by_seed: Dict[int, List[CsvRow]] = {}
    for row in rows:
        by_seed.setdefault(row.seed, []).append(row)

    finals: List[float] = []
    for entry in document.get("seeds", []):
        seed = entry["seed"]
        if entry["status"] != "ok":
            if seed in by_seed:
                raise ReportError(f"seed {seed} failed but has CSV rows")
            continue
        rounds = entry["rounds"]
        seed_rows = by_seed.pop(seed, [])
        if len(seed_rows) != len(rounds):
            raise ReportError(f"seed {seed}: {len(rounds)} rounds in JSON, {len(seed_rows)} in CSV")
        for record, row in zip(rounds, seed_rows):
            if (
                record["round"] != row.round
                or not _same(record["test_accuracy"], row.accuracy)
                or not _same(record["test_loss"], row.loss)
            ):
                raise ReportError(f"seed {seed} round {row.round}: JSON and CSV disagree")
        if rounds:
            finals.append(rounds[-1]["test_accuracy"])
    if by_seed:
        raise ReportError(f"CSV has rows for seeds {sorted(by_seed)} absent from the report")

    summary = document["summary"]
    if finals:
        mean, std = float(np.mean(finals)), float(np.std(finals))
        if not (_same(mean, summary["final_accuracy_mean"]) and _same(std, summary["final_accuracy_std"])):
            raise ReportError("summary statistics do not recompute from the per-seed series")
