"""Shared fixtures for the FKBench test suite."""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any, Dict

import numpy as np
import pytest

from fkbench.config import DEBUG_ENV, THREADS_ENV
from fkbench.models import build_model, resolve_preset
from fkbench.types import Batch

TINY_DOCUMENT: Dict[str, Any] = {
    "num_clients": 4,
    "participation": 0.5,
    "rounds": 3,
    "seeds": [0, 1],
    "model": {"preset": "kan-1"},
    "local": {"epochs": 1, "batch_size": 8},
    "partition": {"alpha": 1.0, "min_samples": 2},
    "dataset": {
        "num_classes": 3,
        "dim": 4,
        "per_class": 40,
        "spread": 0.3,
        "test_fraction": 0.25,
    },
}


@pytest.fixture(autouse=True)
def clean_env(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv(THREADS_ENV, raising=False)
    monkeypatch.delenv(DEBUG_ENV, raising=False)


@pytest.fixture
def tiny_document() -> Dict[str, Any]:
    """A config document that runs in well under a second."""
    return copy.deepcopy(TINY_DOCUMENT)


@pytest.fixture
def tiny_config_file(tmp_path: Path, tiny_document: Dict[str, Any]) -> Path:
    path = tmp_path / "config.json"
    path.write_text(json.dumps(tiny_document), encoding="utf-8")
    return path


@pytest.fixture
def small_kan():
    spec = resolve_preset("kan-1", 4, 3, grid_size=4)
    return build_model(spec, np.random.default_rng(0))


@pytest.fixture
def small_mlp():
    spec = resolve_preset("mlp-3", 4, 3, mlp_width=6)
    return build_model(spec, np.random.default_rng(0))


@pytest.fixture
def client_batch() -> Batch:
    rng = np.random.default_rng(42)
    return Batch(
        features=rng.normal(size=(24, 4)),
        labels=rng.integers(0, 3, size=24),
        num_classes=3,
    )
