"""
Gradient self-check: analytic backward against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from . import models
from .exceptions import SelfCheckError
from .numkit import finite_difference_gradient, relative_error, softmax_cross_entropy
from .types import Batch, ModelKind, ParamVector

TOLERANCE = 1e-4
DEFAULT_BATCHES = 3
DEFAULT_BATCH_SIZE = 3
DEFAULT_MAX_COORDS = 2000
CHECK_INPUT_DIM = 6
CHECK_CLASSES = 3
KAN_GRID_SIZES = (3, 5, 10)
# Deep KANs at g=10 have O(h^2) truncation error near 3e-3 at h=1e-4.
CHECK_STEP = 1e-6

_STREAM_CHECK = 7


@dataclass
class TensorError:
    name: str
    batch: int
    error: float
    coords: int


@dataclass
class SelfCheckResult:
    """Per-tensor relative errors of one preset/grid/seed check."""

    preset: str
    grid_size: Optional[int]
    seed: int
    tensors: List[TensorError] = field(default_factory=list)
    tolerance: float = TOLERANCE

    @property
    def max_error(self) -> float:
        return max((t.error for t in self.tensors), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def raise_for_status(self) -> None:
        """
        Raises:
            SelfCheckError: If any tensor exceeded the tolerance.
        """
        if not self.passed:
            worst = max(self.tensors, key=lambda t: t.error)
            raise SelfCheckError(
                f"{self.preset}: relative error {self.max_error:.3e} on {worst.name} "
                f"(batch {worst.batch}) exceeds {self.tolerance:g}"
            )


def _sample_coords(
    layout: Sequence[Tuple[str, Tuple[int, ...]]], max_coords: int, rng: np.random.Generator
) -> List[Tuple[str, np.ndarray]]:
    """Flat indices to probe, per tensor. Small models are checked exhaustively."""
    sizes = [int(np.prod(shape)) for _, shape in layout]
    total = sum(sizes)
    budget = total if total <= max_coords else max(1, max_coords // len(layout))
    picks: List[Tuple[str, np.ndarray]] = []
    offset = 0
    for (name, _), size in zip(layout, sizes):
        if size <= budget:
            local = np.arange(size)
        else:
            local = np.sort(rng.choice(size, size=budget, replace=False))
        picks.append((name, local + offset))
        offset += size
    return picks


def gradient_check(
    preset: str,
    grid_size: int = models.DEFAULT_GRID_SIZE,
    seed: int = 0,
    batches: int = DEFAULT_BATCHES,
    batch_size: int = DEFAULT_BATCH_SIZE,
    max_coords: int = DEFAULT_MAX_COORDS,
    tolerance: float = TOLERANCE,
    step: float = CHECK_STEP,
) -> SelfCheckResult:
    """
    Compare backward against finite differences on random batches.

    The model is built for 6 inputs and 3 classes. Models with more than
    `max_coords` parameters are probed on a seeded per-tensor sample.

    Raises:
        SpecError: If the preset is unknown.
    """
    spec = models.resolve_preset(preset, CHECK_INPUT_DIM, CHECK_CLASSES, grid_size=grid_size)
    rng = np.random.default_rng(np.random.SeedSequence([seed, _STREAM_CHECK]))
    model = models.build_model(spec, rng)
    picks = _sample_coords(model.params.layout, max_coords, rng)
    coords = np.concatenate([idx for _, idx in picks])

    result = SelfCheckResult(
        preset=spec.preset or preset,
        grid_size=grid_size if spec.kind == ModelKind.KAN else None,
        seed=seed,
        tolerance=tolerance,
    )
    for b in range(batches):
        batch = Batch(
            features=rng.normal(size=(batch_size, CHECK_INPUT_DIM)),
            labels=rng.integers(0, CHECK_CLASSES, size=batch_size),
            num_classes=CHECK_CLASSES,
        )
        logits, cache = models.forward(model, batch.features)
        _, dlogits = softmax_cross_entropy(logits, batch.labels)
        analytic = models.backward(model, cache, dlogits).values

        def loss_at(theta: ParamVector) -> float:
            return models.batch_loss(model, theta.values, batch)

        numeric = finite_difference_gradient(loss_at, model.params, h=step, indices=coords).values
        for name, idx in picks:
            error = relative_error(analytic[idx], numeric[idx])
            result.tensors.append(TensorError(name=name, batch=b, error=error, coords=int(idx.size)))

    logger.debug(f"gradcheck {result.preset} g={grid_size} seed={seed}: max error {result.max_error:.3e}")
    return result


def check_targets(preset: str, grid_size: Optional[int] = None) -> List[Tuple[str, int]]:
    """
    (preset, grid) pairs to check. `all` expands to every preset, with KAN
    presets at each grid size in 3, 5, 10 unless one is given.
    """
    names = list(models.PRESET_NAMES) if preset.lower() == "all" else [preset]
    targets: List[Tuple[str, int]] = []
    for name in names:
        if name.lower() in models.KAN_PRESETS:
            grids = (grid_size,) if grid_size is not None else (
                KAN_GRID_SIZES if preset.lower() == "all" else (models.DEFAULT_GRID_SIZE,)
            )
            targets.extend((name, g) for g in grids)
        else:
            targets.append((name, models.DEFAULT_GRID_SIZE))
    return targets
