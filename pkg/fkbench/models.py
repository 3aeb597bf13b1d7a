"""
FastKAN and MLP models with exact analytic backward passes.

A KAN layer maps m inputs to p outputs as
    u = layer_norm(a); features = [rbf_expand(u_i) for i in 1..m]; out = W @ features + b
with W of shape p x (m*g). An MLP layer is out = ReLU(W @ a + b), linear on the
output layer. Parameters live in one flat ParamVector laid out by layer index,
weight before bias, row-major.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .exceptions import CacheError, ShapeError, SpecError
from .numkit import softmax_cross_entropy
from .types import (
    Batch,
    GradVector,
    Layout,
    ModelKind,
    ModelSpec,
    ParamVector,
    RbfGrid,
)

LAYER_NORM_EPS = 1e-5
DEFAULT_GRID_SIZE = 5
DEFAULT_GRID_RANGE: Tuple[float, float] = (-2.0, 2.0)
DEFAULT_MLP_WIDTH = 64

# KAN presets are fixed hidden widths; MLP presets are layer counts whose
# hidden layers take the configured MLP width.
KAN_PRESETS: Dict[str, Tuple[int, ...]] = {
    "kan-1": (5,),
    "kan-d1": (5,),
    "kan-d3": (5, 5, 5),
    "kan-d5": (5, 5, 5, 5, 5),
    "kan-w1": (5,),
    "kan-w3": (125,),
    "kan-w5": (3125,),
}
MLP_PRESETS: Dict[str, int] = {
    "mlp-1": 1,
    "mlp-2": 2,
    "mlp-3": 3,
}
PRESET_NAMES: Tuple[str, ...] = (*KAN_PRESETS, *MLP_PRESETS)


def resolve_preset(
    name: str,
    input_dim: int,
    output_dim: int,
    grid_size: int = DEFAULT_GRID_SIZE,
    grid_range: Tuple[float, float] = DEFAULT_GRID_RANGE,
    mlp_width: int = DEFAULT_MLP_WIDTH,
) -> ModelSpec:
    """
    Build the ModelSpec for a named preset.

    Raises:
        SpecError: If the preset name is unknown or the resulting spec is invalid.
    """
    key = name.strip().lower()
    if key in KAN_PRESETS:
        spec = ModelSpec(
            kind=ModelKind.KAN,
            input_dim=input_dim,
            hidden_widths=KAN_PRESETS[key],
            output_dim=output_dim,
            grid_size=grid_size,
            grid_range=(float(grid_range[0]), float(grid_range[1])),
            preset=key,
        )
    elif key in MLP_PRESETS:
        spec = ModelSpec(
            kind=ModelKind.MLP,
            input_dim=input_dim,
            hidden_widths=(mlp_width,) * (MLP_PRESETS[key] - 1),
            output_dim=output_dim,
            preset=key,
        )
    else:
        raise SpecError(f"Unknown model preset {name!r} (expected one of {', '.join(PRESET_NAMES)})")
    spec.validate()
    return spec


def layer_feature_width(spec: ModelSpec, fan_in: int) -> int:
    """Columns of a layer's weight matrix."""
    return fan_in * spec.grid_size if spec.kind == ModelKind.KAN else fan_in


def model_layout(spec: ModelSpec) -> Layout:
    """Deterministic layout: per layer, weight (p x features) then bias (p)."""
    entries = []
    for index, (fan_in, fan_out) in enumerate(spec.layer_dims):
        entries.append((f"layers.{index}.weight", (fan_out, layer_feature_width(spec, fan_in))))
        entries.append((f"layers.{index}.bias", (fan_out,)))
    return tuple(entries)


def parameter_count(spec: ModelSpec) -> int:
    """KAN layer m->p: p*m*g + p; MLP layer m->p: p*m + p."""
    return sum(p * layer_feature_width(spec, m) + p for m, p in spec.layer_dims)


# ==================== Building Blocks ====================


def rbf_expand(u: "np.ndarray | float", grid: RbfGrid) -> np.ndarray:
    """
    Gaussian basis responses exp(-((u - c_k) / bandwidth)^2).

    Broadcasts over `u`: the result has shape u.shape + (g,).
    """
    scaled = (np.asarray(u, dtype=np.float64)[..., None] - grid.centers) / grid.bandwidth
    return np.asarray(np.exp(-(scaled * scaled)))


def _normalize(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    sigma = np.sqrt(var + LAYER_NORM_EPS)
    return centered / sigma, sigma


def layer_norm(x: np.ndarray) -> np.ndarray:
    """(x - mean) / sqrt(var + eps) over the last axis, no affine terms."""
    normed, _ = _normalize(np.asarray(x, dtype=np.float64))
    return normed


def layer_norm_backward(normed: np.ndarray, sigma: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Input gradient of layer_norm given its output, scale and output gradient."""
    mean_grad = grad.mean(axis=-1, keepdims=True)
    mean_proj = (grad * normed).mean(axis=-1, keepdims=True)
    return np.asarray((grad - mean_grad - normed * mean_proj) / sigma)


# ==================== Model ====================


@dataclass(frozen=True, eq=False)
class Model:
    """An instantiated ModelSpec: its parameters and per-layer RBF grids."""

    spec: ModelSpec
    params: ParamVector
    grids: Tuple[Optional[RbfGrid], ...]
    _offsets: Tuple[Tuple[int, int, Tuple[int, ...]], ...] = field(repr=False, default=())

    @property
    def num_layers(self) -> int:
        return len(self.spec.layer_dims)

    def with_params(self, params: ParamVector) -> "Model":
        if params.layout != self.params.layout:
            raise SpecError("replacement parameters do not match the model layout")
        return Model(spec=self.spec, params=params, grids=self.grids, _offsets=self._offsets)

    def tensors(self, values: np.ndarray) -> List[np.ndarray]:
        """Reshaped views into a flat value array, in layout order."""
        return [values[start:stop].reshape(shape) for start, stop, shape in self._offsets]


def _offsets_for(layout: Layout) -> Tuple[Tuple[int, int, Tuple[int, ...]], ...]:
    out = []
    start = 0
    for _, shape in layout:
        stop = start + int(np.prod(shape, dtype=np.int64))
        out.append((start, stop, shape))
        start = stop
    return tuple(out)


def build_model(spec: ModelSpec, rng: np.random.Generator) -> Model:
    """
    Instantiate a model with Xavier-uniform weights and zero biases.

    Raises:
        SpecError: If the spec is invalid.
    """
    spec.validate()
    layout = model_layout(spec)
    tensors = []
    for name, shape in layout:
        if name.endswith(".weight"):
            fan_out, fan_in = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            tensors.append(rng.uniform(-limit, limit, size=shape).reshape(-1))
        else:
            tensors.append(np.zeros(shape, dtype=np.float64))
    params = ParamVector(values=np.concatenate(tensors), layout=layout)

    if spec.kind == ModelKind.KAN:
        grid = RbfGrid.uniform(spec.grid_size, spec.grid_range)
        grids: Tuple[Optional[RbfGrid], ...] = tuple(grid for _ in spec.layer_dims)
    else:
        grids = tuple(None for _ in spec.layer_dims)
    return Model(spec=spec, params=params, grids=grids, _offsets=_offsets_for(layout))


@dataclass
class LayerCache:
    inputs: np.ndarray
    features: np.ndarray
    normed: Optional[np.ndarray] = None
    sigma: Optional[np.ndarray] = None
    basis: Optional[np.ndarray] = None
    pre_activation: Optional[np.ndarray] = None


@dataclass
class ForwardCache:
    """Per-layer activations of one forward pass."""

    spec: ModelSpec
    values: np.ndarray
    layers: List[LayerCache]
    logits_shape: Tuple[int, int]


def forward(
    model: Model,
    features: np.ndarray,
    params: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, ForwardCache]:
    """
    Compute logits for a feature matrix.

    Args:
        model: The model
        features: n x input_dim matrix
        params: Flat values to use instead of model.params (same layout)

    Returns:
        (logits n x C, cache for backward)

    Raises:
        ShapeError: If the feature width does not match the spec.
    """
    spec = model.spec
    if features.ndim != 2 or features.shape[1] != spec.input_dim:
        raise ShapeError(
            f"expected features of shape (n, {spec.input_dim}), got {features.shape}"
        )
    values = model.params.values if params is None else params
    if values.shape != model.params.values.shape:
        raise ShapeError("parameter override does not match the model layout")

    tensors = model.tensors(values)
    n = features.shape[0]
    last = model.num_layers - 1
    activations = np.asarray(features, dtype=np.float64)
    layers: List[LayerCache] = []

    for index in range(model.num_layers):
        weight, bias = tensors[2 * index], tensors[2 * index + 1]
        grid = model.grids[index]
        if grid is not None:
            normed, sigma = _normalize(activations)
            basis = rbf_expand(normed, grid)
            flat = basis.reshape(n, -1)
            out = flat @ weight.T + bias
            layers.append(
                LayerCache(inputs=activations, features=flat, normed=normed, sigma=sigma, basis=basis)
            )
        else:
            pre = activations @ weight.T + bias
            layers.append(LayerCache(inputs=activations, features=activations, pre_activation=pre))
            out = pre if index == last else np.maximum(pre, 0.0)
        activations = out

    cache = ForwardCache(spec=spec, values=values, layers=layers, logits_shape=activations.shape)
    return activations, cache


def backward(model: Model, cache: ForwardCache, dlogits: np.ndarray) -> GradVector:
    """
    Exact gradient of the batch loss with respect to every parameter.

    Raises:
        CacheError: If the cache came from a different model or batch shape.
    """
    if cache.spec != model.spec or len(cache.layers) != model.num_layers:
        raise CacheError("forward cache belongs to a different model")
    if dlogits.shape != cache.logits_shape:
        raise CacheError(
            f"dlogits shape {dlogits.shape} does not match cached logits {cache.logits_shape}"
        )

    tensors = model.tensors(cache.values)
    grads: List[np.ndarray] = [np.empty(0)] * len(tensors)
    last = model.num_layers - 1
    upstream = dlogits

    for index in range(last, -1, -1):
        layer = cache.layers[index]
        weight = tensors[2 * index]
        grid = model.grids[index]

        if grid is None and index != last:
            assert layer.pre_activation is not None
            upstream = upstream * (layer.pre_activation > 0.0)

        grads[2 * index] = upstream.T @ layer.features
        grads[2 * index + 1] = upstream.sum(axis=0)
        if index == 0:
            break

        dfeatures = upstream @ weight
        if grid is not None:
            assert layer.normed is not None and layer.sigma is not None and layer.basis is not None
            n, m = layer.normed.shape
            dbasis = dfeatures.reshape(n, m, -1)
            offset = layer.normed[..., None] - grid.centers
            dnormed = (dbasis * layer.basis * (-2.0 * offset / grid.bandwidth**2)).sum(axis=-1)
            upstream = layer_norm_backward(layer.normed, layer.sigma, dnormed)
        else:
            upstream = dfeatures

    flat = np.concatenate([g.reshape(-1) for g in grads])
    return model.params.with_values(flat)


def loss_and_gradient(
    model: Model, values: np.ndarray, batch: Batch
) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy on a batch and its flat parameter gradient."""
    logits, cache = forward(model, batch.features, values)
    loss, dlogits = softmax_cross_entropy(logits, batch.labels)
    return loss, backward(model, cache, dlogits).values


def batch_loss(model: Model, values: np.ndarray, batch: Batch) -> float:
    """Mean cross-entropy on a batch."""
    logits, _ = forward(model, batch.features, values)
    loss, _ = softmax_cross_entropy(logits, batch.labels)
    return loss
