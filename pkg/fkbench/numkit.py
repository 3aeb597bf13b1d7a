"""
Dense numerics for FKBench.

Parameter flattening, vector algebra over ParamVectors, softmax
cross-entropy with its analytic gradient, and the central finite-difference
oracle every backward pass is tested against. All functions are pure.
"""

from __future__ import annotations

from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import LayoutError, NumericError, ShapeError
from .types import GradVector, Layout, ParamVector

DEFAULT_FD_STEP = 1e-4
NORM_FLOOR = 1e-12


def flatten(
    tensors: Sequence[Tuple[str, np.ndarray]],
    layout: Optional[Layout] = None,
) -> ParamVector:
    """
    Concatenate named tensors row-major in order.

    Args:
        tensors: (name, array) pairs in layout order
        layout: Expected layout; inferred from the tensors when omitted

    Returns:
        ParamVector whose layout records each tensor's name and shape.

    Raises:
        LayoutError: If the list is empty or disagrees with `layout`.
    """
    if not tensors:
        raise LayoutError("cannot flatten an empty tensor list")

    actual: Layout = tuple((name, tuple(np.shape(t))) for name, t in tensors)
    if layout is not None and tuple(layout) != actual:
        raise LayoutError(f"tensor shapes {actual} do not match layout {tuple(layout)}")

    values = np.concatenate(
        [np.asarray(t, dtype=np.float64).reshape(-1) for _, t in tensors]
    )
    return ParamVector(values=values, layout=actual)


def unflatten(vector: ParamVector) -> List[Tuple[str, np.ndarray]]:
    """Split a ParamVector back into independent (name, tensor) copies."""
    out: List[Tuple[str, np.ndarray]] = []
    offset = 0
    for name, shape in vector.layout:
        count = int(np.prod(shape, dtype=np.int64))
        out.append((name, vector.values[offset : offset + count].reshape(shape).copy()))
        offset += count
    return out


def check_compatible(x: ParamVector, y: ParamVector) -> None:
    """Raise LayoutError unless x and y share length and segment order."""
    if x.layout != y.layout or x.size != y.size:
        raise LayoutError("parameter vectors have different layouts")


def axpy(a: float, x: ParamVector, y: ParamVector) -> ParamVector:
    """Return a*x + y element-wise; neither operand is modified."""
    check_compatible(x, y)
    return y.with_values(a * x.values + y.values)


def zeros_like(x: ParamVector) -> ParamVector:
    return x.with_values(np.zeros_like(x.values))


def l2_norm(values: np.ndarray) -> float:
    return float(np.sqrt(np.dot(values, values)))


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> Tuple[float, np.ndarray]:
    """
    Mean softmax cross-entropy and its gradient with respect to the logits.

    Args:
        logits: n x C matrix
        labels: n integer class ids in [0, C)

    Returns:
        (loss, dlogits) where dlogits = (softmax - one_hot) / n.
    """
    if logits.ndim != 2 or labels.ndim != 1 or logits.shape[0] != labels.shape[0]:
        raise ShapeError(
            f"logits {logits.shape} and labels {labels.shape} are not an n x C / n pair"
        )
    n, num_classes = logits.shape
    if n < 1:
        raise ShapeError("softmax_cross_entropy needs at least one sample")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ShapeError(f"labels must lie in [0, {num_classes})")

    rows = np.arange(n)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    sums = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(sums)
    loss = float(-log_probs[rows, labels].mean())

    dlogits = exp / sums
    dlogits[rows, labels] -= 1.0
    dlogits /= n
    return loss, dlogits


def finite_difference_gradient(
    f: Callable[[ParamVector], float],
    theta: ParamVector,
    h: float = DEFAULT_FD_STEP,
    indices: Optional[np.ndarray] = None,
) -> GradVector:
    """
    Central finite-difference gradient of a scalar function.

    Component k is (f(theta + h e_k) - f(theta - h e_k)) / (2h). When
    `indices` is given only those components are computed; the rest are 0.

    Raises:
        NumericError: If any evaluation of f is not finite, or h <= 0.
    """
    if not h > 0:
        raise NumericError(f"finite-difference step must be positive, got {h}")

    coords = np.arange(theta.size) if indices is None else np.asarray(indices, dtype=np.int64)
    grad = np.zeros_like(theta.values)
    probe = theta.values.copy()

    for k in coords:
        original = probe[k]
        probe[k] = original + h
        f_plus = f(theta.with_values(probe))
        probe[k] = original - h
        f_minus = f(theta.with_values(probe))
        probe[k] = original
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError(f"non-finite function value probing coordinate {int(k)}")
        grad[k] = (f_plus - f_minus) / (2.0 * h)

    return theta.with_values(grad)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||), floored to avoid 0/0."""
    scale = max(l2_norm(a), l2_norm(b), NORM_FLOOR)
    return l2_norm(a - b) / scale
