"""
Differentiable operations on `Tensor`.

Each op computes its value with numpy and, when a tape is active and any
input carries gradient, records a backward rule mapping the upstream
gradient to one gradient per input (None for non-differentiable inputs).
"""
from typing import Optional, Sequence, Tuple
import math

import numpy as np

from apps.core.exceptions import ContractError, DimensionError, NumericError

from .tensor import Tensor, as_tensor, make_result

LAYER_NORM_EPS = 1e-5
IGNORE_INDEX = -1

# tanh approximation of gelu
GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(op: str, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: operands do not broadcast", a.shape, b.shape) from None


# =============================================================================
# Elementwise binary
# =============================================================================

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check('add', a, b)

    def rule(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result('add', a.data + b.data, (a, b), rule)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check('sub', a, b)

    def rule(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_result('sub', a.data - b.data, (a, b), rule)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check('mul', a, b)

    def rule(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return make_result('mul', a.data * b.data, (a, b), rule)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check('div', a, b)

    def rule(g):
        return (
            unbroadcast(g / b.data, a.shape),
            unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return make_result('div', a.data / b.data, (a, b), rule)


# =============================================================================
# Elementwise unary
# =============================================================================

def neg(x: Tensor) -> Tensor:
    return make_result('neg', -x.data, (x,), lambda g: (-g,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_result('exp', out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return make_result('log', np.log(x.data), (x,), lambda g: (g / x.data,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_result('tanh', out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_result('sigmoid', out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result('relu', np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def gelu(x: Tensor) -> Tensor:
    v = x.data
    t = np.tanh(GELU_C * (v + GELU_A * v ** 3))
    out = 0.5 * v * (1.0 + t)

    def rule(g):
        du = GELU_C * (1.0 + 3.0 * GELU_A * v * v)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du),)

    return make_result('gelu', out, (x,), rule)


ELEMENTWISE_OPS = {
    'add': add,
    'sub': sub,
    'mul': mul,
    'div': div,
    'sigmoid': sigmoid,
    'relu': relu,
    'gelu': gelu,
    'tanh': tanh,
    'exp': exp,
    'neg': neg,
}
BINARY_OPS = {'add', 'sub', 'mul', 'div'}


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch an elementwise op by name."""
    if op not in ELEMENTWISE_OPS:
        raise ContractError(f"unknown elementwise op '{op}'")
    if op in BINARY_OPS:
        if b is None:
            raise ContractError(f"elementwise op '{op}' needs two operands")
        return ELEMENTWISE_OPS[op](a, b)
    return ELEMENTWISE_OPS[op](as_tensor(a))


# =============================================================================
# Linear algebra and reductions
# =============================================================================

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast as batch."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul: inner extents differ", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError("matmul: batch axes do not broadcast", a.shape, b.shape) from None

    def rule(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return make_result('matmul', out, (a, b), rule)


def _expand_reduced(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).copy()


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)
    return make_result('sum', out, (x,), lambda g: (_expand_reduced(g, x.shape, axis, keepdims),))


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = np.mean(x.data, axis=axis, keepdims=keepdims)
    count = x.data.size / max(out.size, 1) if x.data.size else 1.0

    def rule(g):
        return (_expand_reduced(g, x.shape, axis, keepdims) / count,)

    return make_result('mean', out, (x,), rule)


# =============================================================================
# Shape and indexing
# =============================================================================

def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape to {tuple(np.atleast_1d(shape))}", x.shape) from None
    return make_result('reshape', out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return make_result('transpose', np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError("concat: shapes disagree off the concat axis", *(t.shape for t in tensors)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result('concat', out, tensors, rule)


def getitem(x: Tensor, key) -> Tensor:
    """Basic or fancy indexing; repeated indices accumulate in backward."""
    out = np.array(x.data[key], dtype=np.float64)

    def rule(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        return (full,)

    return make_result('getitem', out, (x,), rule)


def _along_axis_key(indices: np.ndarray, axis: int):
    axis = axis % indices.ndim
    grids = list(np.ogrid[tuple(slice(0, extent) for extent in indices.shape)])
    grids[axis] = indices
    return tuple(grids)


def take_along_axis(x: Tensor, indices: np.ndarray, axis: int = -1) -> Tensor:
    """Gather `x` at integer `indices` along `axis`; other axes must match."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != x.ndim:
        raise DimensionError("take_along_axis: index rank differs", x.shape, indices.shape)
    key = _along_axis_key(indices, axis)
    out = x.data[key]

    def rule(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        return (full,)

    return make_result('take_along_axis', out, (x,), rule)


def scatter_rows(values: Tensor, rows: np.ndarray, n_rows: int) -> Tensor:
    """Zero (n_rows, d) tensor with `values` added at `rows`."""
    rows = np.asarray(rows, dtype=np.int64)
    if values.shape[0] != rows.shape[0]:
        raise DimensionError("scatter_rows: one row index per value row", values.shape, rows.shape)
    out = np.zeros((n_rows,) + values.shape[1:])
    np.add.at(out, rows, values.data)
    return make_result('scatter_rows', out, (values,), lambda g: (g[rows],))


# =============================================================================
# Normalisation, softmax, losses
# =============================================================================

def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalise the last axis to zero mean and unit variance, then apply gain and bias."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError("layer_norm: gain/bias must match the last extent", x.shape, gain.shape)
    if eps <= 0:
        raise ContractError(f"layer_norm: eps must be positive, got {eps}")

    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data

    def rule(g):
        dxhat = g * gain.data
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_result('layer_norm', out, (x, gain, bias), rule)


def softmax_array(z: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax over the last axis; -inf entries get probability 0."""
    if np.isnan(z).any():
        raise NumericError("softmax: NaN in input")
    peak = np.max(z, axis=-1, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    e = np.exp(z - peak)
    total = e.sum(axis=-1, keepdims=True)
    return np.divide(e, total, out=np.zeros_like(e), where=total > 0)


def softmax_rows(x: Tensor) -> Tensor:
    out = softmax_array(x.data)

    def rule(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return make_result('softmax_rows', out, (x,), rule)


def log_softmax_rows(x: Tensor) -> Tensor:
    if np.isnan(x.data).any():
        raise NumericError("log_softmax: NaN in input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    probs = np.exp(out)

    def rule(g):
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return make_result('log_softmax_rows', out, (x,), rule)


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore_index: int = IGNORE_INDEX) -> Tensor:
    """Mean cross-entropy over rows whose target is not `ignore_index`."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise DimensionError("cross_entropy: expects (n, V) logits and n targets", logits.shape, targets.shape)
    vocab = logits.shape[1]
    valid = targets != ignore_index
    if ((targets[valid] < 0) | (targets[valid] >= vocab)).any():
        raise ContractError(f"cross_entropy: target outside [0, {vocab})")
    count = int(valid.sum())

    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    rows = np.nonzero(valid)[0]
    value = -log_probs[rows, targets[rows]].sum() / count if count else 0.0

    def rule(g):
        grad = np.zeros_like(logits.data)
        if count:
            grad[rows] = np.exp(log_probs[rows])
            grad[rows, targets[rows]] -= 1.0
            grad *= float(g) / count
        return (grad,)

    return make_result('cross_entropy', np.asarray(value), (logits,), rule)


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity when rate is 0 or no generator is given."""
    if rate <= 0 or rng is None:
        return x
    if rate >= 1:
        raise ContractError(f"dropout rate must be < 1, got {rate}")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return make_result('dropout', x.data * mask, (x,), lambda g: (g * mask,))


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x @ weight (+ bias)."""
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out
