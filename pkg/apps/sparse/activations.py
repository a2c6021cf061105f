"""
Sparse probability mappings.

sparsemax is the Euclidean projection onto the probability simplex
(sort-and-threshold); entmax-1.5 finds its threshold by bisection. Both work
row-wise over the last axis, treat -inf as a masked entry, and return an all
zero row when every entry is masked.
"""
from dataclasses import dataclass
from typing import Tuple
import logging

import numpy as np

from apps.autodiff.ops import softmax_array
from apps.autodiff.tensor import Tensor, make_result
from apps.core.exceptions import ContractError, DimensionError, NumericError

logger = logging.getLogger(__name__)

PHI_CHOICES = ('softmax', 'sparsemax', 'entmax15')

ENTMAX_MAX_ITER = 100
ENTMAX_TOLERANCE = 1e-9


@dataclass
class SparseDist:
    """A probability vector together with its support and threshold."""
    probs: np.ndarray
    support: np.ndarray
    threshold_tau: float

    @classmethod
    def from_probs(cls, probs: np.ndarray, tau: float) -> 'SparseDist':
        return cls(probs=probs, support=np.flatnonzero(probs > 0), threshold_tau=float(tau))


def _check_scores(z: np.ndarray, name: str) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 0 or z.shape[-1] == 0:
        raise ContractError(f"{name}: empty score vector")
    if np.isnan(z).any() or np.isposinf(z).any():
        raise NumericError(f"{name}: scores must be finite or -inf (masked)")
    return z


# =============================================================================
# sparsemax
# =============================================================================

def sparsemax_rows(z) -> Tuple[np.ndarray, np.ndarray]:
    """
    Row-wise sparsemax over the last axis.

    Returns:
        (probs, tau); tau is +inf for fully masked rows
    """
    z = _check_scores(z, 'sparsemax')
    p = z.shape[-1]
    ordered = -np.sort(-z, axis=-1)
    finite = np.isfinite(ordered)
    cumulative = np.cumsum(np.where(finite, ordered, 0.0), axis=-1)
    ranks = np.arange(1, p + 1, dtype=np.float64)
    in_support = finite & (1.0 + ranks * np.where(finite, ordered, 0.0) > cumulative)
    k_star = np.where(in_support, ranks, 0.0).max(axis=-1)

    index = np.maximum(k_star.astype(np.int64) - 1, 0)[..., None]
    top_sum = np.take_along_axis(cumulative, index, axis=-1)[..., 0]
    tau = np.where(k_star > 0, (top_sum - 1.0) / np.maximum(k_star, 1.0), np.inf)
    probs = np.maximum(z - tau[..., None], 0.0)
    return probs, tau


def sparsemax(z) -> SparseDist:
    z = _check_scores(z, 'sparsemax')
    if z.ndim != 1:
        raise DimensionError("sparsemax expects a vector", z.shape)
    probs, tau = sparsemax_rows(z)
    return SparseDist.from_probs(probs, tau)


def sparsemax_jvp_rows(probs: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    support = (probs > 0).astype(np.float64)
    count = support.sum(axis=-1, keepdims=True)
    centre = (upstream * support).sum(axis=-1, keepdims=True) / np.maximum(count, 1.0)
    return support * (upstream - centre)


def sparsemax_jvp(dist: SparseDist, upstream) -> np.ndarray:
    """s * (upstream - mean of upstream over the support)."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != dist.probs.shape:
        raise DimensionError("sparsemax_jvp: upstream shape differs", dist.probs.shape, upstream.shape)
    return sparsemax_jvp_rows(dist.probs, upstream)


# =============================================================================
# entmax-1.5
# =============================================================================

def entmax15_rows(z) -> Tuple[np.ndarray, np.ndarray]:
    """
    Row-wise entmax-1.5 over the last axis: probs = max(z/2 - tau, 0)**2.

    tau is bracketed by [max(z)/2 - 1, max(z)/2] and bisected.
    """
    z = _check_scores(z, 'entmax15')
    half = z / 2.0
    peak = half.max(axis=-1)
    live = np.isfinite(peak)
    peak = np.where(live, peak, 0.0)

    lo = peak - 1.0
    hi = peak.copy()
    for _ in range(ENTMAX_MAX_ITER):
        mid = 0.5 * (lo + hi)
        mass = (np.maximum(half - mid[..., None], 0.0) ** 2).sum(axis=-1)
        too_much = mass >= 1.0
        lo = np.where(too_much, mid, lo)
        hi = np.where(too_much, hi, mid)
        if np.all(hi - lo <= np.spacing(np.maximum(np.abs(peak), 1.0))):
            break

    tau = 0.5 * (lo + hi)
    probs = np.maximum(half - tau[..., None], 0.0) ** 2
    total = probs.sum(axis=-1)
    residual = np.abs(total - 1.0)
    if np.any(live & (residual > ENTMAX_TOLERANCE)):
        raise NumericError(f"entmax15: bisection left residual {residual[live].max():.2e}")
    probs = np.divide(probs, total[..., None], out=np.zeros_like(probs), where=live[..., None])
    return probs, np.where(live, tau, np.inf)


def entmax15(z) -> SparseDist:
    z = _check_scores(z, 'entmax15')
    if z.ndim != 1:
        raise DimensionError("entmax15 expects a vector", z.shape)
    probs, tau = entmax15_rows(z)
    return SparseDist.from_probs(probs, tau)


def entmax15_jvp_rows(probs: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    d = np.sqrt(probs)
    total = d.sum(axis=-1, keepdims=True)
    weighted = (d * upstream).sum(axis=-1, keepdims=True)
    ratio = np.divide(weighted, total, out=np.zeros_like(weighted), where=total > 0)
    return d * upstream - d * ratio


def entmax15_jvp(dist: SparseDist, upstream) -> np.ndarray:
    """d * upstream - d * (sum(d * upstream) / sum(d)) with d = sqrt(probs)."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != dist.probs.shape:
        raise DimensionError("entmax15_jvp: upstream shape differs", dist.probs.shape, upstream.shape)
    return entmax15_jvp_rows(dist.probs, upstream)


# =============================================================================
# softmax and dispatch
# =============================================================================

def softmax(z) -> SparseDist:
    z = _check_scores(z, 'softmax')
    probs = softmax_array(z)
    return SparseDist.from_probs(probs, -np.inf)


def softmax_jvp_rows(probs: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    return probs * (upstream - (upstream * probs).sum(axis=-1, keepdims=True))


ROW_MAPPINGS = {
    'softmax': (lambda z: (softmax_array(_check_scores(z, 'softmax')), None), softmax_jvp_rows),
    'sparsemax': (sparsemax_rows, sparsemax_jvp_rows),
    'entmax15': (entmax15_rows, entmax15_jvp_rows),
}


def check_phi(phi: str) -> str:
    if phi not in ROW_MAPPINGS:
        raise ContractError(f"unknown activation '{phi}', expected one of {', '.join(PHI_CHOICES)}")
    return phi


def activate_rows(x: Tensor, phi: str) -> Tensor:
    """Apply phi row-wise to a score tensor; -inf entries get probability 0."""
    forward, jvp = ROW_MAPPINGS[check_phi(phi)]
    probs, _ = forward(x.data)
    # All three Jacobians are symmetric, so the JVP doubles as the VJP.
    return make_result(f"activate_{phi}", probs, (x,), lambda g: (jvp(probs, g),))
