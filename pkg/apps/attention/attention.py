"""
Multi-head attention with per-query top-k key selection.

Scores for a query are restricted to its k_top best keys before the
activation phi is applied (restrict-then-normalize), so non-selected keys
get exactly zero weight and zero gradient.
"""
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple
import logging
import math

import numpy as np

from apps.autodiff import ops
from apps.autodiff.tensor import Tensor, parameter
from apps.core.exceptions import ConfigError, ContractError, DimensionError
from apps.sparse.activations import PHI_CHOICES, activate_rows

logger = logging.getLogger(__name__)

Params = Dict[str, Tensor]


@dataclass
class AttentionConfig:
    """Attention and routing hyperparameters."""
    d_model: int = 64
    n_heads: int = 4
    k_top: int = 32
    phi: str = 'entmax15'
    E: int = 8
    e: int = 2
    router_temp: float = 1.0
    # False keeps every key (dense path), whatever k_top says
    restrict: bool = True

    def validate(self) -> 'AttentionConfig':
        if self.d_model < 1 or self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}", field='d_model')
        if self.k_top < 1:
            raise ConfigError(f"must be >= 1, got {self.k_top}", field='k_top')
        if not 1 <= self.e <= self.E:
            raise ConfigError(f"need 1 <= e <= E, got e={self.e}, E={self.E}", field='e')
        if self.phi not in PHI_CHOICES:
            raise ConfigError(f"expected one of {', '.join(PHI_CHOICES)}, got '{self.phi}'", field='phi')
        if self.router_temp <= 0:
            raise ConfigError(f"must be positive, got {self.router_temp}", field='router_temp')
        return self

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class RoutingDecision:
    """
    Key selection and expert assignment for one attention/FFN pass.

    Either part may be absent: `select_topk` fills the key part and
    `route_experts` the expert part.
    """
    key_indices: Optional[np.ndarray] = None       # (..., n_q, k) selected keys per query
    expert_indices: Optional[np.ndarray] = None    # (n, e) experts per token
    expert_gates: Optional[Tensor] = None          # (n, e) renormalised gates
    router_probs: Optional[Tensor] = None          # (n, E) full router softmax

    @property
    def n_experts(self) -> int:
        return self.router_probs.shape[-1] if self.router_probs is not None else 0


@dataclass
class AttentionOutput:
    """Attention result plus what the trace needs."""
    output: Tensor
    key_indices: np.ndarray
    weights: np.ndarray
    empty_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def supports(self):
        """Per head and query, the key indices that received positive weight."""
        heads, queries = self.weights.shape[:2]
        return [
            [self.key_indices[h, i][self.weights[h, i] > 0] for i in range(queries)]
            for h in range(heads)
        ]


def init_attention_params(rng: np.random.Generator, d_model: int, prefix: str = 'attn') -> Params:
    scale = 1.0 / math.sqrt(d_model)
    params = {}
    for name in ('q', 'k', 'v', 'o'):
        params[f'{prefix}.w_{name}'] = parameter(rng.normal(scale=scale, size=(d_model, d_model)), f'{prefix}.w_{name}')
        params[f'{prefix}.b_{name}'] = parameter(np.zeros(d_model), f'{prefix}.b_{name}')
    return params


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """(n, d) -> (heads, n, d / heads)."""
    n, d = x.shape
    return ops.transpose(x.reshape(n, n_heads, d // n_heads), (1, 0, 2))


def merge_heads(x: Tensor) -> Tensor:
    """(heads, n, d_head) -> (n, heads * d_head)."""
    heads, n, d_head = x.shape
    return ops.transpose(x, (1, 0, 2)).reshape(n, heads * d_head)


def project_qkv(
    h: Tensor,
    params: Params,
    config: AttentionConfig,
    kv_source: Optional[Tensor] = None,
    prefix: str = 'attn',
) -> Tuple[Tensor, Tensor, Tensor]:
    """
    Learned Q/K/V projections split per head.

    Queries come from `h`; keys and values from `kv_source` when given
    (current tokens followed by memory rows).
    """
    source = h if kv_source is None else kv_source
    for x in (h, source):
        if x.ndim != 2 or x.shape[-1] != config.d_model:
            raise DimensionError("project_qkv: last extent must equal d_model", x.shape, (config.d_model,))
    q = ops.linear(h, params[f'{prefix}.w_q'], params[f'{prefix}.b_q'])
    k = ops.linear(source, params[f'{prefix}.w_k'], params[f'{prefix}.b_k'])
    v = ops.linear(source, params[f'{prefix}.w_v'], params[f'{prefix}.b_v'])
    return tuple(split_heads(t, config.n_heads) for t in (q, k, v))


def topk_indices(scores: np.ndarray, k_top: int) -> np.ndarray:
    """Indices of the k_top largest scores along the last axis; ties go to the lower index."""
    if k_top < 1:
        raise ContractError(f"k_top must be >= 1, got {k_top}")
    order = np.argsort(-scores, axis=-1, kind='stable')
    return order[..., :min(k_top, scores.shape[-1])]


def select_topk(scores, k_top: int) -> RoutingDecision:
    data = scores.data if isinstance(scores, Tensor) else np.asarray(scores, dtype=np.float64)
    if np.isnan(data).any():
        raise ContractError("select_topk: scores contain NaN")
    return RoutingDecision(key_indices=topk_indices(data, k_top))


def _head_index(n_heads: int) -> np.ndarray:
    return np.arange(n_heads)[:, None, None]


def sparse_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    params: Params,
    config: AttentionConfig,
    bias: Optional[Tensor] = None,
    candidates: Optional[np.ndarray] = None,
    candidate_mask: Optional[np.ndarray] = None,
    prefix: str = 'attn',
) -> AttentionOutput:
    """
    Top-k attention over (heads, n, d_head) projections.

    Args:
        bias: Additive score bias of shape (n_q, n_k), e.g. structure scores
        candidates: Optional (n_q, c) key indices to score instead of all keys
        candidate_mask: (n_q, c) validity of `candidates` entries

    Returns:
        AttentionOutput with the output-projected (n_q, d_model) tensor
    """
    heads, n_q, d_head = q.shape
    n_k = k.shape[1]
    if k.shape != v.shape or k.shape[0] != heads or k.shape[2] != d_head:
        raise DimensionError("sparse_attention: Q/K/V shapes disagree", q.shape, k.shape, v.shape)
    if bias is not None and bias.shape != (n_q, n_k):
        raise DimensionError("sparse_attention: bias must be (n_q, n_k)", bias.shape, (n_q, n_k))
    scale = 1.0 / math.sqrt(d_head)
    head_index = _head_index(heads)

    if candidates is None:
        scores = ops.matmul(q, ops.transpose(k, (0, 2, 1))) * scale
        if bias is not None:
            scores = scores + bias
        pool = None
    else:
        candidates = np.asarray(candidates, dtype=np.int64)
        if candidates.shape[0] != n_q:
            raise DimensionError("sparse_attention: one candidate row per query", candidates.shape, (n_q,))
        keys = ops.getitem(k, (head_index, candidates[None]))             # (H, n_q, c, dh)
        scores = ops.matmul(q.reshape(heads, n_q, 1, d_head), ops.transpose(keys, (0, 1, 3, 2)))
        scores = scores.reshape(heads, n_q, candidates.shape[1]) * scale
        if bias is not None:
            scores = scores + ops.take_along_axis(bias, candidates, axis=-1)
        if candidate_mask is not None:
            scores = scores + Tensor(np.where(candidate_mask, 0.0, -np.inf))
        pool = np.broadcast_to(candidates, scores.shape)

    width = scores.shape[-1]
    keep = width if not config.restrict else min(config.k_top, width)

    if keep >= width and pool is None:
        weights = activate_rows(scores, config.phi)
        context = ops.matmul(weights, v)
        key_indices = np.broadcast_to(np.arange(n_k), (heads, n_q, n_k))
        weight_data = weights.data
    else:
        local = topk_indices(scores.data, keep)
        picked = ops.take_along_axis(scores, local, axis=-1)
        weights = activate_rows(picked, config.phi)
        key_indices = local if pool is None else np.take_along_axis(pool, local, axis=-1)
        values = ops.getitem(v, (head_index, key_indices))               # (H, n_q, keep, dh)
        context = ops.matmul(weights.reshape(heads, n_q, 1, keep), values).reshape(heads, n_q, d_head)
        weight_data = weights.data

    empty_rows = weight_data.sum(axis=-1) == 0
    if empty_rows.any():
        logger.warning(f"{int(empty_rows.sum())} attention rows have empty support; emitting zero rows")

    output = ops.linear(merge_heads(context), params[f'{prefix}.w_o'], params[f'{prefix}.b_o'])
    return AttentionOutput(output, np.asarray(key_indices), weight_data, empty_rows)


def multi_head_attention(
    h: Tensor,
    params: Params,
    config: AttentionConfig,
    kv_source: Optional[Tensor] = None,
    bias: Optional[Tensor] = None,
    candidates: Optional[np.ndarray] = None,
    candidate_mask: Optional[np.ndarray] = None,
) -> AttentionOutput:
    """project_qkv followed by sparse_attention."""
    q, k, v = project_qkv(h, params, config, kv_source)
    return sparse_attention(q, k, v, params, config, bias, candidates, candidate_mask)
