"""
Two-level memory for the weight-tied recurrence.

The token cache holds a gradient-detached copy of the last hidden states.
The segment memory S has m slots; each iteration pools the hidden states
into a summary S_hat (attention-weighted average) and folds it into S with
a per-slot gate alpha:

    S_new = alpha * S_prev + (1 - alpha) * S_hat
"""
from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple
import logging
import math

import numpy as np

from apps.autodiff import ops
from apps.autodiff.tensor import Tensor, parameter
from apps.core.exceptions import DimensionError

logger = logging.getLogger(__name__)

Params = Dict[str, Tensor]


@dataclass(frozen=True)
class HierMemory:
    """Memory state owned by one forward pass."""
    token_cache: Optional[Tensor] = None
    segment: Optional[Tensor] = None
    step: int = 0
    alpha: Optional[np.ndarray] = None
    pool_weights: Optional[np.ndarray] = None

    @property
    def is_empty(self) -> bool:
        return self.token_cache is None and self.segment is None

    def footprint(self) -> int:
        """Number of stored floats (cache plus slots)."""
        return sum(t.size for t in (self.token_cache, self.segment) if t is not None)


def init_memory_params(rng: np.random.Generator, d_model: int, slots: int, prefix: str = 'memory') -> Params:
    return {
        f'{prefix}.pool_queries': parameter(rng.normal(size=(slots, d_model)), f'{prefix}.pool_queries'),
        f'{prefix}.gate_w': parameter(rng.normal(scale=1.0 / math.sqrt(2 * d_model), size=(2 * d_model, 1)), f'{prefix}.gate_w'),
        f'{prefix}.gate_b': parameter(np.zeros(1), f'{prefix}.gate_b'),
    }


def pool_weights(h: Tensor, pool_queries: Tensor) -> Tensor:
    """(m, n) weights: softmax over tokens of pool_query . h / sqrt(d)."""
    if h.ndim != 2 or h.shape[0] < 1 or h.shape[1] != pool_queries.shape[1]:
        raise DimensionError("pool_segment: hidden states must be (n>=1, d)", h.shape, pool_queries.shape)
    scores = ops.matmul(pool_queries, ops.transpose(h)) * (1.0 / math.sqrt(h.shape[1]))
    return ops.softmax_rows(scores)


def pool_segment(h: Tensor, pool_queries: Tensor) -> Tensor:
    """Compressive summary S_hat (m, d); every row is a convex combination of the rows of h."""
    return ops.matmul(pool_weights(h, pool_queries), h)


def gated_update(
    s_prev: Tensor,
    s_hat: Tensor,
    params: Params,
    force_alpha: Optional[float] = None,
    prefix: str = 'memory',
) -> Tuple[Tensor, Tensor]:
    """
    Blend the previous memory with the new summary.

    alpha = sigmoid([S_prev || S_hat] @ w + b) is one scalar per slot.
    `force_alpha` pins it for tests.
    """
    if s_prev.shape != s_hat.shape:
        raise DimensionError("gated_update: memory and summary differ", s_prev.shape, s_hat.shape)
    if force_alpha is None:
        logits = ops.linear(ops.concat([s_prev, s_hat], axis=1), params[f'{prefix}.gate_w'], params[f'{prefix}.gate_b'])
        alpha = ops.sigmoid(logits)
    else:
        alpha = Tensor(np.full((s_prev.shape[0], 1), float(force_alpha)))
    s_new = alpha * s_prev + (1.0 - alpha) * s_hat
    return s_new, alpha


def update_memory(
    h: Tensor,
    memory: HierMemory,
    params: Params,
    force_alpha: Optional[float] = None,
    prefix: str = 'memory',
) -> HierMemory:
    """Cache h (detached) and fold its pooled summary into S; the first update sets S directly."""
    weights = pool_weights(h, params[f'{prefix}.pool_queries'])
    s_hat = ops.matmul(weights, h)
    if memory.segment is None:
        segment, alpha = s_hat, None
    else:
        segment, alpha_t = gated_update(memory.segment, s_hat, params, force_alpha, prefix)
        alpha = alpha_t.data[:, 0].copy()
    return HierMemory(
        token_cache=h.detach(),
        segment=segment,
        step=memory.step + 1,
        alpha=alpha,
        pool_weights=weights.data.copy(),
    )


def memory_kv(memory: HierMemory) -> Optional[Tensor]:
    """Rows to append to the attention keys/values: token cache then segment slots."""
    parts = [t for t in (memory.token_cache, memory.segment) if t is not None]
    if not parts:
        return None
    return parts[0] if len(parts) == 1 else ops.concat(parts, axis=0)


def with_cache(memory: HierMemory, cache: Optional[Tensor]) -> HierMemory:
    """Same memory with a different token cache."""
    return replace(memory, token_cache=cache)
