"""
Top-e of E expert routing for the feed-forward path.

Each token is sent to its e most probable experts; their router
probabilities are renormalised into gates. Experts nobody selected are
never evaluated, so they stay off the tape and get zero gradient.
"""
from typing import Optional
import logging
import math

import numpy as np

from apps.autodiff import ops
from apps.autodiff.tensor import Tensor, parameter
from apps.core.exceptions import ContractError, DimensionError

from .attention import AttentionConfig, Params, RoutingDecision, topk_indices

logger = logging.getLogger(__name__)

FFN_EXPANSION = 4


def init_expert_params(rng: np.random.Generator, d_model: int, n_experts: int, prefix: str = 'moe') -> Params:
    hidden = FFN_EXPANSION * d_model
    params = {
        f'{prefix}.router': parameter(rng.normal(scale=1.0 / math.sqrt(d_model), size=(d_model, n_experts)), f'{prefix}.router'),
    }
    for j in range(n_experts):
        name = f'{prefix}.expert{j}'
        params[f'{name}.w_in'] = parameter(rng.normal(scale=1.0 / math.sqrt(d_model), size=(d_model, hidden)), f'{name}.w_in')
        params[f'{name}.b_in'] = parameter(np.zeros(hidden), f'{name}.b_in')
        params[f'{name}.w_out'] = parameter(rng.normal(scale=1.0 / math.sqrt(hidden), size=(hidden, d_model)), f'{name}.w_out')
        params[f'{name}.b_out'] = parameter(np.zeros(d_model), f'{name}.b_out')
    return params


def route_experts(h: Tensor, params: Params, config: AttentionConfig, prefix: str = 'moe') -> RoutingDecision:
    """
    Router logits = h @ W_router / router_temp; softmax over E; keep top-e and renormalise.
    """
    router = params[f'{prefix}.router']
    if router.shape[-1] != config.E:
        raise DimensionError(f"router has {router.shape[-1]} experts, config says {config.E}")
    probs = ops.softmax_rows(ops.matmul(h, router) * (1.0 / config.router_temp))
    chosen = topk_indices(probs.data, config.e)
    kept = ops.take_along_axis(probs, chosen, axis=-1)
    gates = kept / kept.sum(axis=-1, keepdims=True)
    return RoutingDecision(expert_indices=chosen, expert_gates=gates, router_probs=probs)


def expert_ffn(x: Tensor, params: Params, index: int, prefix: str = 'moe') -> Tensor:
    """linear -> gelu -> linear for one expert."""
    name = f'{prefix}.expert{index}'
    hidden = ops.gelu(ops.linear(x, params[f'{name}.w_in'], params[f'{name}.b_in']))
    return ops.linear(hidden, params[f'{name}.w_out'], params[f'{name}.b_out'])


def moe_ffn(h: Tensor, decision: RoutingDecision, params: Params, prefix: str = 'moe') -> Tensor:
    """output_i = sum over chosen experts j of gate_ij * FFN_j(h_i)."""
    n = h.shape[0]
    if decision.expert_indices is None or decision.expert_indices.shape[0] != n:
        raise ContractError("moe_ffn: routing decision must cover every token")
    total: Optional[Tensor] = None
    for j in range(decision.n_experts):
        rows, slots = np.nonzero(decision.expert_indices == j)
        if rows.size == 0:
            continue
        out = expert_ffn(h[rows], params, j, prefix)
        gate = decision.expert_gates[(rows, slots)].reshape(rows.size, 1)
        part = ops.scatter_rows(out * gate, rows, n)
        total = part if total is None else total + part
    return total if total is not None else Tensor(np.zeros(h.shape))


def expert_load(decision: RoutingDecision) -> np.ndarray:
    """Fraction of routing slots assigned to each expert; sums to 1."""
    n, e = decision.expert_indices.shape
    counts = np.bincount(decision.expert_indices.reshape(-1), minlength=decision.n_experts)
    return counts / float(n * e)


def load_balance_loss(decision: RoutingDecision) -> Tensor:
    """E * sum_j f_j * p_j with f_j the share of slots on expert j and p_j its mean router probability."""
    n_experts = decision.n_experts
    fractions = Tensor(expert_load(decision))
    mean_probs = decision.router_probs.mean(axis=0)
    return (fractions * mean_probs).sum() * float(n_experts)
