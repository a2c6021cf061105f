"""
Recurrent sparse model.

One weight-tied block is applied K times. Per iteration t, from H(t):
structure graph, memory update (pooling + gate), then the block sees the
previous iteration's token cache and the freshly updated segment memory
and produces H(t+1). Logits come from the final layer norm against the
tied token embedding.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence
import logging

import numpy as np

from apps.attention.attention import AttentionOutput, init_attention_params, project_qkv, sparse_attention
from apps.attention.experts import expert_load, init_expert_params, load_balance_loss, moe_ffn, route_experts
from apps.autodiff import ops
from apps.autodiff.tensor import Tensor, parameter
from apps.core.exceptions import ContractError
from apps.core.utils import make_rng
from apps.memory.memory import HierMemory, init_memory_params, memory_kv, update_memory, with_cache
from apps.structure.graph import LatentGraph, graph_bias, graph_drift, init_structure_params, score_edges, struct_loss

from .config import ModelConfig

logger = logging.getLogger(__name__)

Params = Dict[str, Tensor]


@dataclass
class IterationTrace:
    """What one iteration did."""
    iteration: int
    key_indices: np.ndarray
    attention_weights: np.ndarray
    empty_rows: np.ndarray
    expert_indices: np.ndarray
    expert_load: np.ndarray
    alpha: Optional[np.ndarray]
    pool_weights: Optional[np.ndarray]
    graph: Optional[LatentGraph]
    hidden_norm: float

    @property
    def supports(self) -> List[List[np.ndarray]]:
        heads, queries = self.attention_weights.shape[:2]
        return [
            [self.key_indices[h, i][self.attention_weights[h, i] > 0] for i in range(queries)]
            for h in range(heads)
        ]


@dataclass
class StepTrace:
    """Per-iteration records of a forward pass; one entry per iteration."""
    iterations: List[IterationTrace] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.iterations)

    @property
    def graphs(self) -> List[LatentGraph]:
        return [it.graph for it in self.iterations if it.graph is not None]

    @property
    def empty_row_count(self) -> int:
        return int(sum(it.empty_rows.sum() for it in self.iterations))

    @property
    def drift(self) -> float:
        """Mean squared edge-score change between successive iterations, per edge."""
        return graph_drift(self.graphs)

    def summary(self) -> List[Dict[str, object]]:
        return [
            {
                'iteration': it.iteration,
                'hidden_norm': it.hidden_norm,
                'mean_support': float(np.mean((it.attention_weights > 0).sum(axis=-1))),
                'empty_rows': int(it.empty_rows.sum()),
                'expert_load': [float(x) for x in it.expert_load],
                'alpha': None if it.alpha is None else [float(a) for a in it.alpha],
            }
            for it in self.iterations
        ]


@dataclass
class ForwardResult:
    """Output of `forward`; unpacks as (logits, trace, aux_losses)."""
    logits: Tensor
    trace: StepTrace
    aux_losses: Dict[str, Tensor]
    hidden: Optional[Tensor] = None
    token_caches: List[Tensor] = field(default_factory=list)

    def __iter__(self):
        return iter((self.logits, self.trace, self.aux_losses))


def init_params(config: ModelConfig, seed: int = 0) -> Params:
    """Seeded parameter set; its size does not depend on K."""
    if config.vocab_size < 1:
        raise ContractError("init_params needs a resolved vocab_size")
    rng = make_rng(seed)
    d = config.d_model
    params: Params = {
        'embed.tokens': parameter(rng.normal(scale=d ** -0.5, size=(config.vocab_size, d)), 'embed.tokens'),
    }
    if config.disable_soes:
        params['embed.positions'] = parameter(rng.normal(scale=d ** -0.5, size=(config.max_positions, d)), 'embed.positions')
    params.update(init_attention_params(rng, d))
    params.update(init_expert_params(rng, d, config.E))
    params.update(init_memory_params(rng, d, config.m))
    params.update(init_structure_params(rng, d, config.d_struct))
    for name in ('block.ln_attn', 'block.ln_ffn', 'final.ln'):
        params[f'{name}.gain'] = parameter(np.ones(d), f'{name}.gain')
        params[f'{name}.bias'] = parameter(np.zeros(d), f'{name}.bias')
    return params


def count_parameters(params: Params) -> int:
    return int(sum(p.size for p in params.values()))


def _layer_norm(x: Tensor, params: Params, name: str) -> Tensor:
    return ops.layer_norm(x, params[f'{name}.gain'], params[f'{name}.bias'])


def block(
    h: Tensor,
    memory_rows: Optional[Tensor],
    graph: Optional[LatentGraph],
    params: Params,
    config: ModelConfig,
    rng: Optional[np.random.Generator] = None,
):
    """
    Pre-norm residual block.

        h1 = h + attention(LN(h); keys/values = LN(h) || memory rows; bias from graph)
        h2 = h1 + moe_ffn(LN(h1))

    Returns:
        (h2, attention output, routing decision)
    """
    attn_config = config.attention_config()
    x = _layer_norm(h, params, 'block.ln_attn')
    source = x if memory_rows is None else ops.concat([x, memory_rows], axis=0)
    bias = None
    if graph is not None:
        bias = graph_bias(graph, config.lambda_bias, extra_columns=source.shape[0] - x.shape[0])
    q, k, v = project_qkv(x, params, attn_config, kv_source=source)
    attn: AttentionOutput = sparse_attention(q, k, v, params, attn_config, bias=bias)
    h1 = h + ops.dropout(attn.output, config.dropout_rate, rng)

    y = _layer_norm(h1, params, 'block.ln_ffn')
    decision = route_experts(y, params, attn_config)
    h2 = h1 + ops.dropout(moe_ffn(y, decision, params), config.dropout_rate, rng)
    return h2, attn, decision


def embed(ids: np.ndarray, params: Params, config: ModelConfig) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    vocab = params['embed.tokens'].shape[0]
    if ids.ndim != 1 or ids.size == 0:
        raise ContractError(f"expected a non-empty 1-d id sequence, got shape {ids.shape}")
    if ids.min() < 0 or ids.max() >= vocab:
        raise ContractError(f"token id out of range [0, {vocab}): min {ids.min()}, max {ids.max()}")
    h = params['embed.tokens'][ids]
    if config.disable_soes:
        if ids.size > config.max_positions:
            raise ContractError(f"sequence length {ids.size} exceeds max_positions {config.max_positions}")
        h = h + params['embed.positions'][np.arange(ids.size)]
    return h


def forward(
    ids: Sequence[int],
    params: Params,
    config: ModelConfig,
    rng: Optional[np.random.Generator] = None,
    pinned_caches: Optional[Sequence[Tensor]] = None,
) -> ForwardResult:
    """
    Embed, run K iterations, project to logits.

    `rng` enables dropout; leave it None for evaluation. `pinned_caches`
    replaces the detached token caches with fixed values (one per
    iteration, as returned in `ForwardResult.token_caches`); finite-difference
    checks hold them still while parameters move.
    """
    h = embed(np.asarray(ids), params, config)
    memory = HierMemory()
    trace = StepTrace()
    balance_terms: List[Tensor] = []
    caches: List[Tensor] = []

    for t in range(1, config.K + 1):
        graph = None if config.disable_soes else score_edges(h, params, config.k_top, iteration=t)
        rows = None
        if not config.disable_r2mu:
            cache_before = memory.token_cache
            memory = update_memory(h, memory, params)
            if pinned_caches is not None:
                memory = with_cache(memory, pinned_caches[t - 1])
            caches.append(memory.token_cache)
            rows = memory_kv(with_cache(memory, cache_before))
        h, attn, decision = block(h, rows, graph, params, config, rng)
        balance_terms.append(load_balance_loss(decision))
        trace.iterations.append(IterationTrace(
            iteration=t,
            key_indices=attn.key_indices,
            attention_weights=attn.weights,
            empty_rows=attn.empty_rows,
            expert_indices=decision.expert_indices,
            expert_load=expert_load(decision),
            alpha=None if config.disable_r2mu else memory.alpha,
            pool_weights=None if config.disable_r2mu else memory.pool_weights,
            graph=graph,
            hidden_norm=float(np.linalg.norm(h.data) / np.sqrt(h.shape[0])),
        ))

    logits = ops.matmul(_layer_norm(h, params, 'final.ln'), ops.transpose(params['embed.tokens']))
    balance = balance_terms[0]
    for term in balance_terms[1:]:
        balance = balance + term
    aux_losses = {
        'struct': struct_loss(trace.graphs),
        'balance': balance * (1.0 / len(balance_terms)),
    }
    return ForwardResult(logits, trace, aux_losses, hidden=h, token_caches=caches)


def loss(logits: Tensor, targets: Sequence[int], aux_losses: Dict[str, Tensor], config: ModelConfig) -> Tensor:
    """Mean token cross-entropy plus the weighted structure and balance terms."""
    total = ops.cross_entropy(logits, np.asarray(targets))
    if config.lambda_struct:
        total = total + aux_losses['struct'] * config.lambda_struct
    if config.load_balance_coeff:
        total = total + aux_losses['balance'] * config.load_balance_coeff
    return total


def pinned_loss(ids: Sequence[int], targets: Sequence[int], params: Params, config: ModelConfig) -> Callable[[], Tensor]:
    """Loss closure with the token caches of a first pass pinned, for finite-difference checks."""
    caches = forward(ids, params, config).token_caches

    def build() -> Tensor:
        result = forward(ids, params, config, pinned_caches=caches)
        return loss(result.logits, targets, result.aux_losses, config)

    return build
