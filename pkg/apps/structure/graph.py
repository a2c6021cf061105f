"""
Latent token graphs.

Edge scores are a scaled dot product of two dedicated projections of the
token contents. Nothing here looks at token positions, so permuting the
input conjugates the score matrix by the same permutation.
"""
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence
import logging
import math

import numpy as np

from apps.autodiff import ops
from apps.autodiff.tensor import Tensor, parameter
from apps.core.exceptions import ContractError

logger = logging.getLogger(__name__)

Params = Dict[str, Tensor]


@dataclass
class LatentGraph:
    """Dense edge scores for one iteration plus the surviving top-k edges."""
    edge_scores: Tensor
    selected_edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    iteration: int = 0

    @property
    def n(self) -> int:
        return self.edge_scores.shape[0]

    def edge_weight(self, i: int, j: int) -> float:
        return float(self.edge_scores.data[i, j])


def init_structure_params(rng: np.random.Generator, d_model: int, d_struct: int, prefix: str = 'structure') -> Params:
    scale = 1.0 / math.sqrt(d_model)
    return {
        f'{prefix}.w_q': parameter(rng.normal(scale=scale, size=(d_model, d_struct)), f'{prefix}.w_q'),
        f'{prefix}.w_k': parameter(rng.normal(scale=scale, size=(d_model, d_struct)), f'{prefix}.w_k'),
        f'{prefix}.w_bucket': parameter(rng.normal(scale=scale, size=(d_model,)), f'{prefix}.w_bucket'),
    }


def top_edges(scores: np.ndarray, k_top: int) -> np.ndarray:
    """(i, j) pairs of each row's k_top highest finite scores; ties go to the lower j."""
    if k_top < 1:
        raise ContractError(f"k_top must be >= 1, got {k_top}")
    n = scores.shape[0]
    keep = min(k_top, scores.shape[1])
    columns = np.argsort(-scores, axis=-1, kind='stable')[:, :keep]
    rows = np.repeat(np.arange(n), keep)
    pairs = np.stack([rows, columns.reshape(-1)], axis=1)
    finite = np.isfinite(scores[pairs[:, 0], pairs[:, 1]])
    return pairs[finite]


def score_edges(h: Tensor, params: Params, k_top: int, iteration: int = 0, prefix: str = 'structure') -> LatentGraph:
    """e_ij = (h_i W_q) . (h_j W_k) / sqrt(d_struct)."""
    w_q = params[f'{prefix}.w_q']
    queries = ops.matmul(h, w_q)
    keys = ops.matmul(h, params[f'{prefix}.w_k'])
    scores = ops.matmul(queries, ops.transpose(keys)) * (1.0 / math.sqrt(w_q.shape[1]))
    return LatentGraph(edge_scores=scores, selected_edges=top_edges(scores.data, k_top), iteration=iteration)


def struct_loss(graphs: Sequence[LatentGraph]) -> Tensor:
    """
    Squared drift of edge scores between successive iterations.

    Fewer than two graphs have no drift and give 0. A single-iteration
    model (K=1) therefore trains with no structure term at all.
    """
    graphs = list(graphs)
    sizes = {g.edge_scores.shape for g in graphs}
    if len(sizes) > 1:
        raise ContractError(f"struct_loss: graphs disagree on size {sorted(sizes)}")
    total: Optional[Tensor] = None
    for before, after in zip(graphs, graphs[1:]):
        diff = after.edge_scores - before.edge_scores
        term = (diff * diff).sum()
        total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)


def graph_drift(graphs: Sequence[LatentGraph]) -> float:
    """Mean over successive pairs of sum((e_t - e_{t-1})**2) / n**2."""
    graphs = list(graphs)
    if len(graphs) < 2:
        return 0.0
    n = graphs[0].n
    drifts = [
        float(np.sum((b.edge_scores.data - a.edge_scores.data) ** 2)) / (n * n)
        for a, b in zip(graphs, graphs[1:])
    ]
    return float(np.mean(drifts))


def graph_bias(graph: LatentGraph, lambda_bias: float, extra_columns: int = 0) -> Optional[Tensor]:
    """
    Additive attention bias lambda_bias * e, zero-padded for memory columns.

    Returns None when lambda_bias is 0.
    """
    if lambda_bias == 0:
        return None
    bias = graph.edge_scores * float(lambda_bias)
    if extra_columns:
        bias = ops.concat([bias, Tensor(np.zeros((graph.n, extra_columns)))], axis=1)
    return bias


def bucket_candidates(h: Tensor, params: Params, bucket_size: int, k_top: int = 1, prefix: str = 'structure'):
    """
    Candidate keys per query from a learned 1-d ordering of the tokens.

    Tokens are sorted by h @ w_bucket and cut into buckets of `bucket_size`.
    A query's candidates are its own bucket and the two adjacent ones (the
    nearest three at either end).

    Returns:
        (candidates, mask): (n, 3 * bucket_size) int indices and validity
    """
    if bucket_size < k_top:
        raise ContractError(f"bucket_size {bucket_size} must be >= k_top {k_top}")
    n = h.shape[0]
    if n <= bucket_size:
        return np.tile(np.arange(n), (n, 1)), np.ones((n, n), dtype=bool)

    keys = h.data @ params[f'{prefix}.w_bucket'].data
    order = np.argsort(keys, kind='stable')
    n_buckets = math.ceil(n / bucket_size)
    padded = np.full(n_buckets * bucket_size, -1, dtype=np.int64)
    padded[:n] = order
    buckets = padded.reshape(n_buckets, bucket_size)

    first = np.clip(np.arange(n_buckets) - 1, 0, max(n_buckets - 3, 0))
    span = min(3, n_buckets)
    neighbourhood = np.concatenate([buckets[first + offset] for offset in range(span)], axis=1)
    mask = neighbourhood >= 0

    bucket_of = np.empty(n, dtype=np.int64)
    bucket_of[order] = np.arange(n) // bucket_size
    candidates = np.where(mask, neighbourhood, 0)[bucket_of]
    return candidates, mask[bucket_of]
