"""
Finite-difference suite over every differentiable operation and the full model.

Each case builds a scalar loss from a few seeded leaves; the suite compares
tape gradients against central differences and reports the worst relative
error per case.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
from django.conf import settings

from apps.attention.attention import AttentionConfig, init_attention_params, sparse_attention
from apps.attention.experts import init_expert_params, load_balance_loss, moe_ffn, route_experts
from apps.autodiff import ops
from apps.autodiff.gradcheck import GradCheckResult, check_gradients, weighted_sum_loss
from apps.autodiff.tensor import Tensor
from apps.core.exceptions import ConfigError
from apps.core.utils import make_rng
from apps.memory.memory import gated_update, init_memory_params, pool_segment
from apps.modeling.config import ModelConfig
from apps.modeling.model import forward, init_params, pinned_loss
from apps.sparse.activations import activate_rows
from apps.structure.graph import graph_bias, init_structure_params, score_edges, struct_loss

logger = logging.getLogger(__name__)

Case = Callable[[np.random.Generator], Tuple[Callable[[], Tensor], List[Tensor]]]

# Rows with every entry at least 0.1 away from the sparsemax and entmax-1.5 thresholds
KINK_FREE_SCORES = np.array([[1.2, 0.3, -0.8, 0.9], [0.1, 2.0, 1.4, -1.0]])

# Ten times the finite-difference step
SELECTION_JITTER = 1e-4
SPARSE_MODEL_DRAWS = 20


def leaf(rng: np.random.Generator, shape, name: str, low: Optional[float] = None, high: Optional[float] = None) -> Tensor:
    data = rng.normal(size=shape) if low is None else rng.uniform(low, high, size=shape)
    return Tensor(data, requires_grad=True, name=name)


def _weighted(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.normal(size=shape)


def _unary(op: str, low: Optional[float] = None, high: Optional[float] = None) -> Case:
    def case(rng):
        x = leaf(rng, (3, 4), 'x', low, high)
        w = _weighted(rng, (3, 4))
        fn = ops.log if op == 'log' else (lambda t: ops.elementwise(op, t))
        return (lambda: weighted_sum_loss(fn(x), w)), [x]
    return case


def _binary(op: str) -> Case:
    def case(rng):
        a = leaf(rng, (3, 4), 'a')
        b = leaf(rng, (4,), 'b', 0.5, 2.0) if op == 'div' else leaf(rng, (4,), 'b')
        w = _weighted(rng, (3, 4))
        return (lambda: weighted_sum_loss(ops.elementwise(op, a, b), w)), [a, b]
    return case


def _matmul(rng):
    a, b = leaf(rng, (2, 3, 4), 'a'), leaf(rng, (4, 5), 'b')
    w = _weighted(rng, (2, 3, 5))
    return (lambda: weighted_sum_loss(ops.matmul(a, b), w)), [a, b]


def _reductions(rng):
    x = leaf(rng, (3, 4), 'x')
    w = _weighted(rng, (3, 1))
    return (lambda: weighted_sum_loss(x.sum(axis=1, keepdims=True) * x.mean(axis=1, keepdims=True), w)), [x]


def _shape_ops(rng):
    x = leaf(rng, (2, 3, 4), 'x')
    w = _weighted(rng, (4, 6))
    return (lambda: weighted_sum_loss(ops.transpose(x, (2, 0, 1)).reshape(4, 6), w)), [x]


def _concat(rng):
    a, b = leaf(rng, (2, 3), 'a'), leaf(rng, (4, 3), 'b')
    w = _weighted(rng, (6, 3))
    return (lambda: weighted_sum_loss(ops.concat([a, b], axis=0), w)), [a, b]


def _getitem(rng):
    x = leaf(rng, (5, 3), 'x')
    index = np.array([0, 2, 2, 4, 0])
    w = _weighted(rng, (5, 3))
    return (lambda: weighted_sum_loss(x[index], w)), [x]


def _take_along_axis(rng):
    x = leaf(rng, (3, 5), 'x')
    index = np.array([[0, 4], [2, 2], [1, 3]])
    w = _weighted(rng, (3, 2))
    return (lambda: weighted_sum_loss(ops.take_along_axis(x, index, axis=-1), w)), [x]


def _scatter_rows(rng):
    x = leaf(rng, (4, 3), 'x')
    rows = np.array([1, 0, 1, 3])
    w = _weighted(rng, (5, 3))
    return (lambda: weighted_sum_loss(ops.scatter_rows(x, rows, 5), w)), [x]


def _layer_norm(rng):
    x, gain, bias = leaf(rng, (3, 5), 'x'), leaf(rng, (5,), 'gain'), leaf(rng, (5,), 'bias')
    w = _weighted(rng, (3, 5))
    return (lambda: weighted_sum_loss(ops.layer_norm(x, gain, bias), w)), [x, gain, bias]


def _softmax_rows(rng):
    x = leaf(rng, (3, 5), 'x')
    w = _weighted(rng, (3, 5))
    return (lambda: weighted_sum_loss(ops.softmax_rows(x), w)), [x]


def _log_softmax_rows(rng):
    x = leaf(rng, (3, 5), 'x')
    w = _weighted(rng, (3, 5))
    return (lambda: weighted_sum_loss(ops.log_softmax_rows(x), w)), [x]


def _cross_entropy(rng):
    logits = leaf(rng, (4, 6), 'logits')
    targets = np.array([1, -1, 5, 0])
    return (lambda: ops.cross_entropy(logits, targets)), [logits]


def _activation(phi: str) -> Case:
    def case(rng):
        z = Tensor(KINK_FREE_SCORES.copy(), requires_grad=True, name='z')
        w = _weighted(rng, z.shape)
        return (lambda: weighted_sum_loss(activate_rows(z, phi), w)), [z]
    return case


def _sparse_attention(rng):
    config = AttentionConfig(d_model=6, n_heads=2, k_top=3, phi='softmax')
    params = init_attention_params(rng, 6)
    q, k, v = (leaf(rng, (2, 5, 3), name) for name in ('q', 'k', 'v'))
    bias = leaf(rng, (5, 5), 'bias')
    w = _weighted(rng, (5, 6))

    def build():
        return weighted_sum_loss(sparse_attention(q, k, v, params, config, bias=bias).output, w)

    return build, [q, k, v, bias, params['attn.w_o'], params['attn.b_o']]


def _moe_ffn(rng):
    config = AttentionConfig(d_model=4, n_heads=1, E=3, e=2)
    params = init_expert_params(rng, 4, 3)
    h = leaf(rng, (5, 4), 'h')
    w = _weighted(rng, (5, 4))

    def build():
        decision = route_experts(h, params, config)
        return weighted_sum_loss(moe_ffn(h, decision, params), w) + load_balance_loss(decision)

    return build, [h] + list(params.values())


def _pool_segment(rng):
    h, queries = leaf(rng, (5, 4), 'h'), leaf(rng, (3, 4), 'pool_queries')
    w = _weighted(rng, (3, 4))
    return (lambda: weighted_sum_loss(pool_segment(h, queries), w)), [h, queries]


def _gated_update(rng):
    params = init_memory_params(rng, 4, 3)
    s_prev, s_hat = leaf(rng, (3, 4), 's_prev'), leaf(rng, (3, 4), 's_hat')
    w = _weighted(rng, (3, 4))

    def build():
        return weighted_sum_loss(gated_update(s_prev, s_hat, params)[0], w)

    return build, [s_prev, s_hat, params['memory.gate_w'], params['memory.gate_b']]


def _structure(rng):
    params = init_structure_params(rng, 4, 3)
    h = leaf(rng, (5, 4), 'h')
    w = _weighted(rng, (5, 7))

    def build():
        first = score_edges(h, params, k_top=2, iteration=1)
        second = score_edges(ops.tanh(h), params, k_top=2, iteration=2)
        return struct_loss([first, second]) + weighted_sum_loss(graph_bias(first, 0.5, extra_columns=2), w)

    return build, [h, params['structure.w_q'], params['structure.w_k']]


def _model(rng):
    config = ModelConfig.gradcheck_preset().validate()
    params = init_params(config, seed=int(rng.integers(0, 2 ** 31)))
    ids = rng.integers(0, config.vocab_size, size=6)
    targets = rng.integers(0, config.vocab_size, size=6)
    targets[2] = -1
    return pinned_loss(ids, targets, params, config), list(params.values())


def selection_pattern(ids, params, config: ModelConfig) -> List[np.ndarray]:
    """Every discrete choice of a forward pass: kept keys, attention support, experts and edges."""
    pattern = []
    for it in forward(ids, params, config).trace.iterations:
        pattern.append(np.sort(it.key_indices, axis=-1))
        pattern.append(np.sort(np.where(it.attention_weights > 0, it.key_indices, -1), axis=-1))
        pattern.append(np.sort(it.expert_indices, axis=-1))
        if it.graph is not None:
            pattern.append(np.unique(np.asarray(it.graph.selected_edges).reshape(-1, 2), axis=0))
    return pattern


def is_selection_stable(ids, params, config: ModelConfig, rng: np.random.Generator, scale: float = SELECTION_JITTER) -> bool:
    """True when jittering every parameter by `scale` leaves the selection pattern unchanged."""
    reference = selection_pattern(ids, params, config)
    for _ in range(3):
        jittered = {name: Tensor(p.data + rng.normal(scale=scale, size=p.shape), name=name) for name, p in params.items()}
        pattern = selection_pattern(ids, jittered, config)
        if len(pattern) != len(reference) or not all(np.array_equal(a, b) for a, b in zip(pattern, reference)):
            return False
    return True


def _sparse_model(rng):
    """entmax-1.5 with 3 of up to 16 keys kept, at a point where no selection flips under finite differences."""
    config = ModelConfig.gradcheck_preset(phi='entmax15', k_top=3).validate()
    for attempt in range(SPARSE_MODEL_DRAWS):
        params = init_params(config, seed=int(rng.integers(0, 2 ** 31)))
        # distinct ids keep duplicate keys from tying at the top-k boundary
        ids = rng.choice(config.vocab_size, size=6, replace=False)
        if is_selection_stable(ids, params, config, rng):
            break
        logger.debug(f"gradcheck model_sparse: draw {attempt} sits near a selection change, redrawing")
    else:
        logger.warning(f"gradcheck model_sparse: no stable draw in {SPARSE_MODEL_DRAWS} attempts")
    targets = rng.integers(0, config.vocab_size, size=6)
    targets[2] = -1
    return pinned_loss(ids, targets, params, config), list(params.values())


OPERATION_CASES: Dict[str, Case] = {
    'add': _binary('add'),
    'sub': _binary('sub'),
    'mul': _binary('mul'),
    'div': _binary('div'),
    'exp': _unary('exp'),
    'log': _unary('log', 0.5, 2.0),
    'tanh': _unary('tanh'),
    'sigmoid': _unary('sigmoid'),
    'gelu': _unary('gelu'),
    'matmul': _matmul,
    'sum_mean': _reductions,
    'reshape_transpose': _shape_ops,
    'concat': _concat,
    'getitem': _getitem,
    'take_along_axis': _take_along_axis,
    'scatter_rows': _scatter_rows,
    'layer_norm': _layer_norm,
    'softmax_rows': _softmax_rows,
    'log_softmax_rows': _log_softmax_rows,
    'cross_entropy': _cross_entropy,
    'sparsemax': _activation('sparsemax'),
    'entmax15': _activation('entmax15'),
    'sparse_attention': _sparse_attention,
    'moe_ffn': _moe_ffn,
    'pool_segment': _pool_segment,
    'gated_update': _gated_update,
    'structure': _structure,
}
MODEL_CASES: Dict[str, Case] = {'model': _model, 'model_sparse': _sparse_model}
PRESETS = ('full', 'ops', 'model')


@dataclass
class GradCheckReport:
    """Per-case results against one tolerance."""
    tolerance: float
    results: List[GradCheckResult] = field(default_factory=list)

    @property
    def failures(self) -> List[GradCheckResult]:
        return [r for r in self.results if not r.passed(self.tolerance)]

    @property
    def passed(self) -> bool:
        return not self.failures

    def rows(self) -> List[Tuple[str, int, float, str]]:
        return [
            (r.name, r.checked_values, r.max_relative_error, 'ok' if r.passed(self.tolerance) else 'FAIL')
            for r in self.results
        ]


class GradCheckService:
    """
    Runs registered gradient-check cases.

    Usage:
        report = GradCheckService().run(preset='full')
    """

    def __init__(self, tolerance: Optional[float] = None, seed: int = 0):
        self.tolerance = tolerance if tolerance is not None else getattr(settings, 'RESS_GRADCHECK_TOLERANCE', 1e-4)
        self.seed = seed

    def cases(self, preset: str = 'full', only: Optional[Sequence[str]] = None) -> Dict[str, Case]:
        if preset not in PRESETS:
            raise ConfigError(f"expected one of {', '.join(PRESETS)}, got '{preset}'", field='preset')
        registry = {}
        if preset in ('full', 'ops'):
            registry.update(OPERATION_CASES)
        if preset in ('full', 'model'):
            registry.update(MODEL_CASES)
        if only:
            known = dict(OPERATION_CASES, **MODEL_CASES)
            missing = [name for name in only if name not in known]
            if missing:
                raise ConfigError(f"unknown cases: {', '.join(missing)}", field='only')
            registry = {name: known[name] for name in only}
        return registry

    def run(self, preset: str = 'full', only: Optional[Sequence[str]] = None) -> GradCheckReport:
        report = GradCheckReport(self.tolerance)
        for index, (name, case) in enumerate(self.cases(preset, only).items()):
            build, tensors = case(make_rng(self.seed + index))
            result = check_gradients(name, build, tensors)
            report.results.append(result)
            if not result.passed(self.tolerance):
                logger.warning(f"gradcheck {name}: max relative error {result.max_relative_error:.3e} exceeds {self.tolerance:g}")
        logger.info(f"gradcheck: {len(report.results) - len(report.failures)}/{len(report.results)} cases within {self.tolerance:g}")
        return report
