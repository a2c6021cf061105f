"""
AdamW with linear warmup, cosine decay and global-norm clipping.

Weight decay is decoupled: p <- p * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps).
"""
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional
import logging
import math

import numpy as np

from apps.autodiff.tensor import Tensor
from apps.core.exceptions import ContractError, NumericError

from .config import TrainConfig

logger = logging.getLogger(__name__)


def lr_at(step: int, config: TrainConfig) -> float:
    """
    Learning rate for update number `step` (1-based).

    Linear ramp to lr_peak at warmup_steps, then half-cosine to 0 at
    total_steps; 0 afterwards.
    """
    if step < config.warmup_steps:
        return config.lr_peak * step / config.warmup_steps
    span = max(config.total_steps - config.warmup_steps, 1)
    progress = min(max((step - config.warmup_steps) / span, 0.0), 1.0)
    return config.lr_peak * 0.5 * (1.0 + math.cos(math.pi * progress))


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return float(math.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def check_finite(grads: Mapping[str, np.ndarray]) -> None:
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient in parameter '{name}'")


@dataclass
class OptimizerState:
    """First and second moments per parameter plus the update count."""
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    last_lr: float = 0.0
    last_grad_norm: float = 0.0


def optimizer_step(
    params: Mapping[str, Tensor],
    grads: Optional[Mapping[str, np.ndarray]],
    state: OptimizerState,
    config: TrainConfig,
    step_index: Optional[int] = None,
) -> OptimizerState:
    """
    Apply one AdamW update in place.

    Args:
        params: Named parameters; their `.data` is updated
        grads: Gradient per parameter name (defaults to each parameter's `.grad`)
        state: Moments from the previous update
        step_index: 1-based update number for the schedule (defaults to state.step + 1)

    Raises:
        ContractError: a parameter has no gradient
        NumericError: a gradient is NaN or infinite; names the parameter
    """
    if grads is None:
        grads = {name: p.grad for name, p in params.items()}
    missing = [name for name in params if grads.get(name) is None]
    if missing:
        raise ContractError(f"no gradient for {', '.join(missing)}")
    check_finite(grads)

    step = state.step + 1 if step_index is None else step_index
    if step < 1:
        raise ContractError(f"step_index is 1-based, got {step}")
    lr = lr_at(step, config)
    norm = global_norm(grads[name] for name in params)
    scale = config.grad_clip_norm / norm if norm > config.grad_clip_norm else 1.0

    bias1 = 1.0 - config.beta1 ** step
    bias2 = 1.0 - config.beta2 ** step
    for name, param in params.items():
        grad = grads[name] * scale
        m = state.m.get(name, np.zeros_like(param.data))
        v = state.v.get(name, np.zeros_like(param.data))
        m = config.beta1 * m + (1.0 - config.beta1) * grad
        v = config.beta2 * v + (1.0 - config.beta2) * grad * grad
        update = (m / bias1) / (np.sqrt(v / bias2) + config.adam_eps)
        param.data = param.data * (1.0 - lr * config.weight_decay) - lr * update
        state.m[name], state.v[name] = m, v

    state.step = step
    state.last_lr = lr
    state.last_grad_norm = norm
    logger.debug(f"update {step}: lr {lr:.3e}, grad norm {norm:.3e}{' (clipped)' if scale < 1.0 else ''}")
    return state
