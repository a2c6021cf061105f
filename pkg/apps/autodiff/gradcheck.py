"""
Finite-difference gradient checking.

Central differences with step 1e-5 at float64; errors are reported as
max |a - n| / max(|a|, |n|, 1e-3).
"""
from dataclasses import dataclass
from typing import Callable, Dict, Sequence
import logging

import numpy as np

from apps.core.utils import relative_error

from .tensor import Tape, Tensor, backward

logger = logging.getLogger(__name__)

FD_STEP = 1e-5


@dataclass
class GradCheckResult:
    """Outcome of a gradient check over a set of tensors."""
    name: str
    max_relative_error: float
    checked_values: int
    per_tensor: Dict[str, float]

    def passed(self, tolerance: float) -> bool:
        return bool(self.max_relative_error <= tolerance)


def numerical_gradient(evaluate: Callable[[], float], array: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of `evaluate()` w.r.t. `array`, perturbed in place."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = evaluate()
        flat[i] = original - step
        minus = evaluate()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * step)
    return grad


def check_gradients(
    name: str,
    build_loss: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    step: float = FD_STEP,
) -> GradCheckResult:
    """
    Compare tape gradients against central differences.

    Args:
        name: Label used in reports
        build_loss: Recomputes a scalar loss from the current tensor values
        tensors: Leaves to check; they are marked `requires_grad`

    Returns:
        GradCheckResult with the worst relative error over all entries
    """
    for tensor in tensors:
        tensor.requires_grad = True
        tensor.grad = None

    with Tape():
        loss = build_loss()
        backward(loss, params=tensors)
    analytic = [tensor.grad.copy() for tensor in tensors]

    def evaluate() -> float:
        return float(build_loss().data)

    per_tensor = {}
    checked = 0
    for index, (tensor, grad) in enumerate(zip(tensors, analytic)):
        numeric = numerical_gradient(evaluate, tensor.data, step)
        label = tensor.name or f"input{index}"
        per_tensor[label] = relative_error(grad, numeric)
        checked += tensor.size

    worst = max(per_tensor.values()) if per_tensor else 0.0
    logger.debug(f"gradcheck {name}: max rel err {worst:.3e} over {checked} values")
    return GradCheckResult(name, worst, checked, per_tensor)


def weighted_sum_loss(output: Tensor, weights: np.ndarray) -> Tensor:
    """sum(output * weights); random weights keep normalising ops from having zero gradient."""
    return (output * Tensor(weights)).sum()
