"""
Tensor and gradient tape.

A `Tape` is opened per forward pass (`with Tape(): ...`). Every operation
evaluated while a tape is active and that touches a gradient-carrying
tensor is appended to the tape together with its backward rule. Outside a
tape, operations only compute values (evaluation and benchmarking path).
"""
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple
import logging

import numpy as np

from apps.core.exceptions import ContractError

logger = logging.getLogger(__name__)

BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_active_tape: ContextVar[Optional['Tape']] = ContextVar('active_tape', default=None)


@dataclass
class TapeRecord:
    """One recorded operation."""
    op: str
    inputs: Tuple['Tensor', ...]
    output: 'Tensor'
    backward: BackwardRule

    @property
    def input_nodes(self) -> List[Optional[int]]:
        return [t.tape_node for t in self.inputs]

    @property
    def output_node(self) -> int:
        return self.output.tape_node


class Tape:
    """Ordered list of recorded operations; inputs always precede their consumers."""

    def __init__(self):
        self.records: List[TapeRecord] = []
        self._token = None

    def __enter__(self) -> 'Tape':
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _active_tape.reset(self._token)
        self._token = None
        return False

    def __len__(self) -> int:
        return len(self.records)

    def record(self, op: str, inputs: Tuple['Tensor', ...], output: 'Tensor', backward: BackwardRule) -> int:
        node = len(self.records)
        output.tape = self
        output.tape_node = node
        output.requires_grad = True
        self.records.append(TapeRecord(op, inputs, output, backward))
        return node

    def op_counts(self) -> dict:
        counts = {}
        for record in self.records:
            counts[record.op] = counts.get(record.op, 0) + 1
        return counts


def active_tape() -> Optional[Tape]:
    return _active_tape.get()


class Tensor:
    """
    Dense float64 array that can take part in a gradient tape.

    Leaves created with `requires_grad=True` (parameters, gradcheck inputs)
    accumulate into `.grad` during `backward`. Tensors without
    `requires_grad` and without a tape node are constants.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data: np.ndarray = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.tape: Optional[Tape] = None
        self.tape_node: Optional[int] = None

    @classmethod
    def wrap(cls, data: np.ndarray) -> 'Tensor':
        """Wrap an array produced by an op without copying it."""
        tensor = cls.__new__(cls)
        tensor.data = np.asarray(data, dtype=np.float64)
        tensor.grad = None
        tensor.requires_grad = False
        tensor.name = None
        tensor.tape = None
        tensor.tape_node = None
        return tensor

    def __repr__(self):
        label = f" name={self.name}" if self.name else ''
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.tape_node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float('nan')

    def detach(self) -> 'Tensor':
        """Copy that is off the tape and never receives gradient."""
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def accumulate_grad(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + grad

    # Operator sugar; the rules live in ops.py
    def __add__(self, other): return ops.add(self, other)
    def __radd__(self, other): return ops.add(other, self)
    def __sub__(self, other): return ops.sub(self, other)
    def __rsub__(self, other): return ops.sub(other, self)
    def __mul__(self, other): return ops.mul(self, other)
    def __rmul__(self, other): return ops.mul(other, self)
    def __truediv__(self, other): return ops.div(self, other)
    def __rtruediv__(self, other): return ops.div(other, self)
    def __neg__(self): return ops.neg(self)
    def __matmul__(self, other): return ops.matmul(self, other)
    def __getitem__(self, key): return ops.getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False): return ops.sum(self, axis, keepdims)
    def mean(self, axis=None, keepdims: bool = False): return ops.mean(self, axis, keepdims)
    def reshape(self, *shape): return ops.reshape(self, shape[0] if len(shape) == 1 else shape)
    def transpose(self, *axes): return ops.transpose(self, axes or None)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data, name: str) -> Tensor:
    """Trainable leaf."""
    return Tensor(data, requires_grad=True, name=name)


def make_result(op: str, data: np.ndarray, inputs: Iterable[Tensor], backward: BackwardRule) -> Tensor:
    """Wrap an op's output and record it on the active tape when needed."""
    inputs = tuple(inputs)
    out = Tensor.wrap(data)
    tape = _active_tape.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(op, inputs, out, backward)
    return out


def backward(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> None:
    """
    Reverse-mode pass from a scalar loss.

    Gradients accumulate into leaf `.grad`. Leaves in `params` that the loss
    does not reach end up with a zero gradient.
    """
    if loss.tape_node is None or loss.tape is None:
        raise ContractError("backward() needs a loss recorded on a gradient tape; got a detached tensor")
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")

    tape = loss.tape
    pending = {loss.tape_node: np.ones_like(loss.data)}
    for index in range(loss.tape_node, -1, -1):
        upstream = pending.pop(index, None)
        if upstream is None:
            continue
        record = tape.records[index]
        input_grads = record.backward(upstream)
        for tensor, grad in zip(record.inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            if tensor.tape is tape and tensor.tape_node is not None:
                node = tensor.tape_node
                pending[node] = grad if node not in pending else pending[node] + grad
            elif tensor.tape_node is None:
                tensor.accumulate_grad(grad)

    if params is not None:
        for param in params:
            if param.grad is None:
                param.zero_grad()


from . import ops  # noqa: E402
