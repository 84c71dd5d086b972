"""
SA3 - Tensor and Gradient Tape

Dense float64 tensors recorded eagerly onto a per-forward gradient tape.

Complexity Guarantees:
- Recording an operation: O(1) beyond the forward kernel
- backward(): O(sum of backward kernels), one pass in reverse record order

Concurrency:
- Tensor data is read-only after construction and safe to share.
- A GradTape is confined to the thread that entered it; the active-tape
  stack is thread-local, so independent tapes may run on different threads.
"""

import itertools
import threading
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from standards.errors import InvalidArgumentError

_node_ids = itertools.count()

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """
    Immutable dense array participating in reverse-mode differentiation.

    Invariants:
    - data is float64, read-only, with at least one element
    - a tensor produced on a tape remembers that tape; leaves have none
    """

    __slots__ = ("_data", "requires_grad", "name", "_id", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        array = np.array(data, dtype=np.float64)
        if array.size == 0:
            raise InvalidArgumentError("tensors must have at least one element")
        array.setflags(write=False)
        self._data = array
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._id = next(_node_ids)
        self._tape: Optional['GradTape'] = None

    @classmethod
    def _from_op(cls, array: np.ndarray, tape: Optional['GradTape']) -> 'Tensor':
        """Wrap a freshly computed array without copying."""
        out = cls.__new__(cls)
        array = np.asarray(array, dtype=np.float64)
        if array.flags.writeable:
            array.setflags(write=False)
        out._data = array
        out.requires_grad = tape is not None
        out.name = None
        out._id = next(_node_ids)
        out._tape = tape
        return out

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return int(self._data.size)

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def item(self) -> float:
        if self._data.size != 1:
            raise InvalidArgumentError(f"item() needs a single element, shape is {self.shape}")
        return float(self._data.reshape(()))

    def numpy(self) -> np.ndarray:
        return np.array(self._data)

    def detach(self) -> 'Tensor':
        """Same values, no gradient history."""
        return Tensor._from_op(self._data, None)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"


def as_tensor(value) -> Tensor:
    """Wrap numbers and arrays as constant tensors; pass tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


@dataclass(frozen=True)
class TapeRecord:
    """One recorded operation: inputs precede the output on the tape."""
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Gradients(Mapping):
    """Gradients of one backward pass, keyed by leaf tensor."""

    def __init__(self, entries: Dict[int, Tuple[Tensor, np.ndarray]]):
        self._entries = entries

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        return self._entries[tensor._id][1]

    def __iter__(self) -> Iterator[Tensor]:
        return (leaf for leaf, _ in self._entries.values())

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, tensor: object) -> bool:
        return isinstance(tensor, Tensor) and tensor._id in self._entries


class GradTape:
    """
    Ordered record of differentiable operations for one forward pass.

    Usage:
        with GradTape() as tape:
            loss = ops.mean(ops.mul(x, x))
        grads = backward(loss)

    A tape is consumed by its backward pass; recording after that is an error.
    """

    _local = threading.local()

    def __init__(self):
        self._records: List[TapeRecord] = []
        self._consumed = False

    @classmethod
    def _stack(cls) -> List['GradTape']:
        stack = getattr(cls._local, "stack", None)
        if stack is None:
            stack = []
            cls._local.stack = stack
        return stack

    @classmethod
    def current(cls) -> Optional['GradTape']:
        stack = cls._stack()
        return stack[-1] if stack else None

    def __enter__(self) -> 'GradTape':
        if self._consumed:
            raise InvalidArgumentError("tape already consumed by backward()")
        self._stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = self._stack()
        if stack and stack[-1] is self:
            stack.pop()

    @property
    def records(self) -> Tuple[TapeRecord, ...]:
        return tuple(self._records)

    @property
    def consumed(self) -> bool:
        return self._consumed

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: np.ndarray,
               backward_fn: BackwardFn) -> Tensor:
        if self._consumed:
            raise InvalidArgumentError("cannot record onto a consumed tape")
        for tensor in inputs:
            if tensor._tape is not None and tensor._tape is not self:
                raise InvalidArgumentError(f"{op}: input was recorded on a different tape")
        out = Tensor._from_op(output, self)
        self._records.append(TapeRecord(op, inputs, out, backward_fn))
        return out

    def backward(self, loss: Tensor) -> Gradients:
        if self._consumed:
            raise InvalidArgumentError("tape already consumed by backward()")
        grads: Dict[int, np.ndarray] = {loss._id: np.ones(loss.shape, dtype=np.float64)}
        leaves: Dict[int, Tensor] = {}
        for rec in reversed(self._records):
            upstream = grads.pop(rec.output._id, None)
            if upstream is None:
                continue
            input_grads = rec.backward(upstream)
            for tensor, grad in zip(rec.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if grad.shape != tensor.shape:
                    raise AssertionError(
                        f"{rec.op}: gradient shape {grad.shape} != input shape {tensor.shape}")
                previous = grads.get(tensor._id)
                grads[tensor._id] = grad if previous is None else previous + grad
                if tensor.is_leaf:
                    leaves[tensor._id] = tensor
        self._consumed = True
        self._records = []
        return Gradients({i: (leaf, grads[i]) for i, leaf in leaves.items()})


def record_op(op: str, inputs: Tuple[Tensor, ...], output: np.ndarray,
              backward_fn: BackwardFn) -> Tensor:
    """Record onto the active tape when any input needs a gradient."""
    tape = GradTape.current()
    if tape is not None and any(t.requires_grad for t in inputs):
        return tape.record(op, inputs, output, backward_fn)
    return Tensor._from_op(output, None)


def backward(loss: Tensor) -> Gradients:
    """
    Reverse pass from a scalar loss.

    Raises:
        InvalidArgumentError: loss is not a scalar or was not produced on a tape
    """
    if loss.ndim != 0:
        raise InvalidArgumentError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise InvalidArgumentError("loss was not produced on a gradient tape")
    return loss._tape.backward(loss)
