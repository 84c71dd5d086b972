"""
SA3 - Parameter Store and Optimizer

Learnable weights live here as named float64 arrays. Each training step
binds them to fresh leaf tensors on a new tape; the optimizer writes the
updated arrays back between steps.

Complexity Guarantees:
- bind()/frozen(): O(P) tensor wrappers for P parameters (arrays are copied once)
- SGDMomentum.step(): O(total parameter count)
"""

import zlib
from collections import OrderedDict
from typing import Dict, Iterable, Mapping, Optional, Tuple

import numpy as np

from standards.errors import InvalidArgumentError
from .tensor import Gradients, Tensor

Weights = Mapping[str, Tensor]


class ParameterStore:
    """
    Ordered mapping name → float64 array.

    Every parameter is initialised from its own generator seeded with
    (seed, crc32(name)), so adding a parameter never changes the initial
    values of the others.
    """

    def __init__(self, seed: int = 0):
        self._seed = int(seed)
        self._values: "OrderedDict[str, np.ndarray]" = OrderedDict()

    @property
    def seed(self) -> int:
        return self._seed

    def _rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng([self._seed, zlib.crc32(name.encode("utf-8"))])

    def create(self, name: str, shape: Tuple[int, ...], init: str = "he",
               fan_in: Optional[int] = None, value: float = 0.0, std: float = 0.01) -> None:
        """
        Register a parameter.

        Args:
            init: "he" (normal, std sqrt(2/fan_in)), "normal" (std `std`),
                  "constant" (all `value`)
        """
        if name in self._values:
            raise InvalidArgumentError(f"parameter '{name}' already exists")
        shape = tuple(int(s) for s in shape)
        if init == "he":
            fan = fan_in if fan_in is not None else int(np.prod(shape[:-1]))
            array = self._rng(name).normal(0.0, np.sqrt(2.0 / fan), size=shape)
        elif init == "normal":
            array = self._rng(name).normal(0.0, std, size=shape)
        elif init == "constant":
            array = np.full(shape, float(value), dtype=np.float64)
        else:
            raise InvalidArgumentError(f"unknown initialiser {init!r}")
        self._values[name] = np.asarray(array, dtype=np.float64)

    def names(self) -> Tuple[str, ...]:
        return tuple(self._values)

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: value.shape for name, value in self._values.items()}

    def __contains__(self, name: object) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)

    def get(self, name: str) -> np.ndarray:
        return np.array(self._values[name])

    def assign(self, name: str, array: np.ndarray) -> None:
        if name not in self._values:
            raise InvalidArgumentError(f"unknown parameter '{name}'")
        array = np.asarray(array, dtype=np.float64)
        if array.shape != self._values[name].shape:
            raise InvalidArgumentError(
                f"parameter '{name}' has shape {self._values[name].shape}, got {array.shape}")
        self._values[name] = np.array(array)

    def bind(self) -> Dict[str, Tensor]:
        """Fresh requires-grad leaves for one tape."""
        return {name: Tensor(value, requires_grad=True, name=name) for name, value in self._values.items()}

    def frozen(self) -> Dict[str, Tensor]:
        """Constant tensors for inference."""
        return {name: Tensor(value, name=name) for name, value in self._values.items()}

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, np.array(value)) for name, value in self._values.items())

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        """Replace all values; names and shapes must match exactly."""
        if set(state) != set(self._values):
            missing = sorted(set(self._values) - set(state))
            extra = sorted(set(state) - set(self._values))
            raise InvalidArgumentError(f"parameter names differ: missing {missing}, unexpected {extra}")
        for name in self._values:
            self.assign(name, state[name])

    def bitwise_equal(self, other: 'ParameterStore') -> bool:
        if self.names() != other.names():
            return False
        return all(self._values[n].tobytes() == other._values[n].tobytes() for n in self._values)


def gradients_by_name(weights: Weights, grads: Gradients) -> Dict[str, np.ndarray]:
    """Map a backward pass onto parameter names; unreached parameters are omitted."""
    return {name: grads[tensor] for name, tensor in weights.items() if tensor in grads}


class SGDMomentum:
    """
    SGD with heavy-ball momentum, no weight decay:
        v ← μ·v + g
        p ← p − lr·v
    A parameter without a gradient this step is treated as having gradient 0.
    """

    def __init__(self, momentum: float = 0.9):
        if not 0.0 <= momentum < 1.0:
            raise InvalidArgumentError(f"momentum must be in [0, 1), got {momentum}")
        self.momentum = momentum
        self._velocity: Dict[str, np.ndarray] = {}

    def step(self, store: ParameterStore, grads: Mapping[str, np.ndarray], lr: float) -> None:
        for name in store.names():
            param = store._values[name]
            velocity = self._velocity.get(name)
            if velocity is None:
                velocity = np.zeros_like(param)
            grad = grads.get(name)
            velocity = self.momentum * velocity if grad is None else self.momentum * velocity + grad
            self._velocity[name] = velocity
            store._values[name] = param - lr * velocity

    def velocity_names(self) -> Iterable[str]:
        return tuple(self._velocity)
