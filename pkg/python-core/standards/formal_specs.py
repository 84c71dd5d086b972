"""
Contract decorators.

- verify_complexity: attaches a checked ComplexitySpec as `__complexity__`
- requires: argument predicate, raises an InvalidArgumentError (or the
  given SA3Error subclass) naming the function
- ensures: result predicate, raises AssertionError by default since a
  broken postcondition is a library bug
"""

from dataclasses import dataclass
from enum import Enum
from functools import wraps
from typing import Callable, Optional, Type, TypeVar

from .errors import InvalidArgumentError, SA3Error

T = TypeVar('T')


class ComplexityClass(Enum):
    O_1 = "O(1)"
    O_LOG_N = "O(log n)"
    O_N = "O(n)"
    O_N_LOG_N = "O(n log n)"
    O_N2 = "O(n²)"
    O_N3 = "O(n³)"


@dataclass(frozen=True)
class ComplexitySpec:
    time: ComplexityClass
    space: ComplexityClass
    description: str = ""

    def __str__(self) -> str:
        text = f"time {self.time.value}, space {self.space.value}"
        return f"{text} [{self.description}]" if self.description else text


def verify_complexity(time: str = "O(1)", space: str = "O(1)", description: str = ""):
    """
    Record the asymptotic cost of a function; `description` says what n is.

    An unknown class string fails at import time with ValueError.

    Example:
        @verify_complexity(time="O(n)", space="O(n)", description="n = W·H pixels")
        def render_scene(...): ...
    """
    spec = ComplexitySpec(ComplexityClass(time), ComplexityClass(space), description)

    def decorator(func: Callable[..., T]) -> Callable[..., T]:
        @wraps(func)
        def wrapper(*args, **kwargs) -> T:
            return func(*args, **kwargs)

        wrapper.__complexity__ = spec  # type: ignore[attr-defined]
        return wrapper
    return decorator


def requires(precondition: Callable[..., bool], message: str = "precondition failed",
             error: Type[SA3Error] = InvalidArgumentError):
    """
    Check `precondition(*args, **kwargs)` before each call.

    Example:
        @requires(lambda boxes, n: n >= 1, "n must be positive")
        def top_n(boxes, n): ...
    """
    def decorator(func: Callable[..., T]) -> Callable[..., T]:
        @wraps(func)
        def wrapper(*args, **kwargs) -> T:
            if not precondition(*args, **kwargs):
                raise error(f"{func.__name__}: {message}")
            return func(*args, **kwargs)
        return wrapper
    return decorator


def ensures(postcondition: Callable[..., bool], message: str = "postcondition failed",
            error: Optional[Type[Exception]] = None):
    """Check `postcondition(result)` after each call."""
    raised = error or AssertionError

    def decorator(func: Callable[..., T]) -> Callable[..., T]:
        @wraps(func)
        def wrapper(*args, **kwargs) -> T:
            result = func(*args, **kwargs)
            if not postcondition(result):
                raise raised(f"{func.__name__}: {message}")
            return result
        return wrapper
    return decorator
