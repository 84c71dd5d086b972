"""
Result values for recoverable failures.

Dataset reads, checkpoint loads and config validation hand back either
Success(value) or Failure(Fault); the CLI maps a Failure to exit code 2
and prints the Fault. Numerical and contract failures raise instead
(see errors.py).
"""

from dataclasses import dataclass
from enum import Enum
from typing import Generic, NoReturn, Optional, TypeVar, Union

T = TypeVar('T')
E = TypeVar('E')


class FaultKind(Enum):
    PARSE = "parse"
    VALIDATION = "validation"
    MISSING_ASSET = "missing_asset"
    IO = "io"
    CONFIG = "config"
    SHAPE_MISMATCH = "shape_mismatch"


@dataclass(frozen=True)
class Fault:
    """What went wrong, and where: `path` and the 1-based `line` when known."""
    kind: FaultKind
    message: str
    path: Optional[str] = None
    line: Optional[int] = None

    def __str__(self) -> str:
        if self.path is None:
            return self.message
        where = self.path if self.line is None else f"{self.path}:{self.line}"
        return f"{where}: {self.message}"


@dataclass(frozen=True)
class Success(Generic[T]):
    value: T

    def is_success(self) -> bool:
        return True

    def is_failure(self) -> bool:
        return False

    def unwrap(self) -> T:
        return self.value


@dataclass(frozen=True)
class Failure(Generic[E]):
    error: E

    def is_success(self) -> bool:
        return False

    def is_failure(self) -> bool:
        return True

    def unwrap(self) -> NoReturn:
        raise RuntimeError(f"unwrap() on a failed result: {self.error}")


Result = Union[Success[T], Failure[E]]


def Ok(value: T) -> Success[T]:
    return Success(value)


def Err(error: E) -> Failure[E]:
    return Failure(error)


def fault(kind: FaultKind, message: str, path: Optional[str] = None,
          line: Optional[int] = None) -> Failure[Fault]:
    """Shorthand for Failure(Fault(...))."""
    return Failure(Fault(kind, message, path, line))
