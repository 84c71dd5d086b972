"""
Exception hierarchy for numerical and contract failures.

Library code raises these; I/O code returns Result/Fault instead.
"""

from typing import Optional


class SA3Error(Exception):
    """Root of every exception raised by the sa3-desk packages."""


class InvalidArgumentError(SA3Error, ValueError):
    """An argument violates a documented precondition."""


class ContractViolationError(SA3Error):
    """An operation was called in a context it does not support (e.g. wrong domain)."""


class EmptyBoxError(InvalidArgumentError):
    """A region of interest has zero area after clipping."""


class NumericalError(SA3Error, ArithmeticError):
    """A loss component became non-finite."""

    def __init__(self, component: str, value: float, iteration: Optional[int] = None):
        self.component = component
        self.value = value
        self.iteration = iteration
        where = f" at iteration {iteration}" if iteration is not None else ""
        super().__init__(f"non-finite value {value!r} in loss component '{component}'{where}")
