"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line front end:
2 for violated preconditions and invalid inputs, 3 for numerically
inconclusive results.
"""

from __future__ import annotations


class KernelPFError(Exception):
    exit_code = 2

    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "message": str(self)}


class PreconditionError(KernelPFError):
    pass


class DimensionError(PreconditionError):
    pass


class UnsupportedVariantError(PreconditionError):
    pass


class UnrepresentableSetError(PreconditionError):
    pass


class InvalidAtomError(PreconditionError):
    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class ReducibleKernelError(PreconditionError):
    pass


class PeriodicityError(PreconditionError):
    def __init__(self, message: str, period: int | None = None):
        super().__init__(message)
        self.period = period


class AssumptionViolatedError(PreconditionError):
    """All computed f_n vanish, so f(s) is identically zero."""


class NotRecurrentError(PreconditionError):
    pass


class NotApplicableError(PreconditionError):
    pass


class SchemaError(PreconditionError):
    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer or "/"

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["pointer"] = self.pointer
        return d


class NumericalError(KernelPFError):
    exit_code = 3


class RadiusZeroError(NumericalError):
    pass


class DivergentSeriesError(NumericalError):
    pass


class InconclusiveAtRadiusError(NumericalError):
    """f(r) could not be placed on either side of 1 within the tail bound."""

    def __init__(self, message: str, transient_candidate: float, recurrent_candidate: float | None):
        super().__init__(message)
        self.transient_candidate = transient_candidate
        self.recurrent_candidate = recurrent_candidate

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["candidates"] = {
            "R_if_transient": self.transient_candidate,
            "R_if_recurrent": self.recurrent_candidate,
        }
        return d


class ConvergenceError(NumericalError):
    pass


class ExplosionError(NumericalError):
    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class UnreliableEstimateError(NumericalError):
    pass
