"""Exception hierarchy shared by every module."""

from __future__ import annotations


class HybridDAEError(Exception):
    """Base error. ``operation`` and ``block`` locate the failure for reporting."""

    def __init__(self, message: str, *, operation: str | None = None, block: int | None = None):
        super().__init__(message)
        self.operation = operation
        self.block = block

    def describe(self) -> str:
        where = []
        if self.operation:
            where.append(f"in {self.operation}")
        if self.block is not None:
            where.append(f"at block {self.block}")
        suffix = f" ({', '.join(where)})" if where else ""
        return f"{type(self).__name__}: {self}{suffix}"


class InvalidArgumentError(HybridDAEError, ValueError):
    pass


class SetupError(HybridDAEError):
    pass


class InternalError(HybridDAEError):
    pass


class NumericalFailure(HybridDAEError):
    pass


class AlgebraicConvergenceError(NumericalFailure):
    pass


class ReinitFailure(AlgebraicConvergenceError):
    pass


class SingularJacobianError(NumericalFailure):
    pass


class StiffnessError(NumericalFailure):
    pass


class BracketError(NumericalFailure):
    pass


class GrazingEventError(NumericalFailure):
    """Raised when a gradient is requested through a non-transversal event.

    The loss of the offending simulation is still available as ``loss``.
    """

    def __init__(self, message: str, *, loss: float = float("nan"), **kw):
        super().__init__(message, **kw)
        self.loss = loss


class AdjointLinearError(NumericalFailure):
    pass


class DegenerateEventError(NumericalFailure):
    pass


class StaleTrajectoryError(NumericalFailure):
    pass


class OracleFailure(NumericalFailure):
    pass
