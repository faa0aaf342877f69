"""
Exception hierarchy shared by all modules.

Library code raises these; only the command-line interface turns them into
exit codes.
"""


class OtPropError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(OtPropError, ValueError):
    """Shapes or dimensions are inconsistent, or an input is empty."""


class CapExceededError(OtPropError):
    """Full product enumeration would exceed the configured atom cap."""


class RankDeficientError(OtPropError):
    """A matrix required to be full row-rank is not."""


class CostKindError(OtPropError, TypeError):
    """An operation received a transportation cost of the wrong kind."""


class NumericalError(OtPropError, ArithmeticError):
    """Non-finite data or a numerical procedure that failed."""


class SolverError(NumericalError):
    """An LP / QP backend did not return a usable solution."""


class ConvergenceError(NumericalError):
    """An iteration exhausted its budget before meeting its tolerance."""


class LambdaClampError(NumericalError):
    """The optimal multiplier pinned one of the search clamps."""


class ConfigError(OtPropError, ValueError):
    """A configuration file or sample file violates its schema."""


class ParameterError(OtPropError, ValueError):
    """A scalar parameter (risk level, radius, horizon) is outside its domain."""
