"""Error hierarchy shared by the services, the CLI and the HTTP router."""


class ClrError(Exception):
    """Base class for every error raised by this package."""

    kind = "error"
    exit_code = 1


class InputError(ClrError, ValueError):
    """The caller supplied data or options that violate a precondition."""

    kind = "input"
    exit_code = 2


class DatasetFormatError(InputError):
    """Missing file, malformed row, non-numeric cell or unexpected header."""


class NonFiniteEntryError(InputError):
    """A dataset entry is NaN or infinite."""


class DimensionError(InputError):
    """Shapes are inconsistent or n > k >= m >= 1 does not hold."""


class RankDeficientError(InputError):
    """The instrument matrix does not have full column rank."""


class InsufficientDrawsError(InputError):
    """Too few Monte Carlo draws for the requested quantity."""


class GridError(InputError):
    """An experiment grid or grid expression is invalid."""


class NumericalDegeneracyError(ClrError, ArithmeticError):
    """The data are valid but the computation is numerically degenerate."""

    kind = "numerical"
    exit_code = 3


class DegenerateResidualError(NumericalDegeneracyError):
    """The hypothesized residual has (numerically) zero M_Z norm."""


class SingularGramError(NumericalDegeneracyError):
    """A Gram matrix that must be positive definite is singular."""


class PoleError(NumericalDegeneracyError):
    """The secular function was evaluated at one of its poles."""
