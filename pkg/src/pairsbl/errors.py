"""Exception hierarchy shared by every module of the toolkit."""


class PairsBLError(Exception):
    """Base class for all toolkit errors."""


class DataError(PairsBLError, ValueError):
    """Input data could not be read or does not satisfy its invariants."""


class ParseError(DataError):
    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}: line {line}: {message}")


class ValidationError(DataError):
    pass


class AlignmentError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class DegenerateRegressionError(PairsBLError, ValueError):
    """Regressor has zero variance, so the slope is not identified."""


class DegenerateSeriesError(PairsBLError, ValueError):
    """Series is constant; no unit-root or mean-reversion statement is possible."""


class NonMeanRevertingError(PairsBLError, ValueError):
    """AR(1) coefficient outside (0, 1); the series is not an OU sample."""


class ConflictingViewError(PairsBLError, ValueError):
    """Two views reference the same asset column."""


class RegularizationRequiredError(PairsBLError, ValueError):
    """Covariance matrix is singular or not positive definite."""


class InfeasibleProblemError(PairsBLError):
    """Optimization constraints admit no point.

    ``constraint`` names the constraint that cannot be met.
    """

    def __init__(self, constraint: str, detail: str = ""):
        self.constraint = constraint
        msg = f"infeasible: {constraint}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class InfeasiblePointError(PairsBLError, ValueError):
    """A candidate point violates the problem constraints."""


class ConfigError(PairsBLError, ValueError):
    """Invalid or inconsistent configuration."""
