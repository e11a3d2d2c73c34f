"""Exception hierarchy shared across the package.

Two intermediate bases group errors by CLI exit code: InputError (bad data,
exit 2) and StatisticalError (degenerate fits or exhausted samplers, exit 3).
ConfigError maps to exit 4.
"""


class PTBalanceError(Exception):
    """Base class for all package-specific errors."""


class InputError(PTBalanceError):
    """Input data is malformed or inconsistent."""


class StatisticalError(PTBalanceError):
    """A statistical procedure cannot proceed on this data."""


class DimensionMismatch(InputError):
    """Input arrays have inconsistent shapes."""


class InvalidSizes(InputError):
    """Treatment group sizes are infeasible."""


class RankDeficient(StatisticalError):
    """Design matrix is (numerically) rank deficient."""


class LeverageOne(StatisticalError):
    """A unit has leverage 1, so HC2/HC3 weights are undefined."""


class SingularCovariates(StatisticalError):
    """The finite-population covariate covariance matrix is singular."""


class AcceptanceExhausted(StatisticalError):
    """A rejection sampler ran out of attempts."""


class DegenerateAnchor(StatisticalError):
    """The anchor unit's covariate is too close to zero to solve for the
    residual constraint; callers redraw instead of dividing by ~0."""


class EmptyConditionSet(StatisticalError):
    """No draw satisfies the conditioning event."""


class ConfigError(PTBalanceError):
    """Invalid simulation or CLI configuration."""
