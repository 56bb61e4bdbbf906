"""Exception types shared across the package."""


class MarketCalError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(MarketCalError):
    """Invalid or inconsistent configuration."""


class UnknownTargetError(MarketCalError):
    """Cancel/replace names an order id that is not resting in the book."""


class OwnershipError(MarketCalError):
    """Cancel/replace targets a resting order owned by another agent."""


class NotLimitError(MarketCalError):
    """Depth is only defined for limit orders."""


class IllegalActionError(MarketCalError):
    """Background action is not legal in the current book context."""


class IllegalForcedActionError(IllegalActionError):
    """Forced action at a branch point is not legal there."""


class IndexBeyondRealizedTauError(MarketCalError):
    """Requested branch index exceeds the wake-ups realized under this seed."""


class IncompleteRolloutError(MarketCalError):
    """Episode-level feedback requires a complete rollout."""


class NoTreatedStepsError(MarketCalError):
    """Rollout contains no treated (market-order) steps; sample undefined."""


class DegeneratePropensityError(MarketCalError):
    """A treated step reported propensity 0 before clipping."""


class SeparationError(MarketCalError):
    """Propensity fitting needs at least one sample of each class."""


class TooFewSamplesError(MarketCalError):
    """U-statistic estimators need at least two samples per side."""


class EmptySampleError(MarketCalError):
    """Distance estimator called with an empty sample set."""


class PoolTooSmallError(MarketCalError):
    """Bootstrap pool smaller than the largest requested subsample size."""


class NaNGradientError(MarketCalError):
    """Gradient accumulation produced a non-finite value."""
