"""Exception types raised across the package."""


class SphericalizationError(Exception):
    """Base class for all package errors."""


class DomainError(SphericalizationError, ValueError):
    """A density was evaluated outside its domain."""


class DivergenceError(SphericalizationError):
    """An improper integral does not converge."""


class PrereqError(SphericalizationError):
    """An operation's precondition (usually a density verdict) is not met."""


class ResourceError(SphericalizationError):
    """A requested model is degenerate or exceeds the node budget."""


class UnreachableError(SphericalizationError):
    """A target node cannot be reached from the source."""


class DegenerateError(SphericalizationError, ValueError):
    """A curve or ball is degenerate (coincident endpoints, empty set)."""


class ConfigError(SphericalizationError):
    """A configuration file is missing, malformed or inconsistent."""


class SkippedBall(SphericalizationError):
    """A dilated ball leaves the truncated model and cannot be evaluated."""
