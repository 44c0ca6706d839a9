"""Exception types shared across the package.

Every numerical precondition failure maps to a dedicated class so callers
(and the CLI) can tell representation collapse apart from bad configuration.
"""


class ContrastiveLabError(Exception):
    """Base class for all package-specific errors."""


class NearZeroNorm(ContrastiveLabError):
    """A vector norm fell below the collapse threshold (1e-9)."""


class EmptyInput(ContrastiveLabError):
    """An operation received an empty sequence where at least one element is required."""


class NonPositiveAlpha(ContrastiveLabError):
    """The inverse-temperature parameter must be strictly positive."""


class DimensionMismatch(ContrastiveLabError):
    """Two sequences that must share a length do not."""


class PreconditionViolated(ContrastiveLabError):
    """An inequality check was called outside its hypotheses."""


class UnbalancedClasses(ContrastiveLabError):
    """A balanced class distribution is required but counts differ."""


class SingletonClass(ContrastiveLabError):
    """Every class needs at least two samples for bias estimation."""


class KTooLarge(ContrastiveLabError):
    """kNN asked for more neighbours than there are training points."""


class ConfigInvalid(ContrastiveLabError):
    """An experiment configuration failed validation."""
