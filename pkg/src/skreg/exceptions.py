"""Exception types shared across the package."""


class SkregError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(SkregError):
    """Operand shapes are not conformable for the requested operation."""


class NotPositiveDefinite(SkregError):
    """A matrix required to be SPD failed its Cholesky factorization."""


class InvalidConfig(SkregError):
    """A configuration value or file is malformed or inconsistent."""


class InvalidLabel(SkregError):
    """A class label lies outside the valid range."""


class EmptyClass(SkregError):
    """A class has no training examples."""


class ShapeMismatch(SkregError):
    """Kernel dumps disagree on layer shapes during consolidation."""


class TooFewSamples(SkregError):
    """Not enough samples to fit or cross-validate an estimator."""


class DegenerateTrace(SkregError):
    """Shrinkage target is undefined because the empirical trace is zero."""


class InvalidPenalty(SkregError):
    """A penalty weight is negative or otherwise unusable."""


class MissingPrior(SkregError):
    """A layer requires a prior that the bundle does not provide."""


class UnpairedRuns(SkregError):
    """Two reports cannot be compared because their runs are not paired."""


class TrainingDiverged(SkregError):
    """A training run produced a non-finite loss."""


class MalformedImage(SkregError):
    """An image file exists but cannot be decoded into the expected layout."""
