"""Exception types shared across the package."""


class NumericError(RuntimeError):
    """A computation produced non-finite values (NaN/Inf) or diverged."""


class InsufficientSamplesError(RuntimeError):
    """A conditional estimate had too few retained samples to be usable."""

    def __init__(self, count: int, minimum: int):
        super().__init__(
            f"only {count} samples retained in conditioning bin (need >= {minimum})"
        )
        self.count = count
        self.minimum = minimum


class UndefinedRatioError(ValueError):
    """A ratio with an all-zero denominator was requested."""


class SingularCovarianceError(ValueError):
    """A covariance matrix required to be invertible was singular."""
