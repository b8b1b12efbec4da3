"""Exception types shared across the package."""


class NumericalError(RuntimeError):
    """Base class for failures of the numerical pipeline (exit code 3)."""


class DivergenceError(NumericalError):
    """A rollout produced a non-finite or exploding state."""

    def __init__(self, message, step=None, trajectory=None):
        super().__init__(message)
        self.step = step
        self.trajectory = trajectory


class RankError(NumericalError):
    """A matrix required to have full rank is numerically rank deficient."""

    def __init__(self, message, rank=None, expected=None):
        super().__init__(message)
        self.rank = rank
        self.expected = expected

    @property
    def deficiency(self):
        if self.rank is None or self.expected is None:
            return None
        return self.expected - self.rank


class HorizonError(ValueError):
    """The horizon is incompatible with the dictionary size (needs m >= N)."""


class HypothesisError(ValueError):
    """An identity was requested for a predictor outside its hypothesis."""


class ConfigError(ValueError):
    """Invalid experiment configuration (exit code 2)."""
