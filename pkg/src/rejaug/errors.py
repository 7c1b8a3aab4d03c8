"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class MaxAttemptsError(RuntimeError):
    """A rejection loop exceeded its proposal budget.

    Usually this means the envelope is broken (``f/M > q`` somewhere) or the
    target places almost no mass where the proposal goes.
    """

    def __init__(self, attempts, accepted=0, needed=1):
        self.attempts = attempts
        self.accepted = accepted
        self.needed = needed
        super().__init__(
            f"rejection sampler gave up after {attempts} proposals "
            f"({accepted}/{needed} acceptances)"
        )


class NumericalError(ArithmeticError):
    """A numerical routine failed (loss of positive-definiteness, rank, ...)."""


class ConfigError(ValueError):
    """Invalid run configuration or input file."""
