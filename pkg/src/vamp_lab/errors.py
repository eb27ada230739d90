"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Bad argument value (non-finite input, out-of-range parameter, shape mismatch)."""


class UnsupportedShapeError(InvalidInputError):
    pass


class DomainError(ValueError):
    """Argument outside the domain of a spectral transform."""


class NumericalFailure(ArithmeticError):
    """An iterate or linear system became non-finite or singular."""


class SeInvalidError(ArithmeticError):
    """State evolution left its valid region (sensitivity outside (0, 1))."""

    def __init__(self, message, iteration):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class ConfigError(ValueError):
    """Experiment or CLI configuration violates the schema."""
