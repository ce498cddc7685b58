"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class DivergenceError(ArithmeticError):
    """Raised when an iterate's norm blows past the divergence guard."""

    def __init__(self, message, alpha=None, iteration=None):
        super().__init__(message)
        self.alpha = alpha
        self.iteration = iteration


class ProtocolError(RuntimeError):
    """A simulated agent did something the messaging contract forbids."""


class GenerationError(RuntimeError):
    """Random topology generation could not produce a connected graph."""


class ConfigError(ValueError):
    """Bad experiment configuration. ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
