"""Exception types shared across the package."""


class MCCError(Exception):
    pass


class ConfigError(MCCError, ValueError):
    """Invalid hyperparameter, config key or image geometry."""


class DimensionError(MCCError, ValueError):
    """Operand shapes do not agree."""


class DomainError(MCCError, ValueError):
    """Input lies outside an operation's domain (e.g. empty softmax support)."""


class NumericError(MCCError, FloatingPointError):
    """A loss or tensor became non-finite."""

    def __init__(self, message, offender=None):
        super().__init__(message)
        self.offender = offender
