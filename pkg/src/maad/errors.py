"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """Inputs do not satisfy an operation's preconditions (shapes, ranges)."""


class NumericError(FloatingPointError):
    """A non-finite value appeared where a finite one is required."""

    def __init__(self, message, value=None):
        super().__init__(message if value is None else f"{message}: {value!r}")
        self.value = value


class InfeasibleTransition(ValueError):
    """No in-bounds action explains the observed transition."""


class EmptyBufferError(ValueError):
    pass


class EmptyResultError(ValueError):
    pass


class TrajectoryParseError(ValueError):
    def __init__(self, path, lineno, reason):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.path = path
        self.lineno = lineno


class AbsoluteContinuityError(ValueError):
    """A log-ratio would involve a zero probability in the denominator."""


class DegenerateInput(ValueError):
    pass


class ConfigError(ValueError):
    pass
