"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value.

    ``field`` names the offending key so CLI front-ends can point at it.
    """

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class SingularCorrectionError(ArithmeticError):
    """A data-consistency solve has no unique solution."""


class NonFiniteError(FloatingPointError):
    """A sampler produced NaN or infinite values."""

    def __init__(self, step: int, t: int, what: str = "x"):
        self.step = step
        self.t = t
        super().__init__(f"non-finite {what} at reverse step {step} (t={t})")
