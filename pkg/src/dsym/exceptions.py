"""Package-level exception types."""


class DatasetIOError(IOError):
    """A dataset file is missing or corrupt; carries the offending path."""

    def __init__(self, path, reason):
        self.path = str(path)
        self.reason = reason
        super().__init__(f"{self.path}: {reason}")


class ConfigError(ValueError):
    """A run configuration failed schema validation (unknown key, bad type,
    or out-of-range value); carries a dotted path to the offending field."""

    def __init__(self, field, reason):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class NonFiniteInputError(ValueError):
    """A computation received NaN or infinite values where finite ones are
    required; training loops translate this into divergence."""


class TrainingDivergedError(RuntimeError):
    """Raised when a training loss becomes non-finite.

    ``snapshot`` holds a small diagnostic dict (step, loss history tail,
    parameter norms) for post-mortem inspection.
    """

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}
