"""Exception types shared across the package."""


class RefgameError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(RefgameError):
    """Shapes of the named tensors do not conform."""


class TapeReuseError(RefgameError):
    """backward() was invoked more than once on the same tape."""


class ConfigError(RefgameError):
    """Invalid configuration value or unknown config key."""


class DataError(RefgameError):
    """Dataset violates a structural invariant or cannot be loaded."""


class UndefinedCorrelationError(RefgameError):
    """Correlation requested on a sequence with zero variance."""


class TrainingDivergedError(RefgameError):
    """Loss became non-finite; carries the path of the diagnostic dump."""

    def __init__(self, message: str, dump_path: str | None = None):
        super().__init__(message)
        self.dump_path = dump_path
