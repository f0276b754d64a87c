"""Exception types shared across the package."""


class UnicardioError(Exception):
    """Base class for package-specific errors."""


class ParameterError(UnicardioError, ValueError):
    """An argument is outside its legal range."""


class NonFiniteSignalError(UnicardioError, ValueError):
    """A signal contains NaN or infinite samples."""


class DegenerateStatsError(UnicardioError, ValueError):
    """Normalization statistics are degenerate (zero spread)."""


class TaskError(UnicardioError, ValueError):
    """A task identifier or task construction is invalid."""


class ConfigError(UnicardioError, ValueError):
    """A configuration file is malformed or holds unknown keys."""


class FormatError(UnicardioError, ValueError):
    """A binary or CSV artifact does not match its declared format."""


class TrainingDiverged(UnicardioError, RuntimeError):
    """Loss became non-finite during training."""
