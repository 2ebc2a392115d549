"""Error types raised across the package."""


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class ConfigError(ValueError):
    """A hyperparameter or configuration value is out of range."""


class ContractError(ValueError):
    """An input violates a documented precondition."""


class DataError(ValueError):
    """The dataset cannot serve the requested operation."""


class NumericError(FloatingPointError):
    """A computation produced NaN or Inf."""


class CheckpointError(IOError):
    """A checkpoint file is malformed, truncated or of the wrong version."""


class IncompatibleCheckpointError(CheckpointError):
    """A checkpoint does not match the geometry of the model it is loaded into."""


class ScarceClassWarning(UserWarning):
    """A class had fewer samples than requested and was drawn with replacement."""
