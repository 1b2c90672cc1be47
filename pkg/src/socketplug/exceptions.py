class SocketPlugError(Exception):
    """Base class for package errors."""


class ConfigError(SocketPlugError, ValueError):
    """Invalid configuration or parameter combination."""


class ShapeError(SocketPlugError, ValueError):
    """Array dimensions do not line up."""


class NumericError(SocketPlugError, FloatingPointError):
    """NaN or Inf where finite values are required."""


class StateError(SocketPlugError, RuntimeError):
    """Operation called in the wrong lifecycle state."""


class IngestionError(SocketPlugError, ValueError):
    """A data file could not be parsed."""


class FormatError(SocketPlugError, ValueError):
    """A tensor file or manifest is malformed or inconsistent."""


class CacheMissError(SocketPlugError, KeyError):
    """An external socket was asked for a sample it does not hold."""


class TrainingError(SocketPlugError, RuntimeError):
    """Training diverged."""
