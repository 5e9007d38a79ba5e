"""Exception types shared across the package."""


class CaConvError(Exception):
    """Base class for package errors."""


class DimensionError(CaConvError, ValueError):
    """Shapes or extents do not agree."""


class NumericError(CaConvError, FloatingPointError):
    """A NaN or Inf appeared where finite values are required."""


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""


class UsageError(CaConvError, RuntimeError):
    """An API was called in a state that does not allow it."""


class ConfigError(CaConvError, ValueError):
    """Invalid model, training or run configuration."""


class DataError(CaConvError, ValueError):
    """Missing or malformed dataset inputs."""


class InfeasibleSpecError(CaConvError, ValueError):
    """A dependency spec implies a probability outside [0, 1]."""
