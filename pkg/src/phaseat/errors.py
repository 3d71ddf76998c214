class ShapeError(ValueError):
    """Tensor or parameter dimensions do not line up."""


class StateError(RuntimeError):
    """An operation was handed stale or missing state (trace, projection)."""


class DegeneracyError(ValueError):
    """Input data carries no usable variance."""


class FormatError(ValueError):
    """A file does not follow the expected binary layout."""


class ConfigError(ValueError):
    """Experiment configuration failed validation."""
