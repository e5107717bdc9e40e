"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor or signal extents do not line up for the requested operation."""


class GraphError(RuntimeError):
    """Misuse of the recorded computation graph (non-scalar loss, stale grads)."""


class NonFiniteError(ArithmeticError):
    """A forward or backward pass produced NaN or Inf."""


class ConfigError(ValueError):
    """A configuration value is out of its valid range."""


class InputError(ValueError):
    """A signal-level precondition failed (empty clip, zero reference, ...)."""


class EstimationError(RuntimeError):
    """An acoustic measurement could not be carried out on the given data."""


class IngestionError(RuntimeError):
    """An external source file could not be read or has the wrong format."""


class TrainingError(RuntimeError):
    """Training aborted; details were dumped next to the run artifacts."""
