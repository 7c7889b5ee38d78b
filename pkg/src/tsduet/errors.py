"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes do not conform for the requested operation."""

    @classmethod
    def for_shapes(cls, op, *shapes):
        return cls(f"{op}: incompatible shapes {' vs '.join(str(tuple(s)) for s in shapes)}")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration value."""


class DataError(ValueError):
    """Problem with user-supplied data files or datasets."""


class CheckpointError(ValueError):
    """Unreadable or corrupt checkpoint / index file."""


class CapabilityError(ValueError):
    """Request exceeds a documented capability bound."""


class NumericsError(RuntimeError):
    """Numerical failure (NaN/Inf) during training or inference."""
