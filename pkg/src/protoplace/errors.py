"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible dimensions."""


class ParameterError(ValueError):
    """A numeric parameter is outside its valid range."""


class ValidationError(ValueError):
    """A dataset or model invariant does not hold."""


class FormatError(ValueError):
    """A file does not match the expected on-disk format."""


class CapacityError(ValueError):
    """A sampling request exceeds what the dataset can supply."""


class ConfigError(ValueError):
    """A run configuration is malformed or names unknown keys."""


class UsageError(RuntimeError):
    """An API was called out of order or with mismatched state."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""
