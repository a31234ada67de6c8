"""Exception types shared across the package."""


class DgzslError(Exception):
    """Base class for all validation, format, and configuration errors."""


class ShapeError(DgzslError):
    """Operands have incompatible shapes. Messages name both shapes."""


class DataFormatError(DgzslError):
    """A data file violates its declared on-disk format."""


class ConfigError(DgzslError):
    """A training configuration is malformed or inconsistent."""
