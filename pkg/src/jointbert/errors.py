"""Exception types shared across the package."""


class JointBertError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(JointBertError, ValueError):
    """Operands have incompatible shapes."""


class ConfigError(JointBertError, ValueError):
    """A configuration value is invalid."""


class DataError(JointBertError, ValueError):
    """Input data is malformed or inconsistent."""


class NumericError(JointBertError, ArithmeticError):
    """A loss or gradient became non-finite."""


class CheckpointError(JointBertError, OSError):
    """A parameter container or checkpoint could not be read."""
