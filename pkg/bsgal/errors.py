"""Exceptions raised by bsgal."""


class BsgalError(Exception):
    """Base class for every error raised by the package."""


class ParameterError(BsgalError, ValueError):
    """An argument is outside its allowed range."""


class DimensionError(ParameterError):
    """Two vectors that must share a length do not."""


class ShapeError(DimensionError):
    """A batch does not match the model's input or class layout."""


class NumericError(BsgalError, ArithmeticError):
    """A NaN or infinity showed up where finite values are required."""


class ContractViolationError(BsgalError):
    """A caller broke a documented precondition."""


class ConfigError(BsgalError):
    """The experiment config is malformed or inconsistent."""


class CorruptionError(BsgalError):
    """A parameter file is truncated or fails its checksum."""


class IncompatibilityError(BsgalError):
    """A parameter file was written for a different model config."""
