"""Exceptions raised by sapa-upsample."""


class SapaError(Exception):
    """Base class for all library errors."""


class ConfigurationError(SapaError, ValueError):
    """A configuration value is invalid or inconsistent."""


class ShapeError(SapaError, ValueError):
    """Tensor shapes or channel counts do not line up."""


class InapplicableError(ShapeError):
    """The requested variant cannot run on these inputs (SAPA-I with C != C')."""


class TensorFormatError(SapaError):
    """A tensor or parameter file is malformed."""


class NonFiniteError(SapaError):
    """A forward evaluation produced NaN or Inf."""
