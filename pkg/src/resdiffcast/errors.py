"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: :class:`ConfigError` -> 2,
:class:`DataError` -> 3, :class:`NumericError` -> 4.
"""

from __future__ import annotations


class ResdiffError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(ResdiffError, ValueError):
    """Invalid or unknown configuration."""


class DataError(ResdiffError, ValueError):
    """Malformed, missing or inconsistent input data."""


class GridFormatError(DataError):
    """A grid or checkpoint file does not follow the container format."""


class GeometryError(DataError):
    """Fields or tiles do not share the required geometry."""


class NumericError(ResdiffError, ArithmeticError):
    """Non-finite values appeared during a numerical computation."""
