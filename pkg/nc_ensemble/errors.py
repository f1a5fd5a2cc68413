"""Exceptions raised by nc_ensemble. Each one also derives from the closest builtin, so callers
can catch either the package error or, for example, a plain :py:exc:`ValueError`.
"""

from __future__ import annotations


class NCEnsembleError(Exception):
    """Base class for all errors raised by this package"""


class ConfigurationError(NCEnsembleError, ValueError):
    """An invalid setting; ``field`` names the offending setting, if known"""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f'{field}: {message}' if field else message)


class ShapeError(NCEnsembleError, ValueError):
    """Array shapes are inconsistent with each other or with the network"""


class NumericInputError(NCEnsembleError, ValueError):
    """An input contains NaN or infinite values"""


class EmptyInputError(NCEnsembleError, ValueError):
    """An operation that needs at least one sample received none"""


class DatasetParseError(NCEnsembleError, ValueError):
    """A dataset file could not be parsed"""

    def __init__(self, message: str, path: str | None = None, row: int | None = None):
        self.path = path
        self.row = row
        location = ''
        if path:
            location = f'{path}, row {row}: ' if row is not None else f'{path}: '
        super().__init__(location + message)


class ReportFormatError(NCEnsembleError, ValueError):
    """A model or metrics document is malformed or has an unsupported version"""
