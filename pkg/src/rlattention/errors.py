"""Exception hierarchy shared by all modules.

Every error raised on purpose by the package derives from
:class:`AttentionError`, so callers (and the CLI) can separate bad input
from programming mistakes.
"""


class AttentionError(Exception):
    """Base class for all package errors."""


class ParameterError(AttentionError, ValueError):
    """A configuration value or argument is out of its allowed range."""


class DataError(AttentionError, ValueError):
    """Input data violates a value invariant (negative mass, bad gaze point, ...)."""


class ContractError(AttentionError, ValueError):
    """Inputs do not satisfy an operation's precondition (shape, normalization)."""


class NumericError(AttentionError, ArithmeticError):
    """A non-finite value appeared during a computation."""

    def __init__(self, message, layer_index=None):
        super().__init__(message)
        self.layer_index = layer_index


class NoFixationError(DataError):
    """A gaze record has no usable fixation."""


class FormatError(AttentionError, ValueError):
    """A file does not follow its documented binary or text layout."""


class BadMagicError(FormatError):
    pass


class ShapeMismatchError(FormatError):
    pass


class TruncatedBlobError(FormatError):
    pass


class IngestionError(DataError):
    """Dataset layout or log content is invalid.

    ``row`` is the 1-based line number in the offending log, when known.
    """

    def __init__(self, message, path=None, row=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if row is not None:
                where += f":{row}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.row = row
