"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1 (usage), DataError and
subclasses -> 2 (bad corpus / model file), everything else -> 3 (internal or
numeric failure).
"""


class FastNLUError(Exception):
    """Base class for all package errors."""


class ShapeError(FastNLUError):
    """Operands with incompatible shapes; the message names both shapes."""


class ConfigError(FastNLUError):
    """Invalid configuration value or flag combination."""


class DataError(FastNLUError):
    """Problem with input data (corpus, labels, gold ids)."""


class ParseError(DataError):
    """Malformed corpus file; carries file name and line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class ModelFileError(DataError):
    """Corrupt or inconsistent model checkpoint file."""


class NumericError(FastNLUError):
    """Non-finite values encountered during training or inference."""
