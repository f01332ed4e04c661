"""Exception hierarchy.

Everything raised on purpose derives from ClvqaError so the CLI can map
failures to exit codes: configuration/validation problems exit 2, numeric
failures exit 4, any other runtime failure exits 3.
"""


class ClvqaError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ClvqaError):
    """Bad experiment configuration (unknown key, wrong type, bad value)."""


class DataError(ClvqaError):
    """Malformed or inconsistent dataset content."""


class ParseError(DataError):
    """A file failed schema validation; names the line and field."""

    def __init__(self, path, line, field, message):
        self.path = path
        self.line = line
        self.field = field
        super().__init__(f"{path}:{line}: field {field!r}: {message}")


class VocabularyError(ClvqaError):
    """Unknown answer id/string, or inconsistent vocabulary state."""


class EmbeddingError(ClvqaError):
    """Malformed embedding table (ragged dims, NaN entries, bad line)."""


class ShapeError(ClvqaError):
    """Array shape mismatch; message names the offending layer or input."""


class TraceError(ClvqaError):
    """Activation trace does not match the model it is replayed through."""


class NumericError(ClvqaError):
    """Non-finite loss or gradient; message names the location."""


class CheckpointError(ClvqaError):
    """Unreadable or incompatible model checkpoint."""


class LogError(ClvqaError):
    """Prediction log is missing entries required by a metric."""


class StatError(ClvqaError):
    """A statistic is undefined for the given input (e.g. constant ranks)."""
