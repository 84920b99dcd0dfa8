"""Exception types shared across the package.

The CLI maps these onto exit codes: usage/config problems exit 1, data
and schema problems exit 2, backend transport failures exit 3.
"""


class NotephenoError(Exception):
    """Base class for all package errors."""


class ConfigError(NotephenoError):
    """Invalid flags, config file contents, or run configuration."""


class CorpusError(NotephenoError):
    """Input data violates a file schema or a data precondition."""


class PromptError(NotephenoError):
    """Prompt construction failed: empty note, bad shot count, thin pool."""


class TransportError(NotephenoError):
    """HTTP backend unreachable or broken after exhausting retries."""

    def __init__(self, message, note_id=None):
        super().__init__(message)
        self.note_id = note_id


class MetricsError(NotephenoError):
    """An evaluation quantity is undefined, e.g. an empty denominator."""
