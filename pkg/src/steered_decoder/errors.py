"""Exception types shared across the engine.

The CLI maps ``UsageError`` (and subclasses) to exit code 2 and every other
``EngineError`` or ``OSError`` to exit code 1. Truncated or unreadable files
raise plain ``OSError``.
"""


class EngineError(Exception):
    """Base class for all engine-raised errors."""


class UsageError(EngineError):
    """Caller supplied invalid parameters or an inconsistent configuration."""


class CapacityError(UsageError):
    """A sequence or position does not fit in the model's context window."""


class VocabularyError(EngineError):
    """A token id or symbol lies outside the loaded vocabulary."""


class NumericError(EngineError):
    """Non-finite values or a degenerate numeric parameter."""


class FormatError(EngineError):
    """A weight file does not carry the expected magic or version."""


class ValidationError(EngineError):
    """A weight file header is inconsistent with its declared architecture."""


class ParseError(EngineError):
    """A samples file could not be parsed; the message names the line."""
