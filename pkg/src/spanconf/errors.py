"""Exception types shared across the toolkit.

Every error raised by the library derives from SpanConfError, so callers
(and the CLI exit-code mapping) can distinguish our failures from bugs.
"""


class SpanConfError(Exception):
    """Base class for all toolkit errors."""


class AlignmentError(SpanConfError):
    """A sequence does not line up with the input word count."""


class FormatError(SpanConfError):
    """Malformed tag string, BIO violation, or unparseable record."""


class UsageError(SpanConfError):
    """An operation was called outside its contract."""


class ConfigError(SpanConfError):
    """Invalid configuration value or degenerate model parameters."""


class VocabError(SpanConfError):
    """A word is not covered by the model vocabulary."""


class CapacityError(SpanConfError):
    """An exhaustive computation would exceed the configured cap."""


class RangeError(SpanConfError):
    """A numeric value is outside its documented range."""


class DecodeError(SpanConfError):
    """No usable candidate survived decoding for an example."""


class DegenerateInputError(SpanConfError):
    """The conditioning event has zero probability or no usable support."""


class EmptyEvaluationError(SpanConfError):
    """Nothing left to evaluate after filtering."""
