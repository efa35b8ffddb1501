"""Exception types shared across the toolkit."""


class NsvError(Exception):
    """Base class for all toolkit errors."""


class AudioDecodeError(NsvError):
    """Malformed audio container; message names the byte offset."""


class UnsupportedFormatError(NsvError):
    """Audio codec or sample layout outside PCM16 / float32 mono-mixable."""


class EmptyClipError(NsvError):
    """Audio payload decoded to zero samples."""


class EmptyCorpusError(NsvError):
    """All manifest entries were pruned away."""


class InsufficientDataError(NsvError):
    """Fewer data points than the operation requires."""


class UnitsParseError(NsvError):
    """Bad units / pseudo-phoneme interchange file; message carries the line."""


class ValidationError(NsvError, ValueError):
    """A domain-type invariant or argument precondition was violated."""


class TrainingDivergedError(NsvError):
    """Loss became non-finite; message carries the step number."""


class ConfigError(NsvError):
    """Bad pipeline configuration file or value."""
