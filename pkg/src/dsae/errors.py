"""Exception types shared across the toolkit.

Every error raised by public entry points derives from DsaeError so the CLI
can map failures onto its exit-code contract (2 usage, 3 data, 4
incompatibility, 5 numeric).
"""


class DsaeError(Exception):
    """Base class for all toolkit errors."""


class ContractViolation(DsaeError):
    """An operation was called with arguments violating its preconditions."""


class DegenerateEmbedding(DsaeError):
    """A vector that must be normalized has (near-)zero norm."""


class EmptyFeatures(DsaeError):
    """No frames survive feature extraction or silence pruning."""


class UnsupportedAudio(DsaeError):
    """Audio input is not mono 16-bit PCM RIFF/WAVE at 16 kHz."""


class DatasetShapeError(DsaeError):
    """The corpus cannot supply the requested batch structure."""


class FormatError(DsaeError):
    """A binary or text artifact file is corrupt or truncated."""


class IncompatibleConfig(DsaeError):
    """A checkpoint was produced under a different configuration."""


class EvaluationError(DsaeError):
    """Trial scoring cannot proceed (e.g. single-class trial list)."""


class NumericFailure(DsaeError):
    """A training step produced a non-finite loss; state was not changed."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class ConfigError(DsaeError):
    """Configuration file or environment override could not be parsed."""
