"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A config value violates its contract (bad range, unknown key, ...)."""


class ShapeError(ValueError):
    """Tensor/array shape does not match what an operation requires."""


class FormatError(ValueError):
    """A file on disk is not in the expected format; message names the path."""


class DataLoadError(RuntimeError):
    """A sample could not be read or assembled."""


class MetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. empty validity mask)."""


class TrainingDiverged(RuntimeError):
    """A non-finite loss was produced; carries a diagnostic dump of the parts."""

    def __init__(self, message, breakdown=None):
        super().__init__(message)
        self.breakdown = breakdown


class CheckpointMismatch(RuntimeError):
    """Checkpoint topology fingerprint disagrees with the current network."""
