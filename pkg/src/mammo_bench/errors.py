"""Exception hierarchy shared by every pipeline stage."""


class MammoBenchError(Exception):
    """Base class; the CLI maps these to exit status 1."""


class ConfigError(MammoBenchError):
    """Invalid or unreadable pipeline configuration (CLI exit status 2)."""


# manifest / image decoding
class ManifestError(MammoBenchError):
    pass


class MissingColumn(ManifestError):
    def __init__(self, column: str):
        super().__init__(column)
        self.column = column


class DuplicateImageId(ManifestError):
    pass


class InvalidEnumValue(ManifestError):
    def __init__(self, row: int, field: str, value: str):
        super().__init__(f"row {row}: invalid value {value!r} for field {field!r}")
        self.row = row
        self.field = field
        self.value = value


class ImageFileNotFound(MammoBenchError, FileNotFoundError):
    pass


class UnsupportedFormat(MammoBenchError):
    pass


class CorruptPixelData(MammoBenchError):
    pass


# preprocessing
class InvalidWindow(MammoBenchError, ValueError):
    pass


class DetectorFailure(MammoBenchError):
    pass


# model
class UnknownArchitecture(MammoBenchError, ValueError):
    pass


class WeightsUnavailable(MammoBenchError):
    pass


class ShapeMismatch(MammoBenchError, ValueError):
    pass


class CorruptCheckpoint(MammoBenchError):
    pass


class ArchitectureMismatch(MammoBenchError):
    pass


# training
class TooFewPatients(MammoBenchError, ValueError):
    pass


class TooFewPositives(MammoBenchError, ValueError):
    pass


class NoPositives(MammoBenchError, ValueError):
    pass


class NoNegatives(MammoBenchError, ValueError):
    pass


class DivergedLoss(MammoBenchError, FloatingPointError):
    pass


class LeakageError(MammoBenchError, AssertionError):
    """A validation-fold image was requested while training."""


class FoldTrainingError(MammoBenchError):
    """One or more folds failed; ``errors`` maps fold index to the exception."""

    def __init__(self, errors: dict):
        msg = "; ".join(f"fold {k}: {e!r}" for k, e in sorted(errors.items()))
        super().__init__(msg)
        self.errors = errors


# evaluation
class EmptyPredictions(MammoBenchError, ValueError):
    pass


class SingleClassOnly(MammoBenchError, ValueError):
    pass


class UndefinedMetric(MammoBenchError, ValueError):
    pass
