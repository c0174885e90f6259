"""Exception hierarchy.

Every contract violation raised by the package derives from ``DSNIQAError`` so
callers (and the CLI) can tell them apart from I/O failures.
"""


class DSNIQAError(ValueError):
    """Base class for contract errors."""


class MissingColumn(DSNIQAError):
    pass


class UnparsableScore(DSNIQAError):
    pass


class EmptyManifest(DSNIQAError):
    pass


class InvalidSample(DSNIQAError):
    pass


class CropTooLarge(DSNIQAError):
    pass


class InvalidConfig(DSNIQAError):
    pass


class BackendParamsMissing(DSNIQAError):
    pass


class ImageTooSmall(DSNIQAError):
    pass


class ParamShapeMismatch(DSNIQAError):
    pass


class TargetLargerThanInput(DSNIQAError):
    pass


class DimMismatch(DSNIQAError):
    pass


class LengthMismatch(DSNIQAError):
    pass


class EmptyBatch(DSNIQAError):
    pass


class MixedSizeBatch(DSNIQAError):
    pass


class EmptySplit(DSNIQAError):
    pass


class VersionMismatch(DSNIQAError):
    pass


class CorruptCheckpoint(DSNIQAError):
    pass


class DegenerateInput(DSNIQAError):
    pass


class MissingReferenceIds(DSNIQAError):
    pass


class TooFewItems(DSNIQAError):
    pass


class MissingDistortionLabels(DSNIQAError):
    pass


class UnknownSubcommand(DSNIQAError):
    pass


class BadConfig(DSNIQAError):
    pass
