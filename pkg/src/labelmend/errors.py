"""Exception and warning types shared across the pipeline."""


class LabelmendError(Exception):
    """Base class for every error raised by this package."""


class FormatError(LabelmendError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BadMagic(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass


class NonFiniteValue(FormatError):
    pass


class BadHeader(FormatError):
    pass


class IoFailure(LabelmendError):
    pass


class IndexOutOfRange(LabelmendError):
    pass


class PaletteSizeMismatch(LabelmendError):
    pass


class ShapeMismatch(LabelmendError):
    pass


class EmptyRelevantSet(LabelmendError):
    pass


class NonPositiveTheta(LabelmendError):
    pass


class MissingGroundTruth(LabelmendError):
    pass


class EmptyCandidateGrid(LabelmendError):
    pass


class TargetTooLarge(LabelmendError):
    pass


class EmptyImage(LabelmendError):
    pass


class EmptySeedSet(LabelmendError):
    pass


class DivergedLoss(LabelmendError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class NoEdges(LabelmendError):
    pass


class ShapeOutOfCanvas(LabelmendError):
    pass


class ConfigError(LabelmendError):
    pass


# Non-fatal conditions, emitted through the warnings module.

class DegeneratePlane(UserWarning):
    pass


class EmptyCleanSet(UserWarning):
    pass


class UnmetPrecision(UserWarning):
    pass
