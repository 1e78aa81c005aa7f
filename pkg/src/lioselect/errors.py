"""Exception hierarchy. Everything the package raises on bad input derives
from ``LioSelectError`` so the CLI can turn it into a clean exit code."""


class LioSelectError(Exception):
    pass


class DegenerateRotationError(LioSelectError):
    """SE(3) log requested too close to a rotation angle of pi."""


class MissingImuError(LioSelectError):
    pass


class MalformedBufferError(LioSelectError):
    pass


class TrajectoryCoverageError(LioSelectError):
    pass


class SequenceTooShortError(LioSelectError):
    pass


class DegenerateNormalsError(LioSelectError):
    pass


class DimensionMismatchError(LioSelectError):
    pass


class MissingRingError(LioSelectError):
    pass


class TrainingDivergedError(LioSelectError):
    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class InsufficientOverlapError(LioSelectError):
    def __init__(self, count, needed=10):
        super().__init__(f"only {count} correspondences survived (need >= {needed})")
        self.count = count


class EmptyCloudError(LioSelectError):
    pass


class AssociationError(LioSelectError):
    pass


class FormatError(LioSelectError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(LioSelectError):
    pass
