"""Exception hierarchy shared by every pipeline stage."""


class SoundMixError(Exception):
    """Base class for all pipeline errors."""


class DataError(SoundMixError):
    """Bad or unusable input data (CLI exit code 2)."""


class NumericError(SoundMixError):
    """Numerical failure during computation (CLI exit code 3)."""


# audio_io
class MalformedContainer(DataError):
    pass


class UnsupportedEncoding(DataError):
    pass


class EmptyAudio(DataError):
    pass


class InvalidRate(DataError):
    pass


class ClippedInput(DataError):
    pass


class IoFailure(DataError):
    pass


# mixer
class InsufficientPool(DataError):
    pass


class LengthMismatch(DataError):
    pass


class RateMismatch(DataError):
    pass


class UnknownSchema(DataError):
    pass


class BadRow(DataError):
    def __init__(self, row_index, reason):
        super().__init__(f"row {row_index}: {reason}")
        self.row_index = row_index


# features
class TooShort(DataError):
    pass


class InvalidRange(DataError):
    pass


class DegenerateStd(NumericError):
    pass


# model / trainer
class ShapeMismatch(DataError):
    pass


class InvalidTarget(DataError):
    pass


class StaleCache(SoundMixError):
    pass


class ConfigMismatch(DataError):
    pass


class TooFewItems(DataError):
    pass


class EmptySplit(DataError):
    pass


class NonFiniteLoss(NumericError):
    def __init__(self, epoch, batch, value):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


# metrics
class NameCountMismatch(DataError):
    pass
