"""Exception types shared across the toolkit."""


class LpnError(Exception):
    """Base class for every error raised by lpnkit."""


class ShapeError(LpnError, ValueError):
    """Tensor shapes or channel groupings are inconsistent."""


class SpecError(LpnError, ValueError):
    """A block or network description is invalid."""


class FileFormatError(LpnError):
    """A tensor or weight file is corrupt, truncated or of the wrong version."""


class WeightMismatchError(LpnError):
    """Stored weights do not match the names/shapes of the target network."""


class ScheduleError(LpnError, ValueError):
    """A (stage, epoch) pair lies outside the training schedule."""
