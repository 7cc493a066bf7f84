"""
Exception hierarchy shared by every sub-package.

The CLI catches ``ClearLensError`` and turns it into a non-zero exit code,
so anything raised on purpose should derive from it.
"""


class ClearLensError(Exception):
    """Base class for all errors raised on purpose by clearlens."""


class ShapeMismatchError(ClearLensError, ValueError):
    """Two operands (or an operand and a parameter) have incompatible shapes."""


class NonFiniteError(ClearLensError, FloatingPointError):
    """A forward op produced NaN or Inf."""


class NonFiniteGradientError(ClearLensError, FloatingPointError):
    """The optimizer received a NaN/Inf gradient for a named parameter."""


class DegenerateMotionError(ClearLensError, ValueError):
    """An affine motion is (close to) singular."""


class ImageTooSmallError(ClearLensError, ValueError):
    """An image is smaller than the smallest unit an algorithm works on."""


class EmptyRegionError(ClearLensError, ValueError):
    """A metric was asked to average over an empty mask."""


class CorpusError(ClearLensError):
    """A corpus on disk is missing files or disagrees with its manifest."""


class ConfigError(ClearLensError, ValueError):
    """Configuration file or values are invalid."""


class CheckpointError(ClearLensError):
    """A checkpoint cannot be loaded into the requested architecture."""
