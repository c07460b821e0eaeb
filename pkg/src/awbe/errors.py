"""Exception hierarchy shared across the package.

Every domain failure derives from AwbeError so the CLI can map it to
exit code 1; anything else is a bug and propagates.
"""

from __future__ import annotations


class AwbeError(Exception):
    """Base class for all domain errors raised by this package."""


class InvalidArgumentError(AwbeError):
    """An argument violates a documented precondition (non-finite, out of range)."""


class ImageFileMissingError(AwbeError):
    """The referenced image file does not exist."""


class ImageBitDepthError(AwbeError):
    """The image is not 16-bit."""


class ImageChannelError(AwbeError):
    """The image does not have the required channel count."""


class ImageTooSmallError(AwbeError):
    """The image is smaller than the operation's minimum size."""


class DimensionMismatchError(AwbeError):
    """Two images (or an image and a mask) disagree in size."""


class DegenerateIlluminantError(AwbeError):
    """An illuminant component is too close to zero to white-balance with."""


class CalibrationError(AwbeError):
    """Histogram-bin or normalization calibration could not be computed."""


class ShapeError(AwbeError):
    """A tensor or feature vector has the wrong shape for the configured model."""


class NumericError(AwbeError):
    """A non-finite value appeared; the message names the offending layer."""


class StaleTapeError(AwbeError):
    """backward() was called with a tape that does not match the current parameters."""


class CheckpointFormatError(AwbeError):
    """The checkpoint file is corrupt, truncated, or has an unsupported version."""


class ManifestError(AwbeError):
    """The dataset manifest violates its schema or invariants."""
