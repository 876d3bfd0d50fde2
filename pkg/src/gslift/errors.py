"""Exception types shared across the package."""


class GsliftError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(GsliftError):
    """A file could not be parsed: bad header, missing property, corrupt payload."""


class InputError(GsliftError):
    """Invalid argument or input data: shape mismatch, out-of-range value, empty input."""


class DegenerateDataError(GsliftError):
    """Not enough usable data to proceed (too few samples, zero depth, missing ground truth).

    Raised by per-track stages; the pipeline catches it and discards the track.
    """
