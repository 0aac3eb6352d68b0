"""Exception hierarchy shared by every stage of the pipeline."""


class GaitBCIError(Exception):
    """Base class for all package errors."""


class ConfigurationError(GaitBCIError, ValueError):
    """A configuration object or parameter is invalid."""


class DataError(GaitBCIError, ValueError):
    """Input data is malformed (NaN/Inf, wrong shape, bad file)."""


class AlignmentError(GaitBCIError, ValueError):
    """Cue schedule and recording/timeline spans do not line up."""


class InsufficientDataError(GaitBCIError, ValueError):
    """Too few samples/trials for the requested estimate."""


class DegenerateDataError(GaitBCIError, ValueError):
    """Data has no usable variance (constant or all-zero)."""


class GeometryError(GaitBCIError, ValueError):
    """Feature geometry (bins x channels) does not match the model."""


class NumericalError(GaitBCIError, ArithmeticError):
    """A linear-algebra step failed even after regularization."""


class DecoderError(GaitBCIError, RuntimeError):
    """Streaming decoder received a gap, short read or bad input."""

    def __init__(self, message, t=None):
        if t is not None:
            message = f"{message} (t={t:.6f} s)"
        super().__init__(message)
        self.t = t


class SimulationError(GaitBCIError, RuntimeError):
    """Plant simulation was driven inconsistently (e.g. time went backwards)."""


class FormatError(DataError):
    """A file does not match its documented layout or version."""
