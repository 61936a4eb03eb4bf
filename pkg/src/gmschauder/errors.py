"""Exception hierarchy shared by every module of the package."""


class GMSError(Exception):
    """Base class for all library errors."""


class ModelEvaluationError(GMSError):
    """A drift or diffusion coefficient returned a non-finite or mis-shaped value."""


class DegeneracyError(GMSError):
    """A matrix that must be invertible (flow, h-kernel, bridge covariance) is numerically singular."""


class ArgumentOrderError(GMSError, ValueError):
    """Integration bounds were supplied in decreasing order."""


class PartitionError(GMSError, ValueError):
    """A support tree violates nesting or the balance bound."""


class RangeError(GMSError, IndexError):
    """An index, level or depth lies outside what has been built."""


class InputError(GMSError, ValueError):
    """User data is incomplete or malformed."""


class UnsupportedModelError(GMSError):
    """The operation requires model properties (square invertible diffusion, 1-D state, ...) that are absent."""


class NotDifferentiableError(UnsupportedModelError):
    """Derivatives of the coefficients were requested but the model only provides continuous samples."""


class PairingError(GMSError, ValueError):
    """Two models cannot be compared because their diffusion coefficients differ."""
