"""Exception types raised across the package."""


class NCResError(Exception):
    """Base class for all package errors."""


class InputError(NCResError, ValueError):
    """Rejected input: mismatched theta, bad dimension, malformed file."""


class SingularElementError(NCResError):
    """Truncated inversion failed; carries the smallest singular value seen."""

    def __init__(self, message, smallest_singular_value):
        super().__init__(f"{message} (smallest singular value {smallest_singular_value:.3e})")
        self.smallest_singular_value = float(smallest_singular_value)


class TruncationError(NCResError):
    """A truncation budget was exceeded; the message names the knob to raise."""


class ConvergenceError(NCResError):
    """Series or quadrature did not reach tolerance; carries the achieved error."""

    def __init__(self, message, achieved=None):
        if achieved is not None:
            message = f"{message} (achieved error {achieved:.3e})"
        super().__init__(message)
        self.achieved = achieved


class MissingComponentError(NCResError):
    """A symbol operation needed a homogeneous component that is not available."""


class EllipticityError(NCResError):
    """The leading symbol meets the spectral cut or is singular at some node."""

    def __init__(self, message, xi=None, lam=None):
        super().__init__(message)
        self.xi = xi
        self.lam = lam
