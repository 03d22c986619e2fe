"""Exception hierarchy shared by all splinetool modules."""


class SplinetoolError(Exception):
    """Base class for all library errors."""


class NonMonotoneGrid(SplinetoolError):
    """Grid node locations are not strictly increasing."""


class TooShort(SplinetoolError):
    """Fewer than two grid nodes."""


class IndexOutOfRange(SplinetoolError):
    """Basis-function index outside [0, N)."""


class InconsistentSlopeHead(SplinetoolError):
    """Slope vector does not carry the duplicated first entry (s[0] != s[1])."""


class JumpNotAllowed(SplinetoolError):
    """Curve contains a jump where a single-valued spline is required."""


class TooFewPoints(SplinetoolError):
    """Fewer than two points."""


class NotMonotone(SplinetoolError):
    """Curve ordinates decrease somewhere."""


class LengthMismatch(SplinetoolError):
    """Vector length does not match the grid size."""


class NotNondecreasing(SplinetoolError):
    """Spline/curve must be nondecreasing for this operation."""


class LambdaOutOfRange(SplinetoolError):
    """Reweighting factor outside the range where the reweighted map stays a function."""


class WeakConvexityTooLarge(SplinetoolError):
    """Weak-convexity modulus >= 1; the prox objective is no longer strictly convex."""


class GridMismatch(SplinetoolError):
    """Spline grid differs from the problem grid."""


class DidNotConverge(SplinetoolError):
    """Iterative solver hit its iteration cap before reaching tolerance.

    Carries the best iterate so callers can still inspect it.
    """

    def __init__(self, message, result=None, residual=None):
        super().__init__(message)
        self.result = result
        self.residual = residual


class TooLarge(SplinetoolError):
    """Problem dimensions exceed the reference solver's cap."""


class ModeMismatch(SplinetoolError):
    """Channel nonlinearity is in the wrong mode for this step type."""


class ScaleTooLarge(SplinetoolError):
    """Training configuration exceeds the supported toy scale."""


class ShapeMismatch(SplinetoolError):
    """Array shapes disagree."""
