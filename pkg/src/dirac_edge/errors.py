"""Exception hierarchy shared by all modules."""


class DiracEdgeError(Exception):
    """Base class for library errors."""


class EvaluationError(DiracEdgeError):
    """A model function returned a non-finite value."""


class GapCollapseError(DiracEdgeError):
    """The Poisson-bracket matrix is (numerically) degenerate."""


class NotFoundError(DiracEdgeError):
    """An iterative search failed to converge."""


class PreconditionError(DiracEdgeError):
    """Inputs violate a documented precondition."""


class SignatureError(PreconditionError):
    """A quadratic form does not have the expected signature."""


class KernelProjectionError(PreconditionError):
    """The kernel of a quadratic form projects to zero in position space."""


class ResolutionError(PreconditionError):
    """A grid does not resolve the features it is asked to carry."""


class AliasingError(DiracEdgeError):
    """Spectral content would be pushed past the Nyquist band."""


class ValidityError(DiracEdgeError):
    """Requested time lies beyond the validity window of a flow table."""


class StepSizeError(DiracEdgeError):
    """Time step violates the stability bound."""

    def __init__(self, message, bound=None):
        super().__init__(message)
        self.bound = bound


class BudgetError(DiracEdgeError):
    """A computation would exceed its memory budget."""


class SchemaError(DiracEdgeError):
    """A scenario file does not match the schema."""
