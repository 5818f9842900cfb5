"""Exception types shared across the package."""


class CnceError(Exception):
    """Base class for all package errors."""


class DomainError(CnceError, ValueError):
    """A point lies outside the domain of a model or kernel."""


class ParameterError(CnceError, ValueError):
    """Parameters violate a model invariant (non-PD precision, singular
    demixing matrix, non-positive scale, ...)."""


class SingularityError(CnceError, ValueError):
    """Evaluation requested at a point where the operation is singular
    (e.g. the radial gradient at the origin)."""


class UnsupportedModelError(CnceError, ValueError):
    """The operation is not defined for this model kind."""


class OptimizationError(CnceError, RuntimeError):
    """Non-finite loss or gradient at an accepted iterate.  Carries the
    partial trajectory for diagnosis."""

    def __init__(self, message, run=None):
        super().__init__(message)
        self.run = run
