# Core/errors.py
"""Exception hierarchy shared by the geometry, capacity, solver and CLI layers.

Every error carries the process exit code the CLI maps it to, so callers never
need a separate lookup table.
"""


class CapMinkError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ValidationError(CapMinkError):
    """Input or configuration violates a documented precondition."""

    exit_code = 2


class InvalidSpec(ValidationError):
    pass


class InvalidMeasure(ValidationError):
    pass


class InvalidConfig(ValidationError):
    pass


class InvalidExponent(ValidationError):
    pass


class UnsupportedDimension(ValidationError):
    pass


class UnboundedBody(ValidationError):
    """Halfspace directions lie in a closed hemisphere."""


class EmptyInterior(ValidationError):
    pass


class DegenerateBody(ValidationError):
    pass


class SpreadViolation(ValidationError):
    pass


class CentroidViolation(ValidationError):
    pass


class CriticalExponent(ValidationError):
    """p + pexp = n, where the unnormalized problem has no rescaling."""


class ZeroFunctional(ValidationError):
    pass


class ZeroSupportValue(ValidationError):
    """A facet with positive mass passes through the origin while p > 1."""


class CapacityEngineError(CapMinkError):
    """The grid cannot represent the requested body."""

    exit_code = 2


class DomainTooSmall(CapacityEngineError):
    pass


class UnresolvedBody(CapacityEngineError):
    pass


class UnresolvedFacet(CapacityEngineError):
    def __init__(self, message, facets=()):
        super().__init__(message)
        self.facets = tuple(facets)


class NoConvergence(CapMinkError):
    """An iterative method stopped before its tolerance was met.

    ``best`` holds the last field (capacity engine) or the best iterate
    (solver) so callers can still inspect or report it.
    """

    exit_code = 3

    def __init__(self, message, best=None, diagnostics=None):
        super().__init__(message)
        self.best = best
        self.diagnostics = dict(diagnostics or {})
