"""Exception hierarchy shared by all bregkit modules."""


class BregkitError(Exception):
    """Base class for every error raised by the toolkit."""

    #: short machine-readable tag used by the CLI failure JSON
    code = "error"

    def to_dict(self):
        return {"error": type(self).__name__, "code": self.code, "message": str(self)}


# -- convex analysis -------------------------------------------------------

class DomainError(BregkitError, ValueError):
    code = "domain"


class NotDifferentiable(DomainError):
    code = "not_differentiable"


class CertError(BregkitError):
    """A (u, p) pair failed its Fenchel-Young duality-gap certificate."""

    code = "certificate"

    def __init__(self, message, gap=None):
        super().__init__(message)
        self.gap = gap


class ConjugateUnavailable(BregkitError):
    code = "conjugate_unavailable"


class UnsupportedFunctional(BregkitError):
    code = "unsupported_functional"


# -- linear algebra --------------------------------------------------------

class DimensionMismatch(BregkitError, ValueError):
    code = "dimension"


class RankDeficient(BregkitError):
    code = "rank_deficient"


class NonConvergence(BregkitError):
    code = "non_convergence"


class MaxIterExceeded(BregkitError):
    """Iteration budget exhausted; ``partial`` holds the best available result."""

    code = "max_iter"

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class NotCertified(BregkitError):
    code = "not_certified"


class Infeasible(BregkitError):
    code = "infeasible"


# -- inverse scale space ---------------------------------------------------

class MaxBreakpointsExceeded(MaxIterExceeded):
    code = "max_breakpoints"


class Degenerate(BregkitError):
    code = "degenerate"


class NotMinimizer(BregkitError):
    code = "not_minimizer"


# -- PDE -------------------------------------------------------------------

class SingularSystem(BregkitError):
    code = "singular_system"


class StepFailure(BregkitError):
    code = "step_failure"


class NegativeDensity(BregkitError):
    code = "negative_density"


class MonotonicityViolation(BregkitError):
    code = "monotonicity"

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class MeshMismatch(BregkitError, ValueError):
    code = "mesh_mismatch"


# -- transport / statistics ------------------------------------------------

class EmptySupport(BregkitError):
    code = "empty_support"


class TooLarge(BregkitError, ValueError):
    code = "too_large"


class BoundViolated(BregkitError):
    """A verified inequality failed; ``report`` carries the evidence."""

    code = "bound_violated"

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
