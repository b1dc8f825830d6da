"""Exceptions raised by the solver library."""


class SolverError(RuntimeError):
    pass


class DimensionMismatchError(SolverError, ValueError):
    pass


class NotSymmetricError(SolverError, ValueError):
    pass


class NotPositiveDefiniteError(SolverError, ValueError):
    pass


class InconsistentSystemError(SolverError):
    pass


class SingularInnerSystemError(SolverError):
    """CG was asked to solve a sketched system whose matrix is singular."""


class DivergenceError(SolverError):
    pass


class CertificateError(SolverError, ValueError):
    """Certificate parameters violate the conditions of the bound they request."""


class ValidationError(SolverError, ValueError):
    pass


class CorrespondenceError(SolverError):
    """Primal iterates and primal images of dual iterates drifted apart."""
