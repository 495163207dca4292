"""Exception hierarchy.  Each error carries the CLI exit code it maps to:
2 for validation problems, 3 for numerical nonconvergence, 4 for the
combinatorial guard."""


class CurvlabError(Exception):
    exit_code = 1

    def record(self):
        """Machine-readable form used by the CLI error report."""
        return {"error": type(self).__name__, "message": str(self), "exit_code": self.exit_code}


class ValidationError(CurvlabError):
    exit_code = 2


class ConstraintViolation(ValidationError):
    pass


class HypothesisViolated(ValidationError):
    pass


class ZeroNormalizer(ValidationError):
    pass


class DomainExit(ValidationError):
    """A Revolution orbit left the profile's parameter interval."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class HorizonExhausted(ValidationError):
    pass


class NumericalError(CurvlabError):
    exit_code = 3


class StepRejected(NumericalError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, message, iterates=None):
        super().__init__(message)
        self.iterates = iterates


class BlowUp(NumericalError):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class CombinatorialBlowup(CurvlabError):
    exit_code = 4
