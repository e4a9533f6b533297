"""Exception types raised across the package."""


class NullCtrlError(Exception):
    """Base class for all package errors."""


class AdmissibilityError(NullCtrlError):
    """The weight function eta does not satisfy its admissibility conditions."""


class OverflowPolicyError(NullCtrlError):
    """A stored weight is non-finite at an interior node."""


class StructureError(NullCtrlError):
    """The target temperature profile is not a function of the vertical coordinate."""


class CflViolation(NullCtrlError):
    """Explicit advection step would violate ``|y| dt / h <= 1``."""


class PoissonNoConverge(NullCtrlError):
    """Pressure Poisson CG exceeded its iteration cap."""


class ParseError(NullCtrlError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(NullCtrlError):
    """A configuration value violates an invariant."""
