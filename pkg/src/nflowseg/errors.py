"""Exception types shared across the package."""


class NFlowSegError(Exception):
    """Base class for all package errors."""


class EmptySlice(NFlowSegError):
    """An event slice contains no events where at least one is required."""


class DegenerateSystem(NFlowSegError):
    """A least-squares normal matrix is rank-deficient beyond tolerance."""


class InsufficientSupport(NFlowSegError):
    """Too few usable samples, or too little sign agreement, to estimate a
    translation direction from the background set."""


class FormatError(NFlowSegError):
    """A container file is corrupt, truncated, or structurally invalid."""


class VersionError(NFlowSegError):
    """A container file declares a schema version this code does not read."""


class ValidationError(NFlowSegError):
    """Input data violates a documented invariant."""
