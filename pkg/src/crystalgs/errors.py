"""Exception types shared across the package."""


class CrystalGSError(Exception):
    """Base class for all package errors."""


class InvalidParameter(CrystalGSError, ValueError):
    pass


class InvalidProfile(CrystalGSError, ValueError):
    """A spectral profile is negative somewhere or otherwise malformed."""


class ConstraintViolation(CrystalGSError, ValueError):
    """f(K0) or f'(K0) is not zero for a long-range profile."""


class Unsupported(CrystalGSError, ValueError):
    pass


class DegenerateBasis(CrystalGSError, ValueError):
    pass


class UnknownLattice(CrystalGSError, KeyError):
    pass


class OptimizerFailed(CrystalGSError, RuntimeError):
    pass


class ToleranceUnreachable(CrystalGSError, RuntimeError):
    """The real-space cutoff is too small for the requested tolerance."""


class HypothesisViolation(CrystalGSError, ValueError):
    """A configuration does not satisfy the preconditions of a check."""


class WindowTooSmall(CrystalGSError, RuntimeError):
    pass
