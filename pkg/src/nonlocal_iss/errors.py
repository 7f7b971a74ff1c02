"""Exception types raised across the package."""


class NonlocalISSError(Exception):
    """Base class for all package errors."""


class DomainError(NonlocalISSError, ValueError):
    """A quantity left the domain where the model is defined (e.g. velocity at s <= -B)."""


class ShapeError(NonlocalISSError, ValueError):
    pass


class FrameError(NonlocalISSError, ValueError):
    """State given in the physical frame where the perturbation frame is required, or vice versa."""


class StabilityError(NonlocalISSError, ValueError):
    """CFL ratio outside (0, 1]."""


class CertificateInfeasible(NonlocalISSError):
    """No Lyapunov certificate exists for the requested parameters."""


class ConfigurationError(NonlocalISSError, ValueError):
    pass


class ReportError(NonlocalISSError):
    """Input to a checker or writer is missing data it needs."""
