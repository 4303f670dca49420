"""Exception and warning types shared across the toolkit."""


class PdriceError(Exception):
    """Base class for all toolkit errors."""


class DomainError(PdriceError, ValueError):
    """A point lies outside the domain of a vector field."""


class DomainExit(PdriceError):
    """A flow left the field's domain where that is not allowed."""


class StepError(PdriceError, FloatingPointError):
    """The integrator produced a non-finite state."""


class OutOfWindow(PdriceError, ValueError):
    """A point lies outside a surface's window slab."""


class DegenerateFrame(PdriceError, ArithmeticError):
    """Tangent vectors of a surface are numerically dependent."""


class MajorantViolation(PdriceError):
    """Thinning found an intensity above its majorant."""


class ExplosionGuard(PdriceError):
    """A simulation exceeded its configured maximum number of jumps."""


class ResolutionError(PdriceError, ValueError):
    """A sampling grid is too coarse for the requested band width."""


class TangentialError(PdriceError, ValueError):
    """The drift is tangential to the surface where it must not be."""


class ZeroSlice(PdriceError, ValueError):
    """A conditional slice carries no mass and cannot be normalized."""


class DivergentNormalizer(PdriceError, ArithmeticError):
    """A normalizing integral is not finite."""


class TooFewEvents(PdriceError, ValueError):
    """Not enough events for the requested statistic."""


class InsufficientData(PdriceError, ValueError):
    """Not enough simulated data to fit or diagnose."""


class OutOfBox(PdriceError, ValueError):
    """A point lies outside the support box of a nonparametric density."""


class ConfigError(PdriceError, ValueError):
    """A scenario configuration is invalid."""


class GrazingWarning(UserWarning):
    """A located crossing is nearly tangential to the surface."""
