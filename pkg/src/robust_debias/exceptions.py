"""Exception and warning classes shared across the package."""


class RobustDebiasError(Exception):
    """Base class for numerical failures raised by this package."""


class AssumptionViolated(RobustDebiasError):
    """A loss or penalty fails the regularity conditions it declares."""


class NonFiniteInput(RobustDebiasError, ValueError):
    """Design matrix or response contains NaN or infinite entries."""


class SingularActiveGram(RobustDebiasError):
    """Active-set Gram matrix is singular while no ridge term is present."""


class DegenerateTrace(RobustDebiasError):
    """The Jacobian trace is numerically zero, so the variance is infinite."""


class ZeroPsi(RobustDebiasError):
    """The score vector psi(y - X beta_hat) is identically zero."""


class BoundViolated(RobustDebiasError):
    """A matrix inequality expected to hold for smooth penalties failed."""


class NonFiniteEvaluation(RobustDebiasError):
    """A vector field returned NaN or infinite values."""


class TooFewSamples(RobustDebiasError, ValueError):
    """Not enough samples for the requested goodness-of-fit test."""


class MaxIterExceeded(UserWarning):
    """Solver hit ``max_iter`` before certifying the KKT conditions."""


class KinkProximity(UserWarning):
    """Finite differences skipped observations sitting next to a loss kink."""
