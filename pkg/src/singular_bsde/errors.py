"""Exception types raised across the package."""


class SingularBSDEError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SingularBSDEError, ValueError):
    """Invalid model or run configuration."""


class DomainError(SingularBSDEError, ValueError):
    """An argument lies outside the domain of the requested function."""


class DivergentIntegral(SingularBSDEError):
    """An improper integral does not converge (the tail does not decay)."""


class OutOfRange(SingularBSDEError, ValueError):
    """A value lies outside the range of the function being inverted."""


class NoConvergence(SingularBSDEError):
    """An iterative solver did not converge.

    ``bracket`` holds the last known enclosing interval when available.
    """

    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class UnsupportedExpansion(SingularBSDEError):
    """The requested expansion order is not valid for this generator."""


class SingularRegression(SingularBSDEError):
    """Least-squares design matrix is rank deficient."""


class UnboundedKappa(SingularBSDEError):
    """kappa samples keep growing near zero, so A5 looks violated."""


class StiffnessError(SingularBSDEError):
    """The reference ODE integration blew up."""


class InnerEstimatorError(SingularBSDEError):
    """Inner conditional-expectation estimate failed."""
