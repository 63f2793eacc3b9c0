"""Exception types raised across the package."""


class CollapseError(Exception):
    """Base class for all package errors."""


class SizeError(CollapseError):
    """A constructed operator or state exceeds the configured dimension cap."""


class ContractViolation(CollapseError, ValueError):
    """An input breaks a documented precondition (non-Hermitian, bad shape...)."""


class BasisMismatch(ContractViolation):
    """State and operator live on different product-basis layouts."""


class DegenerateStateError(CollapseError):
    """A state with zero (or non-finite) norm was passed where a ratio is needed."""


class DegenerateOutcomeError(CollapseError):
    """A jump annihilated every amplitude of the state."""

    def __init__(self, message, context=None):
        super().__init__(message)
        self.context = dict(context or {})


class PosteriorUnderflowError(CollapseError):
    """Posterior mass cannot be represented (no prior support near the datum)."""


class ConditioningInfeasibleError(CollapseError):
    """The final boundary condition is orthogonal to every evolved history."""


class TruncationLeakageError(CollapseError):
    """Population of the top Fock level exceeded the allowed leakage."""


class GridCoverageError(CollapseError):
    """An outcome quadrature grid does not cover the required spectral window."""


class InvalidCutError(CollapseError, ValueError):
    """A hypersurface (cut) is outside the region or violates the slope bound."""


class MissingOutcomeError(CollapseError, KeyError):
    """Replay mode crossed a sprinkled event with no recorded outcome."""


class EnumerationTooLarge(CollapseError):
    """Foliation enumeration would exceed the configured cap."""

    def __init__(self, message, estimate):
        super().__init__(message)
        self.estimate = estimate


class ConfigError(CollapseError, ValueError):
    """Run or figure configuration failed strict validation."""
