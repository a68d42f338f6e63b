"""Exception hierarchy shared by all solver layers."""


class DqmeError(Exception):
    """Base class for errors raised by this package."""


class DecompositionError(DqmeError):
    """The exponential bath decomposition could not be formed."""


class OracleError(DqmeError):
    """A quadrature reference value did not converge."""


class CapacityError(DqmeError):
    """A configuration space or matrix exceeds the supported size."""


class DimensionError(DqmeError, ValueError):
    """Array shapes or index spaces do not match."""


class DivergenceError(DqmeError):
    """Time integration produced NaN or overflow."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DegenerateSteadyStateError(DqmeError):
    """The stationary condition has more than one normalized solution."""

    def __init__(self, message, nullity=None):
        super().__init__(message)
        self.nullity = nullity


class EquilibrationError(DqmeError):
    """Relaxation did not reach the requested tolerance within budget."""


class GaugeError(DqmeError):
    """The system-block trace vanished so observables cannot be normalized."""


class PositivityError(DqmeError):
    """The reduced density matrix has a significantly negative eigenvalue."""


class UnsupportedError(DqmeError):
    """An observable needs hierarchy tiers that are not present."""


class SamplerError(DqmeError):
    """The Markov chain could not start or produced an unusable sample."""


class EstimatorError(DqmeError):
    """A local estimator hit a zero amplitude inside the support."""


class ConfigError(DqmeError):
    """A run configuration failed schema validation."""


class ExpressivenessWarning(UserWarning):
    """The variational residual exceeded the configured ceiling."""
