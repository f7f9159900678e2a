"""Exception types raised across the package."""


class HessmatchError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(HessmatchError, ValueError):
    pass


class NoConvergence(HessmatchError, RuntimeError):
    pass


class DivergentGeometry(HessmatchError, ValueError):
    """Two interacting particles (or an angle triple) are degenerate."""


class SingularGeometry(HessmatchError, ValueError):
    """A coarse-graining map is evaluated at one of its singular points."""


class StepTooLarge(HessmatchError, RuntimeError):
    pass


class DimensionMismatch(HessmatchError, ValueError):
    pass


class DimensionTooLarge(HessmatchError, ValueError):
    pass


class EmptyEnsemble(HessmatchError, ValueError):
    pass


class EmptyBatch(HessmatchError, ValueError):
    pass


class EmptyInput(HessmatchError, ValueError):
    pass


class ZeroVector(HessmatchError, RuntimeError):
    pass


class MissingResidual(HessmatchError, ValueError):
    pass


class StoreMismatch(HessmatchError, ValueError):
    pass


class NonFiniteLoss(HessmatchError, FloatingPointError):
    """Training produced a NaN/Inf loss; ``diagnostics`` holds the dump."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NonFiniteState(HessmatchError, FloatingPointError):
    """Simulation state left the finite reals; ``last_states`` holds the tail."""

    def __init__(self, message, last_states=None, replica=None):
        super().__init__(message)
        self.last_states = last_states
        self.replica = replica


class TrajectoryTooShort(HessmatchError, ValueError):
    pass


class ConfigError(HessmatchError, ValueError):
    pass


class HashMismatch(HessmatchError, ValueError):
    pass
