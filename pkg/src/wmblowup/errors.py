"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array length or dimension does not match the grid."""


class DomainError(ValueError):
    """Argument outside the domain where the operation is defined."""


class ConfigError(ValueError):
    """Invalid configuration value (e.g. Sobolev orders outside the window)."""


class ModalError(RuntimeError):
    """The dense eigensolve failed."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class DivergenceError(RuntimeError):
    """Non-finite values or overflow appeared during time stepping."""

    def __init__(self, message, time):
        super().__init__(message)
        self.time = time


class ContractionError(RuntimeError):
    """A Picard iteration failed to contract."""

    def __init__(self, message, factors):
        super().__init__(message)
        self.factors = list(factors)


class SmallnessError(ValueError):
    """Data or noise too large for the Lyapunov-Perron fixed point."""


class BracketError(RuntimeError):
    """No sign change of the corrector coefficient inside the bracket."""

    def __init__(self, message, scan):
        super().__init__(message)
        self.scan = scan


class FitRejected(RuntimeError):
    """The blowup-time fit window is not monotonically growing."""
