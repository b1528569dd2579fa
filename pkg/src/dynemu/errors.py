"""Exception types raised by the emulator pipeline."""


class EmulatorError(Exception):
    """Base class for all numerical and configuration failures."""


class NonDiagonalizable(EmulatorError):
    """The drift matrix of some interval is (numerically) defective."""

    def __init__(self, message, interval=None, replica=None):
        self.interval = interval
        self.replica = replica
        where = []
        if replica is not None:
            where.append(f"replica {replica}")
        if interval is not None:
            where.append(f"interval {interval}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class DegenerateEigenvalues(NonDiagonalizable):
    """Two eigenvalues of a closed-form model Jacobian coincide."""


class NotPositiveDefinite(EmulatorError):
    """Cholesky factorization failed for every entry of the jitter schedule."""


class MismatchedGrids(EmulatorError):
    """Two inputs (or an input and a grid) do not share a time grid."""


class NonFinite(EmulatorError):
    """ODE integration produced a non-finite state."""

    def __init__(self, message, time=None, component=None):
        self.time = time
        self.component = component
        super().__init__(message)


class ConfigError(EmulatorError):
    """Invalid configuration or inconsistent input dimensions."""
