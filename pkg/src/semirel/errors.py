"""Exception hierarchy shared by the numerics and the command-line layer."""


class SemirelError(Exception):
    """Base class for all package errors."""


class NonFiniteError(SemirelError, ValueError):
    """An input or output field contains NaN or Inf."""


class GridMismatchError(SemirelError, ValueError):
    """Two fields that must share a grid do not."""


class NumericsError(SemirelError):
    """A numerical invariant was violated during a computation."""


class ImaginaryResidueError(NumericsError):
    """A nominally real bilinear carried a non-negligible imaginary part."""


class HermiticityError(NumericsError):
    """An energy expectation value came out with a sizeable imaginary part."""


class NetChargeError(NumericsError):
    """Periodic Poisson problem with a net source and no neutralizing background."""


class InstabilityError(NumericsError):
    """Time integration produced non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


class ConfigError(SemirelError):
    """Malformed, unknown or missing configuration entry."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class SnapshotError(SemirelError):
    """Corrupt, truncated or inconsistent snapshot file."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"offset {offset}: {message}")
        self.offset = offset
