"""Exception types raised by the reconstruction toolkit."""


class NfpsError(Exception):
    """Base class for all toolkit errors."""


class SizeError(NfpsError, ValueError):
    """Grid dimensions disagree with each other or with the camera."""


class DegenerateInputError(NfpsError, ValueError):
    """Input carries too little valid data for the requested operation."""


class SingularLightError(NfpsError, ValueError):
    """A light source coincides with a surface point."""


class ConvergenceError(NfpsError, RuntimeError):
    """Iterative solver failed to reach its tolerance.

    Attributes:
        residual: Relative residual at the last iteration.
        iterations: Number of iterations performed.
    """

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
