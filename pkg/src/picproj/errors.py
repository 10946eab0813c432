"""Exception types raised by picproj."""


class PicError(Exception):
    """Base class for all picproj errors."""


class InvalidArgument(PicError, ValueError):
    pass


class MeshParseError(PicError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class PairingFailure(PicError):
    pass


class ConfigurationError(PicError):
    pass


class LostParticleError(PicError):
    pass


class RunawayParticleError(PicError):
    """Tracking exceeded the allowed number of facet crossings."""

    def __init__(self, message, trace=None):
        self.trace = trace
        super().__init__(message)


class UnderdeterminedCellError(PicError):
    """A cell does not hold enough particle data for a well-posed local solve."""

    def __init__(self, cell, n_particles, message=None):
        self.cell = int(cell)
        self.n_particles = int(n_particles)
        if message is None:
            message = f"cell {self.cell} is underdetermined ({self.n_particles} particles)"
        super().__init__(message)


class SingularSystemError(PicError):
    pass


class ConvergenceError(PicError):
    pass
