"""Exception hierarchy shared by the solvers and the CLI."""


class SprayError(Exception):
    """Base class for all package errors."""


class SupportError(SprayError):
    """A field carries mass too close to the edge of the computational box."""


class OutOfBoxError(SprayError, ValueError):
    """A query point lies outside the grid box."""


class SingularInputError(SprayError, ValueError):
    """The Coulomb kernel was evaluated at the origin."""


class CollisionError(SprayError):
    """Two particles came closer than the collision floor."""


class CFLError(SprayError):
    """The requested time step violates the CFL restriction."""


class GridMismatchError(SprayError, ValueError):
    """Two fields (or states) live on different grids or times."""


class NormalizationError(SprayError, ValueError):
    """A cutoff profile does not integrate to one."""


class SamplingError(SprayError):
    """Particle sampling could not satisfy its constraints."""


class NumericalAbort(SprayError):
    """A run stopped on a blow-up or non-finite state."""


class ConfigError(SprayError, ValueError):
    """Malformed or inconsistent experiment configuration."""
