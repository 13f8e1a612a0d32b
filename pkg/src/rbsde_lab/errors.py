"""Exception hierarchy shared by all modules."""


class RbsdeLabError(Exception):
    """Base class for every error raised by the package."""


class LatticeError(RbsdeLabError):
    """Invalid lattice parameters or an ill-posed martingale representation."""


class DriverError(RbsdeLabError):
    """Invalid driver definition or evaluation input."""


class SolverPreconditionError(RbsdeLabError):
    """A solver precondition (for example C*dt < 1) does not hold."""


class ConvergenceError(RbsdeLabError):
    """Fixed-point iteration failed to converge."""


class EnumerationCapError(RbsdeLabError):
    """A brute-force enumeration would exceed its configured cap."""


class ConfigError(RbsdeLabError):
    """Malformed or inconsistent experiment configuration."""


class ConsistencyError(RbsdeLabError):
    """Two computations that must agree exactly did not."""
