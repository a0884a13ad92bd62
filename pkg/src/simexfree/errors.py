"""Exception types shared across the package."""


class SimexfreeError(Exception):
    """Base class for all package errors."""


class DataError(SimexfreeError, ValueError):
    """Invalid input data: parse failures, dimension mismatches, bad values."""


class ModelMismatchError(DataError):
    """Responses are incompatible with the requested model family."""


class ConfigError(SimexfreeError, ValueError):
    """Invalid configuration: grid, quadrature nodes, tau, method, ..."""


class CapacityError(ConfigError):
    """Problem size exceeds a documented hard cap."""


class FactorizationError(SimexfreeError, ValueError):
    """A Gaussian density product could not be factorized."""


class EstimationError(SimexfreeError, RuntimeError):
    """Estimation failed at runtime."""


class IllPosedError(EstimationError):
    """The bias correction is ill-posed for the given data."""


class BranchCollapseError(EstimationError):
    """The corrected objective has no local minimizer on the branch through
    the naive estimate at lambda = -1 (the direct path is unavailable for
    this dataset; the grid path still applies)."""


class PoleError(EstimationError):
    """A rational extrapolant has its pole inside the extrapolation range."""


class GridConvergenceError(EstimationError):
    """One or more grid-point minimizations failed to converge."""
