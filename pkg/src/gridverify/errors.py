"""Exception types raised across the package."""


class GridVerifyError(Exception):
    """Base class for all package errors."""

    code = "error"


class InputError(GridVerifyError):
    """Malformed or inconsistent input files / arguments."""

    code = "input_error"


class GridFormatError(InputError):
    code = "grid_format"


class StatsFormatError(InputError):
    code = "stats_format"


class InsufficientData(InputError):
    code = "insufficient_data"


class LengthMismatch(InputError):
    code = "length_mismatch"


class SingularTopology(GridVerifyError):
    """The active-line support does not connect every bus to a substation."""

    code = "singular_topology"


class SingularSigmaAlpha(GridVerifyError):
    code = "singular_sigma_alpha"


class DisconnectedInfrastructure(GridVerifyError):
    code = "disconnected_infrastructure"


class StepSizeCollapse(GridVerifyError):
    """Backtracking halved the step size too many times."""

    code = "step_size_collapse"
