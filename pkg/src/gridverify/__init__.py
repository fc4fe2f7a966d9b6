"""Line-status verification for distribution grids from voltage magnitude data."""

__version__ = "0.1.0"

from .errors import (
    DisconnectedInfrastructure,
    GridFormatError,
    GridVerifyError,
    InputError,
    InsufficientData,
    LengthMismatch,
    SingularSigmaAlpha,
    SingularTopology,
    StatsFormatError,
    StepSizeCollapse,
)
from .grid import Bus, GridModel, Line, load_grid, support_rank_ok
from .ldf import rx, rx_meshed, rx_radial
from .likelihood import ObjectiveSpec, eval_f, eval_ftilde, eval_map, grad_f, grad_ftilde, grad_map, map_spec
from .rounding import round_bernoulli, round_spanning_forest, round_top_l
from .solve import SolverConfig, SolverResult, frank_wolfe, pgd, project_capped_simplex, solve_ml_detailed
from .stats import InjectionStatistics, VoltageDataset, load_stats, load_voltages, sample_covariance, simulate_voltages
from .evaluation import MonteCarloConfig, compare_topologies, monte_carlo

__all__ = [
    "Bus",
    "DisconnectedInfrastructure",
    "GridFormatError",
    "GridModel",
    "GridVerifyError",
    "InjectionStatistics",
    "InputError",
    "InsufficientData",
    "LengthMismatch",
    "Line",
    "MonteCarloConfig",
    "ObjectiveSpec",
    "SingularSigmaAlpha",
    "SingularTopology",
    "SolverConfig",
    "SolverResult",
    "StatsFormatError",
    "StepSizeCollapse",
    "VoltageDataset",
    "compare_topologies",
    "eval_f",
    "eval_ftilde",
    "eval_map",
    "frank_wolfe",
    "grad_f",
    "grad_ftilde",
    "grad_map",
    "load_grid",
    "load_stats",
    "load_voltages",
    "map_spec",
    "monte_carlo",
    "pgd",
    "project_capped_simplex",
    "rx",
    "rx_meshed",
    "rx_radial",
    "round_bernoulli",
    "round_spanning_forest",
    "round_top_l",
    "sample_covariance",
    "simulate_voltages",
    "solve_ml_detailed",
    "support_rank_ok",
]
