"""Control of a stylised interbank lending system with common noise, and its mean-field limit."""

from .control import (
    AdjointSolution,
    CostEstimate,
    OptimizeResult,
    RandomizedPolicy,
    SolverOptions,
    backward_adjoint,
    evaluate_strong_cost,
    evaluate_weak_cost,
    gateaux_derivative,
    gradient_check,
    optimize_picard,
    random_admissible_controls,
)
from .errors import AdmissibilityError, ConfigurationError, DimensionError, NumericalError, SysRiskError
from .experiments import (
    StudyReport,
    StudySettings,
    chaos_diagnostic,
    equivalence_check,
    gamma_study,
    objective_convergence,
    replay_check,
)
from .io import parse_config, parse_scenario, write_csv
from .lq import riccati_value, solve_hjb_1d, solve_riccati
from .meanfield import LimitLaw, ParticleEnsemble, evaluate_mf_cost, generator_apply, sfpk_residual, simulate_mkv
from .measures import EmpiricalMeasure, EmpiricalMeasureFlow, composite_metrics, flow_distance, wasserstein2
from .model import BankType, InitialDatum, InitLaw, Scenario, build_drift_matrix, build_vol_matrix
from .sde import (
    FeedbackControl,
    OpenLoopControl,
    constant_control,
    make_time_grid,
    sample_noise,
    simulate_paths,
)

__version__ = "0.1.0"
