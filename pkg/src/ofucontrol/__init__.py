"""Optimistic online control of unknown linear systems under stochastic convex costs."""

from .bench import (
    baseline_explore_then_commit,
    best_dap_in_hindsight,
    compute_regret,
    run_experiment_suite,
)
from .controller import (
    ControllerConfig,
    parameters_for_memory,
    run_controller,
    run_fixed_policy,
    theory_parameters,
)
from .costs import CostFamily, CostKind
from .dap import (
    DapPolicy,
    UnrolledModel,
    build_p_matrix,
    dap_action,
    dap_rho,
    exact_unrolled_model,
    surrogate_state,
)
from .estimation import (
    GramTracker,
    RlsState,
    det_doubled,
    estimate_noise,
    estimate_psi,
    whitened_bonus_matrix,
)
from .optimism import OptimisticProblem, SubproblemIndex, solve_optimistic_min, solve_subproblem
from .records import ExperimentSummary, RunRecord
from .sco import (
    DecisionSet,
    ScoConfig,
    ScoInstance,
    ScoState,
    run_sco,
    sandwich_check,
    sco_pseudo_regret,
    sco_step,
    sco_theory_parameters,
)
from .system import (
    NoiseKind,
    NoiseModel,
    RngStream,
    SystemSpec,
    make_strongly_stable_system,
    sample_noise,
    sample_noise_batch,
    step,
    verify_strong_stability,
)

__version__ = "0.1.0"
