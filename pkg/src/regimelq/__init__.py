"""Regime-switching stochastic LQ control: solvers, simulation, verification."""

__version__ = "0.1.0"

from .chain import (
    ChainPath,
    GeneratorMatrix,
    martingale_residual,
    sample_chain_path,
    sample_chain_paths,
    validate_generator,
)
from .model import (
    CoefficientSet,
    ProblemSpec,
    coeff_at,
    make_problem,
    problem_from_config,
    problem_to_config,
    validate_problem,
    with_initial_state,
)
from .riccati import (
    FeedbackLaw,
    RiccatiGrid,
    feedback_gain,
    rhat_certificate,
    riccati_rhs,
    solve_riccati,
)
from .simulate import (
    ControlTable,
    MCEstimate,
    PathRecord,
    PerturbedFeedback,
    euler_maruyama_step,
    evaluate_cost,
    mc_cost,
    mc_cost_diff,
    simulate_closed_loop,
)
from .verify import (
    CheckResult,
    LyapunovGrid,
    convexity_probe,
    lyapunov_identity_check,
    lyapunov_solve,
    perturbation_test,
    run_standard_checks,
    stationarity_residual,
    value_identity_check,
)
from .bsde import (
    BsdeSolution,
    PathBundle,
    RandomCoefficientModel,
    backward_regression_solve,
    bsde_residual,
    generate_training_paths,
    make_model,
)
from .meanvar import (
    FrontierPoint,
    MarketSpec,
    efficient_frontier,
    lagrange_solve,
    make_market,
    market_from_config,
    market_to_problem,
    mv_moment_odes,
    mv_riccati,
    mv_simulate_check,
)
