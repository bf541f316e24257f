"""Stochastic hard-thresholding solvers for sparsity-constrained estimation.

Iterative gradient methods that keep every iterate exactly k-sparse (or
rank-k for matrix problems) by projecting onto the constraint set after
each step. Variance-reduced variants reuse a periodically refreshed full
gradient to cut the per-step noise at stochastic per-step cost, and an
asynchronous block-coordinate variant extends this to lock-free parallel
updates. Problem models, synthetic data generation, property-check
oracles, and an experiment driver round out the package.
"""

from sparseht.async_solver import (
    AsyncConfig,
    AsyncDiagnostics,
    asvrg_ht,
    asvrg_ht_sim,
    contraction_factor,
    measure_delta,
)
from sparseht.backend import backend_name
from sparseht.bench import (
    ExperimentConfig,
    SummaryRow,
    misclassification_rate,
    passes_to_tolerance,
    relative_estimation_error,
    run_solver,
    sweep,
)
from sparseht.datagen import (
    Additive,
    CorruptionSpec,
    Missing,
    Multiplicative,
    SyntheticInstance,
    apply_corruption,
    gen_equicorrelated_design,
    gen_linear_responses,
    gen_logistic_instance,
    gen_logistic_responses,
    gen_lowrank_instance,
    gen_regression_instance,
    gen_sparse_truth,
    load_instance,
    load_libsvm,
    save_instance,
)
from sparseht.models import (
    LeastSquaresProblem,
    LogisticProblem,
    LowRankProblem,
    QuadraticProblem,
    make_corrupted_quadratic,
    make_linear_regression,
    make_logistic,
    make_lowrank,
)
from sparseht.objective import (
    Problem,
    SnapshotState,
    component_gradient,
    full_gradient,
    make_snapshot,
    objective_value,
    vr_gradient,
)
from sparseht.solvers import (
    Checkpoint,
    DivergenceError,
    IterateTrace,
    SagaTable,
    SolverConfig,
    fg_ht,
    prox_svrg,
    saga_ht,
    sg_ht,
    svrg_ht,
)
from sparseht.thresholding import (
    hard_threshold,
    l2_ball_project,
    soft_threshold,
    svt,
)
from sparseht.verify import (
    LemmaReport,
    RscRssEstimate,
    check_ht_lemma,
    check_svt_lemma,
    check_vr_unbiasedness,
    estimate_rsc_rss,
    vr_unbiasedness_report,
)

__version__ = "0.1.0"

__all__ = [
    "Additive",
    "AsyncConfig",
    "AsyncDiagnostics",
    "Checkpoint",
    "CorruptionSpec",
    "DivergenceError",
    "ExperimentConfig",
    "IterateTrace",
    "LeastSquaresProblem",
    "LemmaReport",
    "LogisticProblem",
    "LowRankProblem",
    "Missing",
    "Multiplicative",
    "Problem",
    "QuadraticProblem",
    "RscRssEstimate",
    "SagaTable",
    "SnapshotState",
    "SolverConfig",
    "SummaryRow",
    "SyntheticInstance",
    "apply_corruption",
    "asvrg_ht",
    "asvrg_ht_sim",
    "backend_name",
    "check_ht_lemma",
    "check_svt_lemma",
    "check_vr_unbiasedness",
    "component_gradient",
    "contraction_factor",
    "estimate_rsc_rss",
    "fg_ht",
    "full_gradient",
    "gen_equicorrelated_design",
    "gen_linear_responses",
    "gen_logistic_instance",
    "gen_logistic_responses",
    "gen_lowrank_instance",
    "gen_regression_instance",
    "gen_sparse_truth",
    "hard_threshold",
    "l2_ball_project",
    "load_instance",
    "load_libsvm",
    "make_corrupted_quadratic",
    "make_linear_regression",
    "make_logistic",
    "make_lowrank",
    "make_snapshot",
    "measure_delta",
    "misclassification_rate",
    "objective_value",
    "passes_to_tolerance",
    "prox_svrg",
    "relative_estimation_error",
    "run_solver",
    "saga_ht",
    "save_instance",
    "sg_ht",
    "soft_threshold",
    "svrg_ht",
    "svt",
    "sweep",
    "vr_gradient",
    "vr_unbiasedness_report",
]
