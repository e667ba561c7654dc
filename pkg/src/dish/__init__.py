"""Hybrid gradient/Newton primal-dual methods for consensus optimization."""

from .topology import (
    ConsensusMatrix,
    Graph,
    TopologyError,
    apply_W,
    complete_graph,
    custom_matrix,
    degree_weights,
    erdos_renyi,
    path_graph,
    ring_graph,
    star_graph,
)
from .objectives import (
    LocalObjective,
    ProblemInstance,
    make_least_squares,
    make_logistic,
    make_quadratic_toy,
)
from .core import (
    ESOM0,
    GRADIENT,
    NEWTON,
    DivergenceError,
    DualKind,
    PrimalKind,
    RunState,
    Stepsizes,
    Trace,
    UpdateKind,
    UpdateSchedule,
    run,
    run_errors_only,
    step_compact,
    step_distributed,
)
from .analysis import (
    ConstantCatalog,
    MeritReport,
    TheoryMonitor,
    constant_catalog,
    corollary_envelope,
    dual_newton_step_exact,
    dual_value_grad,
    inner_minimizer,
    lagrangian,
    merit,
    theoretical_stepsizes,
    verify_proposition_bounds,
)
from .harness import (
    ExperimentConfig,
    TuningConfig,
    fit_rate,
    run_suite,
    setup1_config,
    setup2_config,
    tune,
)

__version__ = "0.1.0"
