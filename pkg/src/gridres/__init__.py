"""Resilience assessment for radial distribution networks with microgrids."""

from .network import (
    CostCoefficients,
    DerSpec,
    EdgeSpec,
    MicrogridPartition,
    NetworkError,
    NetworkSpec,
    NodeSpec,
    build_test_network,
    derive_partition,
    load_network,
    save_network,
    validate,
)
from .model import (
    CAP_MICROGRID,
    CAP_NO_MICROGRID,
    LossBreakdown,
    MilpModel,
    ModelOptions,
    build_model,
    compute_big_m,
    evaluate_loss,
    microsource_polytope,
    storage_polytope,
)
from .solvers import (
    EnumerationBackend,
    ExternalBackend,
    ScipyBackend,
    SolveParams,
    SolveResult,
    solve,
    solve_fixed_binaries,
)
from .response import (
    AttackVector,
    CascadeResult,
    NetworkState,
    OperatorResponse,
    ResponseResult,
    TnDisturbance,
    autonomous_cascade,
    baseline_loss,
    optimal_response,
)
from .bilevel import (
    BendersConfig,
    ResilienceReport,
    benders_min_cardinality,
    compute_l_max,
    enumerate_maximin,
    resilience_curve,
)
from .restore import (
    RestorationConfig,
    RestorationPlan,
    compare_restoration,
    greedy_restore,
    mip_restore,
)

__version__ = "0.1.0"
