"""Stratified, reordered minibatch schedules for low-variance MMD and CORAL estimates."""
from ._backend import BACKENDS, active as active_backend, set_backend
from .discrepancy import (
    DiscrepancyReport,
    Domain,
    FeatureSet,
    LossKind,
    WeightedBatch,
    discrepancy_report,
    reference_coral,
    reference_discrepancy,
    reference_mmd,
    stochastic_coral,
    stochastic_discrepancy,
    stochastic_mmd,
)
from .kernel import DEFAULT_GAMMAS, KernelKind, KernelSpec, eval_kernel, gram
from .schedule import (
    ReplacementMode,
    SchedulePlan,
    StaleCacheError,
    StratumTooSmallError,
    TupleDraw,
    apply_swap,
    build_cache,
    draw_tuples,
    greedy_reorder,
    make_schedule,
    swap_delta,
)
from .stratify import (
    InfeasibleConstraintError,
    IterationOptions,
    Stratification,
    assign_constrained,
    assign_unweighted,
    centroid_distances,
    kernel_kmeans,
)

__version__ = "0.1.0"
