"""Model-based search for the best cloud VM type, plus an offline replay harness."""

__version__ = "0.1.0"

from .dataset import (
    LowLevelProfile,
    MeasurementRecord,
    MeasurementTable,
    ObjectiveKind,
    VmSpec,
    generate_synthetic,
    load_table,
    normalize_to_optimal,
    objective_value,
    save_table,
)
from .errors import ConfigError, DataError, SearchError, VmboError
from .forest import ForestModel, ForestParams, forest_fit, forest_predict
from .gp import GpModel, Kernel, KernelVariant, expected_improvement, gp_fit, gp_predict, kernel_eval
from .optimizer import (
    EiFraction,
    FixedBudget,
    Method,
    PredictionDelta,
    SearchConfig,
    SearchTrace,
    TableEvaluator,
    run_augmented_bo,
    run_hybrid_bo,
    run_naive_bo,
    run_random_search,
    run_search,
)
from .replay import ReplayPlan, WorkloadSummary, compare_methods, run_replay, search_cost_cdf, sweep_stopping
from .suites import generate_suite, shipped_table
