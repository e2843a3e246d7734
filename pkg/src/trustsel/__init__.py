"""trustsel: online value-driven training-data valuation and subset selection."""

from .augment import (
    AllZeroSamplingError,
    CorruptionKind,
    CorruptionMatrix,
    SamplingState,
    ZeroDiagonalError,
    apply_corruption,
    build_corruption_matrix,
    corrupt_dataset,
    label_flip_dataset,
    sample_augmented_dataset,
    sampling_number_init,
    saug_loop,
)
from .datagen import (
    BiasedClassificationSpec,
    SparseInstance,
    gen_biased_classification,
    gen_sparse_instance,
    load_csv,
    save_csv,
)
from .metrics import (
    MetricReport,
    ParetoPoint,
    cf_gap,
    distinctiveness,
    error_rate,
    pareto_frontier,
    robust_accuracy,
    uncertainty,
)
from .models import (
    GradientBundle,
    LabeledDataset,
    ModelSpec,
    ModelState,
    SGDConfig,
    grad,
    group_loss,
    init_state,
    loss,
    sgd_step,
    train_full,
    train_on_subset,
)
from .pipeline import RunConfig, cmd_oracle_check, cmd_saug, cmd_search, cmd_select, cmd_sweep
from .solver import (
    ColumnId,
    FeatureColumn,
    ReplaceDecision,
    SelectionBuffer,
    SolverTrace,
    batch_omp,
    check_inclusion_conditions,
    data_replace,
    normalize_column,
    project,
    refit_coefficients,
    run_online_selection,
    select_step,
)
from .valuation import (
    IncrementalValue,
    ValueTarget,
    compose_target,
    cumulative_target,
    dp_disparity,
    eo_disparity,
    fairness_increment,
    incremental_value_exact,
    robustness_increment,
    taylor_feature,
)

__version__ = "0.1.0"
