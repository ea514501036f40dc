"""marginlab: implicit bias of GD/SGD on ReLU-family classifiers under
exponential loss, with certified max-margin directions and rate checks."""

from .analysis import (
    AnalysisError,
    LandscapeCase,
    PartitionReport,
    RateFit,
    RegimeReport,
    VarianceBoundReport,
    classify_direction,
    classify_trajectory,
    direction_error_series,
    ensemble_direction_error_series,
    fit_rate,
    norm_growth,
    norm_growth_passes,
    verify_partition_claims,
    verify_variance_bound,
)
from .data import (
    ConditionReport,
    Dataset,
    DatasetError,
    DatasetFormatError,
    GenerationError,
    augment,
    check_combes,
    gen_combes,
    gen_example1,
    gen_example2,
    gen_separable,
    leaky_transform,
    load,
    save,
)
from .margin import (
    ConvergenceError,
    LocalMinimaReport,
    MarginResult,
    RegionLabel,
    enumerate_local_minima,
    local_margin,
    max_margin,
    region_of,
)
from .model import (
    LossEval,
    ModelKind,
    MultiNeuronNet,
    activation_pattern,
    grad,
    loss,
    net_forward,
    net_grad,
    net_loss,
    net_sample_grad,
    sample_grad,
)
from .optim import (
    ConstantStep,
    EnsembleSummary,
    NetTrajectory,
    PolynomialStep,
    Trajectory,
    default_gd_stepsize,
    effective_weight,
    init_weights,
    record_steps,
    run_gd,
    run_gd_net,
    run_sgd,
    run_sgd_ensemble,
    run_sgd_net,
)

__version__ = "0.1.0"
