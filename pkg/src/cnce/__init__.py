"""Conditional noise-contrastive estimation of unnormalised models, with
NCE, score-matching and MLE baselines and a deterministic experiment
harness."""

from .errors import (
    CnceError,
    DomainError,
    OptimizationError,
    ParameterError,
    SingularityError,
    UnsupportedModelError,
)
from .experiments import (
    ErrorRecord,
    ExperimentConfig,
    QuantileSummary,
    estimation_error,
    limit_check,
    load_records,
    persist,
    run_grid,
    run_single,
    summarize,
)
from .kernels import (
    BernoulliFlipKernel,
    GaussianPerturbKernel,
    MarginalKernel,
    NoisePairing,
    fit_marginal,
    kernel_for_data,
    log_density_marginal,
    log_ratio,
    sample_conditional,
    sample_marginal,
)
from .losses import (
    LossReport,
    MleResult,
    TWO_LOG2,
    bernoulli_population_loss,
    cnce_G,
    cnce_loss,
    mle_fit,
    nce_loss,
    score_matching_loss,
)
from .models import (
    BernoulliModel,
    GaussianPrecisionModel,
    IcaLaplaceModel,
    LogNormalExtModel,
    ModelSpec,
    RingModel,
    build_model,
    default_spec,
)
from .optimize import EpsilonSchedule, EstimationRun, OptimizerConfig, adapt_epsilon, minimize
from .seeding import stable_hash

__version__ = "0.1.0"
