"""Distributed optimization with local training and bidirectional compression."""

from .accounting import CostModel, accumulate, totalcom
from .algorithm import (
    AlgoConfig,
    AlgoState,
    CorollaryParams,
    MachineStreams,
    PSchedule,
    RoundOutcome,
    StepSizes,
    StoppingRule,
    corollary_params,
    default_params,
    init_state,
    run,
    step,
)
from .compressors import (
    CompressedMessage,
    CompressorSpec,
    compress,
    compress_restricted,
    encoded_bits,
    omega_av,
)
from .harness import (
    ExperimentConfig,
    build_experiment,
    emit,
    matched_constant_p,
    run_experiment,
    sweep_gamma,
    synthetic_logistic_dataset,
    synthetic_quadratic_problem,
)
from .metrics import (
    MetricRecord,
    ReferenceSolution,
    RunTrace,
    bregman,
    bregman_sum,
    build_operators,
    lyapunov,
    solve_reference,
)
from .problems import (
    LogisticLoss,
    ProblemInstance,
    QuadraticLoss,
    SparseDataset,
    estimate_L,
    load_libsvm,
    logistic_problem,
    logistic_value_grad,
    parse_libsvm,
    partition,
    quadratic_reg,
    scale_mu_for_kappa,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
