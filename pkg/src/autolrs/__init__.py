"""autolrs: learning-rate schedule search by per-stage Bayesian optimization.

Training proceeds in stages of tau steps at one constant learning rate. Before
each stage the controller explores k candidate LRs, each for only tau/10
steps from a shared checkpoint, forecasts every candidate's loss at the full
stage horizon with an exponential model over spline-smoothed losses, and then
trains the stage at the best candidate. Trainers attach in process or over a
newline-delimited JSON TCP protocol.
"""

from .controller import (
    Controller,
    OrderViolation,
    Phase,
    ScheduleRecord,
    SearchConfig,
    StagePlan,
    next_command,
    select_best,
    stage_plan,
    step_accounting,
)
from .forecast import (
    ExponentialFit,
    LossSeries,
    SmoothingParams,
    SmoothingResult,
    evaluate_candidate,
    fit_exponential,
    forecast_loss,
    spline_smooth,
)
from .gp import (
    FactorizationError,
    GpPosterior,
    KernelParams,
    Observation,
    fit_posterior,
    lcb_argmin,
    matern_kernel,
    predict,
)
from .messages import (
    DIVERGENCE_LOSS,
    LOSS_TRAIN,
    LOSS_VALIDATION,
    PROTOCOL_VERSION,
    CommandDone,
    EvalConfig,
    Hello,
    LossReport,
    RestoreCkpt,
    SaveCkpt,
    SetLr,
    Shutdown,
    Stop,
    Train,
    TrainerError,
)
from .protocol import LineReader, LrSearchServer, ProtocolError, decode, encode
from .simtrainer import (
    LogisticBlobs,
    NoisyQuadratic,
    PiecewiseRegime,
    Quadratic,
    SimModel,
    SimulatedTrainer,
    oracle_best_lr,
    run_in_process,
    run_loopback_session,
)

__version__ = "0.1.0"

__all__ = [
    "Controller",
    "OrderViolation",
    "Phase",
    "ScheduleRecord",
    "SearchConfig",
    "StagePlan",
    "next_command",
    "select_best",
    "stage_plan",
    "step_accounting",
    "ExponentialFit",
    "LossSeries",
    "SmoothingParams",
    "SmoothingResult",
    "evaluate_candidate",
    "fit_exponential",
    "forecast_loss",
    "spline_smooth",
    "FactorizationError",
    "GpPosterior",
    "KernelParams",
    "Observation",
    "fit_posterior",
    "lcb_argmin",
    "matern_kernel",
    "predict",
    "DIVERGENCE_LOSS",
    "LOSS_TRAIN",
    "LOSS_VALIDATION",
    "PROTOCOL_VERSION",
    "CommandDone",
    "EvalConfig",
    "Hello",
    "LossReport",
    "RestoreCkpt",
    "SaveCkpt",
    "SetLr",
    "Shutdown",
    "Stop",
    "Train",
    "TrainerError",
    "LineReader",
    "LrSearchServer",
    "ProtocolError",
    "decode",
    "encode",
    "LogisticBlobs",
    "NoisyQuadratic",
    "PiecewiseRegime",
    "Quadratic",
    "SimModel",
    "SimulatedTrainer",
    "oracle_best_lr",
    "run_in_process",
    "run_loopback_session",
    "__version__",
]
