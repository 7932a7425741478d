"""Deterministic federated-learning simulator with mid-round model rewind."""

__version__ = "0.1.0"

from .config import ExperimentConfig, config_from_dict, parse_config
from .data import (
    Dataset,
    PartitionSpec,
    Shard,
    dirichlet_partition,
    joint_view,
    load_mnist_idx,
    make_blobs,
    subsample,
)
from .federation import (
    EvalPoint,
    FederationState,
    PhasePlan,
    RoutingPlan,
    RunRecord,
    TrainEvent,
    build_routing,
    initial_state,
    make_phase_plan,
    run_experiment,
    run_joint,
    run_round_centralized,
    run_round_decentralized,
    run_standalone,
)
from .metrics import (
    CrossAccuracyMatrix,
    cross_accuracy,
    federation_accuracy,
    federation_fairness,
    personalized_fa,
    single_model_row,
    summarize,
)
from .nn import (
    ArchSpec,
    Batch,
    ModelParams,
    TrainConfig,
    accuracy,
    average_params,
    forward,
    init_model,
    loss_and_grad,
    train,
)
from .tasks import TaskSchedule, active_view, make_schedules

__all__ = [
    "ArchSpec",
    "Batch",
    "CrossAccuracyMatrix",
    "Dataset",
    "EvalPoint",
    "ExperimentConfig",
    "FederationState",
    "ModelParams",
    "PartitionSpec",
    "PhasePlan",
    "RoutingPlan",
    "RunRecord",
    "Shard",
    "TaskSchedule",
    "TrainConfig",
    "TrainEvent",
    "__version__",
    "accuracy",
    "active_view",
    "average_params",
    "build_routing",
    "config_from_dict",
    "cross_accuracy",
    "dirichlet_partition",
    "federation_accuracy",
    "federation_fairness",
    "forward",
    "init_model",
    "initial_state",
    "joint_view",
    "load_mnist_idx",
    "loss_and_grad",
    "make_blobs",
    "make_phase_plan",
    "make_schedules",
    "parse_config",
    "personalized_fa",
    "run_experiment",
    "run_joint",
    "run_round_centralized",
    "run_round_decentralized",
    "run_standalone",
    "single_model_row",
    "subsample",
    "summarize",
    "train",
]
