"""Mixture of low-rank experts with a rotation gate: the router scales each
selected expert and additionally turns its low-rank intermediate inside a
learned plane, widening what a fixed expert pool can express."""

from .adapter import (
    AdapterConfig,
    AdapterLayer,
    ForwardCache,
    LoraExpert,
    RouterParams,
    RoutingDecision,
    count_trainable_routing_params,
    forward,
    init_adapter,
    load_layer,
    mlp_hidden_dim,
    route,
    save_layer,
)
from .analysis import ThetaSummary, separation, summarize
from .autograd import CheckReport, backward, finite_diff_grad, grad_check
from .numkit import ConfigError, Rng, ShapeError
from .rotation import (
    RotationPlane,
    apply_rotation,
    build_plane,
    decompose_transform,
    rotation_matrix_2d,
    rotation_matrix_r,
)
from .synth import (
    DatasetConfig,
    Sample,
    TaskSpec,
    analytic_baseline_floor,
    make_rotation_separable_tasks,
    sample_batch,
)
from .trainer import (
    MetricsRecord,
    ThetaRecord,
    TrainConfig,
    TrainingDiverged,
    evaluate,
    lr_schedule,
    train,
)

__all__ = [
    "AdapterConfig",
    "AdapterLayer",
    "CheckReport",
    "ConfigError",
    "DatasetConfig",
    "ForwardCache",
    "LoraExpert",
    "MetricsRecord",
    "Rng",
    "RotationPlane",
    "RouterParams",
    "RoutingDecision",
    "Sample",
    "ShapeError",
    "TaskSpec",
    "ThetaRecord",
    "ThetaSummary",
    "TrainConfig",
    "TrainingDiverged",
    "analytic_baseline_floor",
    "apply_rotation",
    "backward",
    "build_plane",
    "count_trainable_routing_params",
    "decompose_transform",
    "evaluate",
    "finite_diff_grad",
    "forward",
    "grad_check",
    "init_adapter",
    "load_layer",
    "lr_schedule",
    "make_rotation_separable_tasks",
    "mlp_hidden_dim",
    "route",
    "rotation_matrix_2d",
    "rotation_matrix_r",
    "sample_batch",
    "save_layer",
    "separation",
    "summarize",
    "train",
]
