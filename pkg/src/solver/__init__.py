# Neural solver package
from .config import DecaySchedule, PiecewiseSchedule, RampSchedule, SolverConfig
from .networks import Mlp, load_checkpoint, save_checkpoint
from .policy import (
    ControlPolicy,
    GradientPolicy,
    NoControlPolicy,
    RegionPolicy,
    ThresholdPolicy,
    ThresholdRule,
    agreement_fraction,
    export_heatmap,
    extract_policy,
    heatmap_grid,
    region_labels,
)
from .training import (
    PathTensors,
    TrainResult,
    hamiltonian_g,
    loss_residual,
    residuals,
    shape_penalty,
    simulate_reference_batch,
    train,
)

__all__ = [
    "ControlPolicy",
    "DecaySchedule",
    "GradientPolicy",
    "Mlp",
    "NoControlPolicy",
    "PathTensors",
    "PiecewiseSchedule",
    "RampSchedule",
    "RegionPolicy",
    "SolverConfig",
    "ThresholdPolicy",
    "ThresholdRule",
    "TrainResult",
    "agreement_fraction",
    "export_heatmap",
    "extract_policy",
    "hamiltonian_g",
    "heatmap_grid",
    "load_checkpoint",
    "loss_residual",
    "region_labels",
    "residuals",
    "save_checkpoint",
    "shape_penalty",
    "simulate_reference_batch",
    "train",
]
