"""Semi-implicit stochastic recurrent networks in numpy."""
from .distributions import DiagGaussian, NoiseSpec, RngState
from .inference import (
    AnnealSchedule,
    BoundEstimate,
    bound_objective,
    elbo_lower_bound,
    k_schedule,
    kl_anneal_weight,
    regularized_bound,
    sivi_regularizer_bk,
)
from .model import ModelConfig, SisRnnModel, init_model, parameter_count
from .training import TrainConfig, evaluate_nll, load_checkpoint, save_checkpoint, train

__all__ = [
    "AnnealSchedule", "BoundEstimate", "DiagGaussian", "ModelConfig", "NoiseSpec", "RngState",
    "SisRnnModel", "TrainConfig", "bound_objective", "elbo_lower_bound", "evaluate_nll",
    "init_model", "k_schedule", "kl_anneal_weight", "load_checkpoint", "parameter_count",
    "regularized_bound", "save_checkpoint", "sivi_regularizer_bk", "train",
]
