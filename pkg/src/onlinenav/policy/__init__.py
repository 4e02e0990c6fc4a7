from .checkpoint import CheckpointError, load_policy, save_policy
from .diffusion import DiffusionSchedule, ddpm_noise, reverse_step, timestep_embedding
from .estimator import DiffusionNavPolicy, TrainingError, tuples_to_batch
from .model import (Batch, ConfigError, DiffusionPolicyNet, LossReport, PolicyConfig,
                    cast_params, rank_and_select, total_loss)
from .nn import MLP, global_norm, n_params
from .optim import Adam, sgd_update

__all__ = [
    "Adam", "Batch", "CheckpointError", "ConfigError", "DiffusionNavPolicy", "DiffusionPolicyNet",
    "DiffusionSchedule", "LossReport", "MLP", "PolicyConfig", "TrainingError", "cast_params",
    "ddpm_noise", "global_norm", "load_policy", "n_params", "rank_and_select", "reverse_step",
    "save_policy", "sgd_update", "timestep_embedding", "total_loss", "tuples_to_batch",
]
