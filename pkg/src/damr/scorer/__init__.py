"""Trainable context-aware path scorer: model, training, persistence, estimator."""
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .estimator import PathScorer
from .model import (
    NumericError,
    PathEncoding,
    ScorerConfig,
    ScorerParams,
    backward,
    bpr_loss,
    init_params,
    score,
    score_batch,
    tensor_shapes,
)
from .optim import AdamState, adam_step
from .training import (
    MiningConfig,
    TrainConfig,
    TrainTriplet,
    TrainingError,
    finetune_step,
    mine_triplets,
    pretrain,
    ranking_accuracy,
)

__all__ = [
    "AdamState",
    "CheckpointError",
    "MiningConfig",
    "NumericError",
    "PathEncoding",
    "PathScorer",
    "ScorerConfig",
    "ScorerParams",
    "TrainConfig",
    "TrainTriplet",
    "TrainingError",
    "adam_step",
    "backward",
    "bpr_loss",
    "finetune_step",
    "init_params",
    "load_checkpoint",
    "mine_triplets",
    "pretrain",
    "ranking_accuracy",
    "save_checkpoint",
    "score",
    "score_batch",
    "tensor_shapes",
]
