"""Sklearn-style facade over the path scorer.

``PathScorer`` packages the functional core behind the familiar estimator
surface: hyperparameters in ``__init__`` (so ``get_params``/``set_params``
work), ``fit`` for offline pretraining on mined triplets, ``partial_fit``
for online refinement from pseudo-labeled pairs, and ``predict`` for
plausibility scores.
"""
from __future__ import annotations

import copy
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .checkpoint import load_checkpoint, save_checkpoint
from .model import ScorerConfig, init_params, score_batch
from .optim import AdamState
from .training import TrainConfig, TrainTriplet, finetune_step, pretrain


class PathScorer(BaseEstimator):
    """Trainable plausibility scorer for (question, relation path) pairs."""

    def __init__(
        self,
        embed_dim: int = 1024,
        model_dim: int = 128,
        num_layers: int = 2,
        num_heads: int = 4,
        ff_dim: int | None = None,
        max_path_len: int = 8,
        learning_rate: float = 1e-4,
        finetune_rate: float = 1e-5,
        epochs: int = 15,
        batch_size: int = 32,
        random_state: int = 0,
    ) -> None:
        self.embed_dim = embed_dim
        self.model_dim = model_dim
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.ff_dim = ff_dim
        self.max_path_len = max_path_len
        self.learning_rate = learning_rate
        self.finetune_rate = finetune_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def _make_config(self) -> ScorerConfig:
        return ScorerConfig(
            embed_dim=self.embed_dim,
            model_dim=self.model_dim,
            num_layers=self.num_layers,
            num_heads=self.num_heads,
            ff_dim=self.ff_dim,
            max_path_len=self.max_path_len,
        )

    def initialize(self) -> "PathScorer":
        """Install fresh (untrained) weights; useful for search without pretraining."""
        self.params_ = init_params(self._make_config(), self.random_state)
        self.finetune_state_ = None
        self.loss_curve_ = []
        return self

    def fit(self, X: Sequence[TrainTriplet], y=None) -> "PathScorer":
        """Pretrain on mined triplets with the configured schedule."""
        self.params_ = init_params(self._make_config(), self.random_state)
        self.finetune_state_ = None
        self.loss_curve_ = pretrain(
            self.params_,
            list(X),
            TrainConfig(
                epochs=self.epochs,
                lr=self.learning_rate,
                batch_size=self.batch_size,
                seed=self.random_state,
            ),
        )
        return self

    def partial_fit(self, X: Sequence[TrainTriplet], y=None, learning_rate: float | None = None) -> "PathScorer":
        """One online ranking update over pseudo-labeled pairs."""
        self._check_fitted()
        if self.finetune_state_ is None:
            self.finetune_state_ = AdamState.create(self.params_)
        lr = self.finetune_rate if learning_rate is None else learning_rate
        finetune_step(self.params_, list(X), self.finetune_state_, lr)
        return self

    def score_paths(self, question_vec: np.ndarray, paths: Sequence[Sequence[np.ndarray]]) -> np.ndarray:
        """Plausibility scores of many relation paths for one question."""
        self._check_fitted()
        return score_batch(self.params_, question_vec, paths)

    def predict(self, X: Sequence[tuple[np.ndarray, Sequence[np.ndarray]]]) -> np.ndarray:
        """Scores for (question embedding, relation-embedding path) pairs."""
        return np.array([float(self.score_paths(q, [path])[0]) for q, path in X])

    def save(self, path: str | Path) -> None:
        self._check_fitted()
        save_checkpoint(self.params_, path)

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "PathScorer":
        """Rebuild an estimator from a checkpoint; shape hyperparams come from it."""
        params = load_checkpoint(path)
        cfg = params.config
        est = cls(
            embed_dim=cfg.embed_dim,
            model_dim=cfg.model_dim,
            num_layers=cfg.num_layers,
            num_heads=cfg.num_heads,
            ff_dim=cfg.ff_dim,
            max_path_len=cfg.max_path_len,
            **overrides,
        )
        est.params_ = params
        est.finetune_state_ = None
        est.loss_curve_ = []
        return est

    def copy(self) -> "PathScorer":
        """Deep copy (weights included); used to isolate per-question fine-tuning."""
        return copy.deepcopy(self)

    def _check_fitted(self) -> None:
        if not hasattr(self, "params_") or self.params_ is None:
            raise NotFittedError("PathScorer has no weights; call fit(), initialize(), or load()")
