"""Supervision mining and the two training loops (offline and online).

Positives are graph paths linking a question's topic entity to one of its
answers within a hop limit. Hard negatives share at least the first hop with
a positive but then diverge and end at a non-answer entity; random negatives
are random walks whose entity trace avoids every answer. Training minimizes
the pairwise ranking loss with Adam.
"""
from __future__ import annotations

import itertools
import logging
import math
import random
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..embed import CachedEmbedder
from ..kg import EntityPath, KnowledgeGraph
from .model import ScorerParams, _forward, _stack_batch, backward
from .optim import AdamState, adam_step

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Training diverged or was invoked with unusable inputs."""


@dataclass
class TrainTriplet:
    """(question, positive path, negative path), already embedded."""

    question_vec: np.ndarray
    pos_seq: list[np.ndarray]
    neg_seq: list[np.ndarray]

    def __post_init__(self) -> None:
        if not self.pos_seq or not self.neg_seq:
            raise ValueError("both path sequences need at least one relation")


@dataclass(frozen=True)
class MiningConfig:
    max_hops: int = 4
    hard_per_positive: int = 1
    random_per_positive: int = 1
    max_positives: int = 8
    enumeration_cap: int = 2000
    walk_tries: int = 25
    seed: int = 0


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    lr: float = 1e-4
    batch_size: int = 32
    seed: int = 0


def _shares_prefix(candidate: EntityPath, positive: EntityPath) -> int:
    """Length of the common hop prefix of two paths."""
    shared = 0
    for a, b in zip(candidate.hops, positive.hops):
        if a != b:
            break
        shared += 1
    return shared


def _is_prefix(candidate: EntityPath, positive: EntityPath) -> bool:
    return len(candidate) <= len(positive) and positive.hops[: len(candidate)] == candidate.hops


def mine_triplets(
    kg: KnowledgeGraph,
    question: str,
    topic_ids: Sequence[int],
    answer_ids: Sequence[int],
    encoder: CachedEmbedder,
    config: MiningConfig = MiningConfig(),
) -> list[TrainTriplet]:
    """Build (question, positive, negative) triplets for one question.

    Returns an empty list when no positive path exists within the hop limit
    (the question is skipped and logged). Deterministic under the config seed.
    """
    answers = set(answer_ids)
    rng = random.Random(config.seed)
    question_vec = encoder.embed_text(question)

    triplets: list[TrainTriplet] = []
    for topic in topic_ids:
        positives = kg.enumerate_paths(topic, answers, config.max_hops, cap=config.max_positives)
        if not positives:
            continue
        explored = kg.enumerate_paths(topic, None, config.max_hops, cap=config.enumeration_cap)
        for positive in positives:
            negatives: list[EntityPath] = []
            hard_pool = [
                p
                for p in explored
                if p.terminal() not in answers
                and _shares_prefix(p, positive) >= 1
                and not any(_is_prefix(p, pos) for pos in positives)
            ]
            if hard_pool:
                # Nearest misses first: deepest shared prefix, then shortest
                # divergence; the rng only shuffles within equal strata.
                hard_pool.sort(key=lambda p: (-_shares_prefix(p, positive), len(p)))
                ordered: list[EntityPath] = []
                for _, group in itertools.groupby(
                    hard_pool, key=lambda p: (_shares_prefix(p, positive), len(p))
                ):
                    stratum = list(group)
                    rng.shuffle(stratum)
                    ordered.extend(stratum)
                negatives.extend(ordered[: config.hard_per_positive])
            for _ in range(config.random_per_positive):
                walk = _answer_free_walk(kg, topic, answers, config, rng)
                if walk is not None:
                    negatives.append(walk)
            for negative in negatives:
                triplets.append(
                    TrainTriplet(
                        question_vec=question_vec,
                        pos_seq=_embed_path(kg, encoder, positive),
                        neg_seq=_embed_path(kg, encoder, negative),
                    )
                )
    if not triplets:
        logger.info("no positive path within %d hops for question %r; skipped", config.max_hops, question)
    return triplets


def _answer_free_walk(kg, topic, answers, config: MiningConfig, rng) -> EntityPath | None:
    # Walk length is drawn per try so short negatives (including bare prefixes
    # of gold paths) appear in the pool; the scorer must learn that stopping
    # early misses the answer.
    for _ in range(config.walk_tries):
        walk = kg.random_walk(topic, rng.randint(1, config.max_hops), rng)
        if len(walk) >= 1 and not (set(walk.entities()) & answers):
            return walk
    return None


def _embed_path(kg: KnowledgeGraph, encoder: CachedEmbedder, path: EntityPath) -> list[np.ndarray]:
    return [encoder.embed_text(kg.relation_label(r)) for r in path.relations()]


def pretrain(
    params: ScorerParams,
    triplets: Sequence[TrainTriplet],
    config: TrainConfig = TrainConfig(),
) -> list[float]:
    """Epochs of shuffled mini-batch ranking-loss training; returns the loss curve.

    Parameters are updated in place; the curve holds one mean loss per epoch.
    Raises TrainingError if the loss goes non-finite.
    """
    if not triplets:
        raise TrainingError("cannot pretrain on an empty triplet set")
    state = AdamState.create(params)
    rng = np.random.default_rng(config.seed)
    curve: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(len(triplets))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [triplets[i] for i in order[start : start + config.batch_size]]
            loss, grads = backward(params, batch)
            if not math.isfinite(loss):
                raise TrainingError("training diverged: non-finite loss")
            adam_step(params, grads, state, config.lr)
            total += loss * len(batch)
        curve.append(total / len(triplets))
    return curve


def finetune_step(
    params: ScorerParams,
    pairs: Sequence[TrainTriplet],
    state: AdamState,
    lr: float = 1e-5,
) -> float:
    """One ranking-loss update over pseudo-labeled pairs at the fine-tune rate."""
    if not pairs:
        raise ValueError("pairs must be non-empty")
    loss, grads = backward(params, pairs)
    adam_step(params, grads, state, lr)
    return loss


def ranking_accuracy(params: ScorerParams, triplets: Sequence[TrainTriplet]) -> float:
    """Fraction of triplets whose positive outscores its negative."""
    if not triplets:
        return 0.0
    count = len(triplets)
    paths = [tr.pos_seq for tr in triplets] + [tr.neg_seq for tr in triplets]
    questions = np.stack([tr.question_vec for tr in triplets] * 2)
    x, q, mask, _ = _stack_batch(params.config, questions, paths)
    scores, _ = _forward(params, x, q, mask)
    return float(np.mean(scores[:count] > scores[count:]))
