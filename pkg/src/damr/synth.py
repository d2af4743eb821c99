"""Synthetic benchmark generator: graphs with one planted gold path per question.

Each question gets a fresh chain of entities from its topic to its answer.
Distractor branches hang off every non-answer chain node and lead into a
shared pool of decoy entities that never connects back to any answer, so the
planted path is provably the only route to it. Relation types are split into
a gold half and a distractor half, which makes mined triplet sets separable
(positives are the only all-gold-vocabulary full-length paths). Question text
embeds the topic and the gold relation labels.
"""
from __future__ import annotations

import random
from dataclasses import dataclass

from .data import QAItem
from .kg import KnowledgeGraph


@dataclass(frozen=True)
class SynthSpec:
    """Benchmark size knobs. ``entities`` is a soft target: gold chains are
    allocated exactly and the decoy pool absorbs the remainder (minimum 4)."""

    entities: int = 200
    relation_types: int = 20
    questions: int = 50
    path_length: int = 3
    branching: int = 4
    seed: int = 0

    def validate(self) -> None:
        if self.relation_types < 2:
            raise ValueError("need at least 2 relation types (gold and distractor vocabularies)")
        if min(self.entities, self.questions, self.path_length) < 1:
            raise ValueError("entities, questions and path_length must be >= 1")
        if self.branching < 0:
            raise ValueError("branching must be >= 0")


def generate_synthetic(spec: SynthSpec) -> tuple[KnowledgeGraph, list[QAItem]]:
    """Deterministically generate (graph, questions) for the given spec."""
    spec.validate()
    rng = random.Random(spec.seed)
    gold_count = max(1, spec.relation_types // 2)
    gold_vocab = [f"relation.gold_{i:02d}" for i in range(gold_count)]
    decoy_vocab = [f"relation.decoy_{i:02d}" for i in range(spec.relation_types - gold_count)]

    chain_entities = spec.questions * (spec.path_length + 1)
    pool_size = max(4, spec.entities - chain_entities)
    pool = [f"ent.pool_{i:04d}" for i in range(pool_size)]

    triples: list[tuple[str, str, str]] = []
    items: list[QAItem] = []

    # Decoy pool wiring: each pool entity points at a few other pool entities,
    # so distractor walks can run to full length without touching any answer.
    for i, source in enumerate(pool):
        for _ in range(max(1, spec.branching)):
            target = pool[(i + rng.randrange(1, pool_size)) % pool_size]
            if target == source:
                target = pool[(i + 1) % pool_size]
            triples.append((source, rng.choice(decoy_vocab), target))

    for qi in range(spec.questions):
        chain = [f"ent.q{qi:03d}.topic"] + [
            f"ent.q{qi:03d}.hop{j}" for j in range(1, spec.path_length)
        ] + [f"ent.q{qi:03d}.answer"]
        gold_rels = [rng.choice(gold_vocab) for _ in range(spec.path_length)]
        for j in range(spec.path_length):
            triples.append((chain[j], gold_rels[j], chain[j + 1]))
        for node in chain[:-1]:
            for _ in range(spec.branching):
                triples.append((node, rng.choice(decoy_vocab), rng.choice(pool)))
        question = (
            f"which entity do you reach from {chain[0]} by following "
            + " then ".join(gold_rels)
        )
        items.append(
            QAItem(
                id=f"synth-{qi:04d}",
                question=question,
                topic_entities=(chain[0],),
                answers=frozenset({chain[-1]}),
            )
        )

    kg = KnowledgeGraph.from_labeled_triples(triples)
    return kg, items


def oracle_paths(
    kg: KnowledgeGraph, items: list[QAItem], max_hops: int, cap: int = 8
) -> dict[str, list[list[str]]]:
    """Gold relation-label sequences per question, mined from the graph itself.

    Used to instantiate the oracle mock planner: every topic-to-answer path
    within the hop limit counts as gold.
    """
    gold: dict[str, list[list[str]]] = {}
    for item in items:
        seqs: list[list[str]] = []
        answer_ids = {kg.entity_id(a) for a in item.answers if kg.has_entity(a)}
        for topic in item.topic_entities:
            if not kg.has_entity(topic) or not answer_ids:
                continue
            for path in kg.enumerate_paths(kg.entity_id(topic), answer_ids, max_hops, cap=cap):
                seqs.append([kg.relation_label(r) for r in path.relations()])
        gold[item.question] = seqs
    return gold
