"""Monte Carlo tree search over the knowledge graph, guided by a planner and
a path scorer, with online scorer refinement from search-derived pseudo pairs.

Each tree node is anchored at an entity reached through a specific relation.
One iteration runs selection (UCT descent), expansion (one planner
consultation proposing up to k relations, grounded to child entities),
simulation (a greedy scorer-guided rollout whose squashed final score is the
reward), and backpropagation of visit/value statistics. Periodically, pairs
of visited nodes are pseudo-labeled by their empirical search values and used
to fine-tune the scorer. Answers are extracted by rescoring every visited
path and aggregating per terminal entity.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.special import expit

from .embed import CachedEmbedder
from .kg import KnowledgeGraph
from .planner import PlannerQuery, RelationPlanner, UsageSnapshot
from .scorer import PathScorer, TrainTriplet

BACKPROP_MODES = ("literal-avg", "classic-sum")


@dataclass
class SearchConfig:
    """Knobs of one search run.

    ``backprop_mode`` picks how the value statistic is maintained:
    ``literal-avg`` keeps each node's value as a visit-weighted average of its
    children (leaves hold their mean reward) and uses it directly as the UCT
    exploitation term; ``classic-sum`` keeps cumulative reward and exploits
    value/visits. ``finetune_period=0`` disables online refinement.
    """

    iterations: int = 30
    top_k: int = 3
    max_path_len: int = 4
    exploration: float = math.sqrt(2.0)
    backprop_mode: str = "literal-avg"
    finetune_period: int = 1
    finetune_pairs: int = 8
    branch_cap: int = 16
    answer_top_m: int = 10
    finetune_lr: float = 1e-5

    def validate(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.max_path_len < 1:
            raise ValueError("max_path_len must be >= 1")
        if self.backprop_mode not in BACKPROP_MODES:
            raise ValueError(f"backprop_mode must be one of {BACKPROP_MODES}")
        if self.finetune_period < 0 or self.finetune_pairs < 0:
            raise ValueError("finetune settings must be non-negative")
        if self.branch_cap < 1 or self.answer_top_m < 1:
            raise ValueError("branch_cap and answer_top_m must be >= 1")


@dataclass
class SearchNode:
    """Search-tree state: an entity, how it was reached, and its statistics."""

    entity: int
    in_relation: int | None = None
    parent: "SearchNode | None" = None
    depth: int = 0
    n: int = 0
    w: float = 0.0
    reward_sum: float = 0.0
    children: list["SearchNode"] = field(default_factory=list)
    expanded: bool = False

    def relation_path(self) -> list[int]:
        """Relation ids from the root down to this node."""
        rels: list[int] = []
        node: SearchNode | None = self
        while node is not None and node.in_relation is not None:
            rels.append(node.in_relation)
            node = node.parent
        rels.reverse()
        return rels

    def search_value(self) -> float:
        """Empirical node quality: cumulative rollout reward over visits."""
        return self.reward_sum / self.n if self.n else 0.0


@dataclass
class SearchTree:
    """One question's tree: root nodes (one per topic entity) plus shared context."""

    kg: KnowledgeGraph
    question: str
    question_vec: np.ndarray
    encoder: CachedEmbedder
    roots: list[SearchNode]

    def iter_nodes(self) -> Iterator[SearchNode]:
        """All nodes in deterministic depth-first insertion order."""
        stack = list(reversed(self.roots))
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def path_vectors(self, relation_ids: Sequence[int]) -> list[np.ndarray]:
        return [self.encoder.embed_text(self.kg.relation_label(r)) for r in relation_ids]


@dataclass(frozen=True)
class PseudoPair:
    """Two explored paths auto-labeled by their relative search values."""

    pos_relations: tuple[int, ...]
    pos_terminal: int
    neg_relations: tuple[int, ...]
    neg_terminal: int
    value_gap: float


@dataclass(frozen=True)
class Answer:
    entity: str
    score: float
    path: tuple[str, ...]


@dataclass
class SearchResult:
    """Ranked answers plus usage and tree statistics for one question."""

    answers: list[Answer]
    usage: UsageSnapshot
    stats: dict

    def ranked_entities(self) -> list[str]:
        return [a.entity for a in self.answers]

    def to_dict(self) -> dict:
        return {
            "answers": [
                {"entity": a.entity, "score": a.score, "path": list(a.path)} for a in self.answers
            ],
            "usage": self.usage.to_dict(),
            "stats": self.stats,
        }


def build_tree(
    kg: KnowledgeGraph, question: str, topic_ids: Sequence[int], encoder: CachedEmbedder
) -> SearchTree:
    if not topic_ids:
        raise ValueError("at least one topic entity is required")
    for t in topic_ids:
        if not 0 <= t < kg.num_entities:
            raise ValueError(f"topic entity id {t} is not in the graph")
    roots = [SearchNode(entity=t) for t in topic_ids]
    return SearchTree(kg, question, encoder.embed_text(question), encoder, roots)


def uct_score(value_stat: float, visits: int, parent_visits: int, exploration: float, mode: str) -> float:
    """Upper confidence bound of one child; unvisited children rank infinitely high."""
    if visits == 0:
        return math.inf
    exploit = value_stat / visits if mode == "classic-sum" else value_stat
    if exploration == 0.0 or parent_visits < 1:
        return exploit
    return exploit + exploration * math.sqrt(math.log(parent_visits) / visits)


def _best_child(children: Sequence[SearchNode], parent_visits: int, config: SearchConfig) -> SearchNode:
    best = None
    best_score = -math.inf
    for child in children:
        s = uct_score(child.w, child.n, parent_visits, config.exploration, config.backprop_mode)
        if s == math.inf:
            return child  # unvisited: first in insertion order wins
        if s > best_score:
            best, best_score = child, s
    return best


def select_leaf(tree: SearchTree, config: SearchConfig) -> list[SearchNode]:
    """UCT descent from the root set to a node awaiting expansion or terminal.

    Returns the node path from the chosen root down to the leaf. Descent stops
    at an unexpanded node, at max depth, or at an expanded node with no
    children (a dead end).
    """
    total_root_visits = sum(r.n for r in tree.roots)
    node = tree.roots[0] if len(tree.roots) == 1 else _best_child(tree.roots, total_root_visits, config)
    path = [node]
    while node.expanded and node.children and node.depth < config.max_path_len:
        node = _best_child(node.children, node.n, config)
        path.append(node)
    return path


def expand(
    tree: SearchTree, node: SearchNode, planner: RelationPlanner, config: SearchConfig
) -> list[SearchNode]:
    """Ask the planner for up to k relations and ground each to child entities.

    Children are created in planner-rank then object-id order, capped at the
    branch cap. An entity with no outgoing relations is marked expanded with
    no children and costs no planner call.
    """
    if node.expanded:
        raise ValueError("node is already expanded")
    if node.depth >= config.max_path_len:
        raise ValueError("cannot expand past the maximum path length")
    candidates = tree.kg.outgoing_relations(node.entity)
    node.expanded = True
    if not candidates:
        return []
    query = PlannerQuery(
        question=tree.question,
        current_path=tuple(tree.kg.relation_label(r) for r in node.relation_path()),
        candidates=tuple((r, tree.kg.relation_label(r)) for r in candidates),
        k=config.top_k,
    )
    choice = planner.select_relations(query)
    seen: set[tuple[int, int]] = set()
    for relation in choice.ranked:
        for obj in tree.kg.follow([node.entity], relation):
            if len(node.children) >= config.branch_cap:
                return node.children
            if (relation, obj) in seen:
                continue
            seen.add((relation, obj))
            node.children.append(
                SearchNode(entity=obj, in_relation=relation, parent=node, depth=node.depth + 1)
            )
    return node.children


def simulate(
    tree: SearchTree,
    node: SearchNode,
    scorer: PathScorer,
    config: SearchConfig,
    rng: random.Random,
) -> float:
    """Greedy scorer-guided rollout from ``node``; returns a reward in [0, 1].

    At each step every outgoing edge is a candidate one-hop extension
    (uniformly subsampled to the branch cap when there are more); the
    extension whose relation path scores highest is followed, ties going to
    the lowest relation id, then the lowest object id. The reward is the
    logistic squash of the final full-path score. A rollout stuck at a bare
    root scores 0 by convention.
    """
    relations = node.relation_path()
    current = node.entity
    final_score: float | None = None
    while len(relations) < config.max_path_len:
        edges = tree.kg.neighbors(current)
        if not edges:
            break
        if len(edges) > config.branch_cap:
            edges = sorted(rng.sample(edges, config.branch_cap))
        unique_rels = sorted({r for r, _ in edges})
        seqs = [tree.path_vectors(relations + [r]) for r in unique_rels]
        scores = scorer.score_paths(tree.question_vec, seqs)
        best_idx = int(np.argmax(scores))  # first max: lowest relation id wins ties
        best_rel = unique_rels[best_idx]
        final_score = float(scores[best_idx])
        current = next(o for r, o in edges if r == best_rel)  # lowest object id
        relations.append(best_rel)
    if final_score is None:
        if relations:
            final_score = float(
                scorer.score_paths(tree.question_vec, [tree.path_vectors(relations)])[0]
            )
        else:
            final_score = 0.0
    return float(expit(final_score))


def backpropagate(path: Sequence[SearchNode], reward: float, mode: str) -> None:
    """Update visit counts and value statistics along a root-to-leaf path.

    Every node gains a visit and accumulates the reward. In ``classic-sum``
    mode the value is the cumulative reward; in ``literal-avg`` mode the leaf
    holds its mean reward and each ancestor the visit-weighted average of its
    children's values.
    """
    if not 0.0 <= reward <= 1.0 or not math.isfinite(reward):
        raise ValueError("reward must be a finite value in [0, 1]")
    for node in path:
        node.n += 1
        node.reward_sum += reward
    if mode == "classic-sum":
        for node in path:
            node.w = node.reward_sum
        return
    leaf = path[-1]
    leaf.w = leaf.reward_sum / leaf.n
    for node in reversed(path[:-1]):
        visited = [c for c in node.children if c.n > 0]
        total = sum(c.n for c in visited)
        if total:
            node.w = sum(c.n * c.w for c in visited) / total
        else:
            node.w = node.reward_sum / node.n


def sample_pseudo_pairs(
    tree: SearchTree, config: SearchConfig, rng: random.Random
) -> list[PseudoPair]:
    """Sample up to the configured number of node pairs with distinct search values.

    Nodes are the visited non-root tree nodes; each accepted pair is oriented
    so the path with the larger terminal search value becomes the positive.
    Returns an empty list when fewer than two eligible nodes exist or all
    values are tied.
    """
    nodes = [n for n in tree.iter_nodes() if n.depth >= 1 and n.n >= 1]
    if len(nodes) < 2 or config.finetune_pairs == 0:
        return []
    values = [n.search_value() for n in nodes]
    if len(set(values)) < 2:
        return []
    pairs: list[PseudoPair] = []
    seen: set[tuple[int, int]] = set()
    attempts = 0
    limit = 20 * config.finetune_pairs
    while len(pairs) < config.finetune_pairs and attempts < limit:
        attempts += 1
        i, j = rng.sample(range(len(nodes)), 2)
        key = (min(i, j), max(i, j))
        if key in seen:
            continue
        seen.add(key)
        if values[i] == values[j]:
            continue
        hi, lo = (i, j) if values[i] > values[j] else (j, i)
        pairs.append(
            PseudoPair(
                pos_relations=tuple(nodes[hi].relation_path()),
                pos_terminal=nodes[hi].entity,
                neg_relations=tuple(nodes[lo].relation_path()),
                neg_terminal=nodes[lo].entity,
                value_gap=values[hi] - values[lo],
            )
        )
    return pairs


def extract_answers(tree: SearchTree, scorer: PathScorer, config: SearchConfig) -> list[Answer]:
    """Rescore every visited path and aggregate per terminal entity (max rule)."""
    nodes = [n for n in tree.iter_nodes() if n.depth >= 1 and n.n >= 1]
    if not nodes:
        return []
    seqs = [tree.path_vectors(n.relation_path()) for n in nodes]
    scores = scorer.score_paths(tree.question_vec, seqs)
    best: dict[int, tuple[float, SearchNode]] = {}
    for node, s in zip(nodes, scores):
        value = float(s)
        kept = best.get(node.entity)
        if kept is None or value > kept[0]:
            best[node.entity] = (value, node)
    ranked = sorted(best.items(), key=lambda item: (-item[1][0], item[0]))[: config.answer_top_m]
    return [
        Answer(
            entity=tree.kg.entity_label(entity),
            score=value,
            path=tuple(tree.kg.relation_label(r) for r in node.relation_path()),
        )
        for entity, (value, node) in ranked
    ]


def pseudo_pairs_to_triplets(tree: SearchTree, pairs: Sequence[PseudoPair]) -> list[TrainTriplet]:
    return [
        TrainTriplet(
            question_vec=tree.question_vec,
            pos_seq=tree.path_vectors(pair.pos_relations),
            neg_seq=tree.path_vectors(pair.neg_relations),
        )
        for pair in pairs
        if pair.pos_relations and pair.neg_relations
    ]


def search(
    kg: KnowledgeGraph,
    question: str,
    topic_ids: Sequence[int],
    planner: RelationPlanner,
    scorer: PathScorer,
    encoder: CachedEmbedder,
    config: SearchConfig = SearchConfig(),
    seed: int = 0,
) -> SearchResult:
    """Run the full iterative search for one question.

    The scorer is mutated in place by online fine-tuning (pass a copy to keep
    a pristine checkpoint). Deterministic given the seed, a deterministic
    planner, and deterministic embeddings.
    """
    config.validate()
    tree = build_tree(kg, question, topic_ids, encoder)
    rng = random.Random(seed)
    usage_start = planner.usage.snapshot()
    expansions = 0
    finetune_steps = 0
    pseudo_pair_count = 0

    for iteration in range(1, config.iterations + 1):
        path = select_leaf(tree, config)
        leaf = path[-1]
        if not leaf.expanded and leaf.depth < config.max_path_len:
            children = expand(tree, leaf, planner, config)
            expansions += 1
        else:
            children = []
        if children:
            # One rollout per new child, so every expansion outcome gets a
            # visit and a value before selection must choose among them.
            for child in children:
                reward = simulate(tree, child, scorer, config, rng)
                backpropagate(path + [child], reward, config.backprop_mode)
        else:
            reward = simulate(tree, leaf, scorer, config, rng)
            backpropagate(path, reward, config.backprop_mode)

        if config.finetune_period and iteration % config.finetune_period == 0:
            pairs = sample_pseudo_pairs(tree, config, rng)
            triplets = pseudo_pairs_to_triplets(tree, pairs)
            if triplets:
                scorer.partial_fit(triplets, learning_rate=config.finetune_lr)
                finetune_steps += 1
                pseudo_pair_count += len(triplets)

    answers = extract_answers(tree, scorer, config)
    usage = planner.usage.snapshot() - usage_start
    stats = {
        "iterations": config.iterations,
        "expansions": expansions,
        "planner_calls": usage.llm_calls,
        "finetune_steps": finetune_steps,
        "pseudo_pairs": pseudo_pair_count,
        "nodes": sum(1 for _ in tree.iter_nodes()),
    }
    return SearchResult(answers=answers, usage=usage, stats=stats)
