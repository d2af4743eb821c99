"""In-memory knowledge graph: interned triples, adjacency indexing, path utilities.

The graph is immutable once built and safe for concurrent reads. The text
format is a 3-column TSV, one ``subject<TAB>relation<TAB>object`` triple per
line; lines starting with ``#`` and blank lines are ignored. Labels may not
contain tabs or newlines.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

EntityId = int
RelationId = int
Triple = tuple[EntityId, RelationId, EntityId]

INVERSE_SUFFIX = "^inv"


class KGFormatError(ValueError):
    """Raised when a KG text file cannot be parsed."""


class _Interner:
    """Bijective label <-> dense-id mapping, ids contiguous from 0."""

    def __init__(self) -> None:
        self._labels: list[str] = []
        self._index: dict[str, int] = {}

    def intern(self, label: str) -> int:
        idx = self._index.get(label)
        if idx is None:
            idx = len(self._labels)
            self._index[label] = idx
            self._labels.append(label)
        return idx

    def id(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise KeyError(f"unknown label: {label!r}") from None

    def label(self, idx: int) -> str:
        if not 0 <= idx < len(self._labels):
            raise KeyError(f"id {idx} out of range (size {len(self._labels)})")
        return self._labels[idx]

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def __len__(self) -> int:
        return len(self._labels)


@dataclass(frozen=True)
class EntityPath:
    """A grounded path: a start entity plus ordered (relation, entity) hops."""

    start: EntityId
    hops: tuple[tuple[RelationId, EntityId], ...] = ()

    def __len__(self) -> int:
        return len(self.hops)

    def relations(self) -> tuple[RelationId, ...]:
        return tuple(r for r, _ in self.hops)

    def entities(self) -> tuple[EntityId, ...]:
        """All visited entities, start first."""
        return (self.start,) + tuple(e for _, e in self.hops)

    def terminal(self) -> EntityId:
        return self.hops[-1][1] if self.hops else self.start


class KnowledgeGraph:
    """Deduplicated triple set with a forward adjacency index.

    Adjacency lists are sorted by (relation id, object id) and reproduce the
    triple set exactly. When built with ``include_inverse``, every loaded
    (s, r, o) also materializes (o, r^inv, s) where ``r^inv`` is a distinct
    relation whose label is the original plus the ``^inv`` suffix; base labels
    ending in that suffix are therefore reserved in that mode.
    """

    def __init__(
        self,
        entities: _Interner,
        relations: _Interner,
        triples: Iterable[Triple],
        include_inverse: bool = False,
    ) -> None:
        self._entities = entities
        self._relations = relations
        self._triples: tuple[Triple, ...] = tuple(sorted(set(triples)))
        self.include_inverse = include_inverse
        adj: list[list[tuple[RelationId, EntityId]]] = [[] for _ in range(len(entities))]
        for s, r, o in self._triples:
            adj[s].append((r, o))
        self._adj: tuple[tuple[tuple[RelationId, EntityId], ...], ...] = tuple(
            tuple(edges) for edges in adj
        )

    # -- construction ------------------------------------------------------

    @classmethod
    def from_labeled_triples(
        cls,
        triples: Iterable[tuple[str, str, str]],
        include_inverse: bool = False,
        extra_entities: Iterable[str] = (),
    ) -> "KnowledgeGraph":
        """Build a graph from (subject, relation, object) label triples.

        Entities and relations are interned in encounter order; when
        ``include_inverse`` is set, inverse relations are interned after all
        base relations, in sorted base-triple order.
        """
        entities = _Interner()
        relations = _Interner()
        ids: set[Triple] = set()
        for s, r, o in triples:
            ids.add((entities.intern(s), relations.intern(r), entities.intern(o)))
        for label in extra_entities:
            entities.intern(label)
        if include_inverse:
            for s, r, o in sorted(ids):
                inv = relations.intern(relations.label(r) + INVERSE_SUFFIX)
                ids.add((o, inv, s))
        return cls(entities, relations, ids, include_inverse)

    # -- basic accessors ----------------------------------------------------

    @property
    def num_entities(self) -> int:
        return len(self._entities)

    @property
    def num_relations(self) -> int:
        return len(self._relations)

    @property
    def num_triples(self) -> int:
        return len(self._triples)

    def triples(self) -> Iterator[Triple]:
        """Deduplicated triples in sorted (subject, relation, object) id order."""
        return iter(self._triples)

    def entity_id(self, label: str) -> EntityId:
        return self._entities.id(label)

    def entity_label(self, e: EntityId) -> str:
        return self._entities.label(e)

    def relation_id(self, label: str) -> RelationId:
        return self._relations.id(label)

    def relation_label(self, r: RelationId) -> str:
        return self._relations.label(r)

    def has_entity(self, label: str) -> bool:
        return label in self._entities

    def entity_labels(self) -> list[str]:
        return [self._entities.label(i) for i in range(len(self._entities))]

    def relation_labels(self) -> list[str]:
        return [self._relations.label(i) for i in range(len(self._relations))]

    def _check_entity(self, e: EntityId) -> None:
        if not 0 <= e < len(self._entities):
            raise KeyError(f"entity id {e} out of range (size {len(self._entities)})")

    def _check_relation(self, r: RelationId) -> None:
        if not 0 <= r < len(self._relations):
            raise KeyError(f"relation id {r} out of range (size {len(self._relations)})")

    # -- traversal ----------------------------------------------------------

    def neighbors(self, e: EntityId) -> tuple[tuple[RelationId, EntityId], ...]:
        """Outgoing (relation, object) edges of ``e``, sorted by (relation, object)."""
        self._check_entity(e)
        return self._adj[e]

    def outgoing_relations(self, e: EntityId) -> tuple[RelationId, ...]:
        """Distinct relations on outgoing edges of ``e``, sorted by id."""
        self._check_entity(e)
        rels: list[RelationId] = []
        for r, _ in self._adj[e]:
            if not rels or rels[-1] != r:
                rels.append(r)
        return tuple(rels)

    def follow(self, frontier: Iterable[EntityId], relation: RelationId) -> tuple[EntityId, ...]:
        """Objects reachable from any frontier entity via ``relation``, sorted."""
        self._check_relation(relation)
        out: set[EntityId] = set()
        for e in frontier:
            self._check_entity(e)
            for r, o in self._adj[e]:
                if r == relation:
                    out.add(o)
        return tuple(sorted(out))

    def extract_subgraph(self, topics: Iterable[EntityId], hops: int) -> "KnowledgeGraph":
        """Subgraph of all triples on paths of at most ``hops`` edges from a topic.

        Interning is re-compacted; topic entities are kept even when isolated
        (``hops=0`` yields a graph of bare topic entities).
        """
        if hops < 0:
            raise ValueError("hops must be >= 0")
        topic_ids = sorted(set(topics))
        for t in topic_ids:
            self._check_entity(t)
        dist: dict[EntityId, int] = {t: 0 for t in topic_ids}
        frontier = list(topic_ids)
        kept: set[Triple] = set()
        while frontier:
            nxt: list[EntityId] = []
            for u in frontier:
                if dist[u] >= hops:
                    continue
                for r, o in self._adj[u]:
                    kept.add((u, r, o))
                    if o not in dist:
                        dist[o] = dist[u] + 1
                        nxt.append(o)
            frontier = nxt
        labeled = [
            (self.entity_label(s), self.relation_label(r), self.entity_label(o))
            for s, r, o in sorted(kept)
        ]
        sub = KnowledgeGraph.from_labeled_triples(
            labeled, extra_entities=[self.entity_label(t) for t in topic_ids]
        )
        sub.include_inverse = self.include_inverse
        return sub

    def random_walk(self, start: EntityId, max_hops: int, rng: random.Random) -> EntityPath:
        """Uniform random walk of up to ``max_hops`` edges; stops at dead ends."""
        if max_hops < 1:
            raise ValueError("max_hops must be >= 1")
        self._check_entity(start)
        hops: list[tuple[RelationId, EntityId]] = []
        current = start
        for _ in range(max_hops):
            edges = self._adj[current]
            if not edges:
                break
            r, o = rng.choice(edges)
            hops.append((r, o))
            current = o
        return EntityPath(start, tuple(hops))

    def enumerate_paths(
        self,
        start: EntityId,
        targets: Iterable[EntityId] | None,
        max_len: int,
        cap: int | None = None,
    ) -> list[EntityPath]:
        """Depth-first enumeration of walks from ``start`` ending in ``targets``.

        Walks have 1..max_len hops (entity revisits allowed), are returned in
        lexicographic (relation id, entity id) hop-sequence order, and are
        truncated at ``cap`` results. ``targets=None`` accepts any terminal.
        """
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        self._check_entity(start)
        target_set = None if targets is None else set(targets)
        limit = cap if cap is not None else float("inf")
        results: list[EntityPath] = []
        hops: list[tuple[RelationId, EntityId]] = []

        def _dfs(current: EntityId) -> None:
            for r, o in self._adj[current]:
                if len(results) >= limit:
                    return
                hops.append((r, o))
                if target_set is None or o in target_set:
                    results.append(EntityPath(start, tuple(hops)))
                if len(hops) < max_len and len(results) < limit:
                    _dfs(o)
                hops.pop()

        _dfs(start)
        return results

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Write the graph as TSV in sorted triple-id order (deterministic bytes)."""
        with open(path, "w", encoding="utf-8") as fh:
            for s, r, o in self._triples:
                fh.write(
                    f"{self.entity_label(s)}\t{self.relation_label(r)}\t{self.entity_label(o)}\n"
                )


def load_kg(path: str | Path, include_inverse: bool = False) -> KnowledgeGraph:
    """Load a graph from a 3-column TSV file.

    Raises:
        KGFormatError: on a line with the wrong field count or an empty label,
            naming the offending line number.
    """
    triples: list[tuple[str, str, str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise KGFormatError(
                    f"{path}: line {lineno}: expected 3 tab-separated fields, got {len(fields)}"
                )
            if any(not f for f in fields):
                raise KGFormatError(f"{path}: line {lineno}: empty label")
            triples.append((fields[0], fields[1], fields[2]))
    return KnowledgeGraph.from_labeled_triples(triples, include_inverse=include_inverse)
