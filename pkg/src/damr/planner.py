"""Relation planners: pick the top-k next-hop relations for a question.

Three interchangeable kinds are provided. ``LlmPlanner`` prompts an
OpenAI-compatible chat endpoint; ``SimilarityPlanner`` ranks candidates by
embedding cosine against the question; ``MockPlanner`` is a deterministic
test oracle that knows the planted gold paths. All kinds share one contract:
the returned relations are a subset of the candidates, at most k of them,
duplicate-free. When the candidate list already fits within k there is
nothing to prune and no planner consultation happens.

Every consultation is metered on a ``UsageCounter`` so call/token budgets can
be reported uniformly; offline kinds use a chars/4 token heuristic on the
prompt they would have sent.
"""
from __future__ import annotations

import hashlib
import json
import os
import random
import re
import threading
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import requests

from .embed import API_BASE_ENV, API_KEY_ENV, CachedEmbedder

MAX_PROMPT_CANDIDATES = 50


class PlannerError(RuntimeError):
    """Planner could not produce a choice (remote failure, no fallback)."""


@dataclass(frozen=True)
class PlannerQuery:
    """One relation-selection request.

    ``candidates`` are (relation id, label) pairs in the order they should be
    rendered; ``current_path`` carries the relation labels walked so far (kept
    for planner kinds that want context; the default prompt has no slot for it).
    """

    question: str
    current_path: tuple[str, ...]
    candidates: tuple[tuple[int, str], ...]
    k: int

    def validate(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.candidates:
            raise ValueError("candidates must be non-empty")
        ids = [cid for cid, _ in self.candidates]
        if len(set(ids)) != len(ids):
            raise ValueError("candidate relation ids must be duplicate-free")


@dataclass(frozen=True)
class PlannerChoice:
    """Ranked relation ids (most relevant first) and where they came from."""

    ranked: tuple[int, ...]
    source: str  # llm | similarity | mock | fallback


@dataclass(frozen=True)
class UsageSnapshot:
    llm_calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def __sub__(self, other: "UsageSnapshot") -> "UsageSnapshot":
        return UsageSnapshot(
            self.llm_calls - other.llm_calls,
            self.prompt_tokens - other.prompt_tokens,
            self.completion_tokens - other.completion_tokens,
        )

    def to_dict(self) -> dict:
        return {
            "llm_calls": self.llm_calls,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "tokens": self.total_tokens,
        }


class UsageCounter:
    """Monotone, thread-safe call and token accounting."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._calls = 0
        self._prompt = 0
        self._completion = 0

    def record(self, calls: int = 1, prompt_tokens: int = 0, completion_tokens: int = 0) -> None:
        if min(calls, prompt_tokens, completion_tokens) < 0:
            raise ValueError("usage increments must be non-negative")
        with self._lock:
            self._calls += calls
            self._prompt += prompt_tokens
            self._completion += completion_tokens

    def snapshot(self) -> UsageSnapshot:
        with self._lock:
            return UsageSnapshot(self._calls, self._prompt, self._completion)


def approx_tokens(text: str) -> int:
    """Documented offline heuristic: ceil(characters / 4)."""
    return (len(text) + 3) // 4


PROMPT_TEMPLATE = """Role
You are an expert assistant for Knowledge Graph Question Answering (KGQA). Your core capability is to deeply understand natural language questions and the semantics of knowledge graph relations to find the most relevant reasoning paths.

Task
Your task is to act as a "Relation Retriever." Given a natural language question and a list of candidate relations, you must analyze the semantics of the question and each relation to select up to k relations that are most likely to lead to the correct answer.

Rules and Constraints
- Fidelity to Candidates: Your selection of relations MUST come strictly from the provided Candidate Relations list. Do not invent or modify relations.
- Quantity Limit: Return no more than k relations. If multiple relations are highly relevant, order them from most to least relevant. If there are fewer than k relevant relations, return only those.
- Output Format: Your response MUST be a list of strings, containing the names of the relations you have selected.

Example
- Input:
  - Question: "who was the president after jfk died"
  - Candidate Relations: {{"government.president", "government.president.successor", "location.location.containedby", "people.person.place_of_birth"}}
  - K: 2
- Output:
["government.president", "government.president.successor"]

Your Task
- Question: {question}
- Candidate Relations: {relations_list}
- K: {k}

Output:
[]
"""


def build_prompt(query: PlannerQuery) -> str:
    """Instantiate the relation-retriever template for one query.

    The candidate list is rendered brace-enclosed, comma-separated and
    double-quoted, in candidate order, with no escaping.
    """
    rendered = "{" + ", ".join(f'"{label}"' for _, label in query.candidates) + "}"
    return PROMPT_TEMPLATE.format(question=query.question, relations_list=rendered, k=query.k)


_QUOTED = re.compile(r'"((?:[^"\\]|\\.)*)"')
_BRACKETED = re.compile(r"\[[^\[\]]*\]", re.DOTALL)


def parse_response(raw: str, query: PlannerQuery) -> list[int]:
    """Map a model response onto candidate relation ids.

    Takes the first bracketed list of double-quoted strings in ``raw``, trims
    each string, keeps only exact candidate-label matches (fidelity rule),
    drops duplicates, and truncates to k, preserving response order. Total:
    returns an empty list instead of raising, which callers treat as a parse
    failure.
    """
    label_to_id = {label: cid for cid, label in query.candidates}
    for block in _BRACKETED.finditer(raw):
        names = _QUOTED.findall(block.group(0))
        if not names:
            continue
        ranked: list[int] = []
        for name in names:
            cid = label_to_id.get(name.strip())
            if cid is not None and cid not in ranked:
                ranked.append(cid)
            if len(ranked) >= query.k:
                break
        return ranked
    return []


def rank_by_similarity(
    encoder: CachedEmbedder, question: str, candidates: Sequence[tuple[int, str]]
) -> list[tuple[int, str]]:
    """Candidates sorted by cosine(question, label), ties kept in input order."""
    qv = encoder.embed_text(question)
    labels = [label for _, label in candidates]
    vectors = encoder.embed_texts(labels)
    sims = [_cosine(qv, v) for v in vectors]
    order = sorted(range(len(candidates)), key=lambda i: (-sims[i], i))
    return [candidates[i] for i in order]


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    denom = float(np.linalg.norm(a)) * float(np.linalg.norm(b))
    return float(np.dot(a, b)) / denom if denom else 0.0


class RelationPlanner:
    """Base class implementing the shared pruning contract."""

    kind = "base"

    def __init__(self, usage: UsageCounter | None = None) -> None:
        self.usage = usage if usage is not None else UsageCounter()

    def select_relations(self, query: PlannerQuery) -> PlannerChoice:
        query.validate()
        if len(query.candidates) <= query.k:
            return PlannerChoice(tuple(cid for cid, _ in query.candidates), self.kind)
        return self._rank(query)

    def _rank(self, query: PlannerQuery) -> PlannerChoice:
        raise NotImplementedError

    def _account(self, query: PlannerQuery, chosen_labels: Sequence[str]) -> None:
        prompt = build_prompt(query)
        completion = json.dumps(list(chosen_labels))
        self.usage.record(1, approx_tokens(prompt), approx_tokens(completion))


class SimilarityPlanner(RelationPlanner):
    """Ranks candidates by embedding cosine with the question."""

    kind = "similarity"

    def __init__(self, encoder: CachedEmbedder, usage: UsageCounter | None = None) -> None:
        super().__init__(usage)
        self.encoder = encoder

    def _rank(self, query: PlannerQuery) -> PlannerChoice:
        ranked = rank_by_similarity(self.encoder, query.question, query.candidates)[: query.k]
        self._account(query, [label for _, label in ranked])
        return PlannerChoice(tuple(cid for cid, _ in ranked), self.kind)


class MockPlanner(RelationPlanner):
    """Test oracle: puts relations lying on a planted gold path first.

    ``gold_paths`` maps a question to its gold relation-label sequences; the
    next gold hop is resolved by prefix-matching ``current_path``. With
    probability ``demote_prob`` (drawn from a per-query hash, so replays are
    stable) the gold relations are ranked last instead of first, which is the
    noise knob used by the fine-tuning ablation.
    """

    kind = "mock"

    def __init__(
        self,
        gold_paths: dict[str, list[list[str]]] | None = None,
        demote_prob: float = 0.0,
        seed: int = 0,
        usage: UsageCounter | None = None,
    ) -> None:
        super().__init__(usage)
        self.gold_paths = gold_paths or {}
        self.demote_prob = demote_prob
        self.seed = seed

    def _gold_next(self, query: PlannerQuery) -> set[str]:
        depth = len(query.current_path)
        nxt: set[str] = set()
        for seq in self.gold_paths.get(query.question, []):
            if len(seq) > depth and tuple(seq[:depth]) == query.current_path:
                nxt.add(seq[depth])
        return nxt

    def _demote(self, query: PlannerQuery) -> bool:
        if self.demote_prob <= 0.0:
            return False
        key = f"{self.seed}\x1f{query.question}\x1f" + "\x1f".join(query.current_path)
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return random.Random(int.from_bytes(digest, "big")).random() < self.demote_prob

    def _rank(self, query: PlannerQuery) -> PlannerChoice:
        gold = self._gold_next(query)
        demote = bool(gold) and self._demote(query)
        ordered = sorted(
            query.candidates,
            key=lambda c: ((c[1] in gold) if demote else (c[1] not in gold), c[1]),
        )[: query.k]
        self._account(query, [label for _, label in ordered])
        return PlannerChoice(tuple(cid for cid, _ in ordered), self.kind)


class ChatClient:
    """Minimal OpenAI-compatible chat-completion client with retries."""

    def __init__(
        self,
        model: str,
        base_url: str | None = None,
        api_key: str | None = None,
        temperature: float = 0.0,
        timeout: float = 60.0,
        retries: int = 3,
        backoff: float = 0.5,
        max_in_flight: int = 4,
    ) -> None:
        self.model = model
        self.base_url = (base_url or os.environ.get(API_BASE_ENV, "")).rstrip("/")
        if not self.base_url:
            raise PlannerError(f"no chat base URL (set {API_BASE_ENV})")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.temperature = temperature
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._gate = threading.Semaphore(max_in_flight)

    def complete(self, prompt: str) -> tuple[str, int | None, int | None]:
        """Returns (content, prompt_tokens, completion_tokens); tokens None when unreported."""
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                with self._gate:
                    resp = requests.post(
                        f"{self.base_url}/chat/completions",
                        json=payload,
                        headers=headers,
                        timeout=self.timeout,
                    )
                resp.raise_for_status()
                body = resp.json()
                content = body["choices"][0]["message"]["content"]
                usage = body.get("usage") or {}
                return (
                    content,
                    usage.get("prompt_tokens"),
                    usage.get("completion_tokens"),
                )
            except (requests.RequestException, KeyError, IndexError, TypeError, ValueError) as exc:
                last_error = exc
                if attempt < self.retries - 1:
                    time.sleep(self.backoff * (2**attempt))
        raise PlannerError(f"chat completion failed after {self.retries} attempts: {last_error}")


class LlmPlanner(RelationPlanner):
    """Prompts a chat model; falls back to similarity ranking when unusable.

    Candidate lists longer than ``MAX_PROMPT_CANDIDATES`` are cut to the most
    question-similar candidates (original order preserved) before prompting,
    to bound prompt size.
    """

    kind = "llm"

    def __init__(
        self,
        client: ChatClient,
        encoder: CachedEmbedder,
        fallback: bool = True,
        usage: UsageCounter | None = None,
        max_candidates: int = MAX_PROMPT_CANDIDATES,
    ) -> None:
        super().__init__(usage)
        self.client = client
        self.encoder = encoder
        self.fallback = fallback
        self.max_candidates = max_candidates

    def _rank(self, query: PlannerQuery) -> PlannerChoice:
        candidates = query.candidates
        if len(candidates) > self.max_candidates:
            keep = {
                cid
                for cid, _ in rank_by_similarity(self.encoder, query.question, candidates)[
                    : self.max_candidates
                ]
            }
            candidates = tuple(c for c in candidates if c[0] in keep)
        pruned = PlannerQuery(query.question, query.current_path, candidates, query.k)
        prompt = build_prompt(pruned)
        try:
            content, p_tokens, c_tokens = self.client.complete(prompt)
        except PlannerError:
            if not self.fallback:
                raise
            return self._fallback_choice(query)
        self.usage.record(
            1,
            p_tokens if p_tokens is not None else approx_tokens(prompt),
            c_tokens if c_tokens is not None else approx_tokens(content),
        )
        ranked = parse_response(content, pruned)
        if not ranked:
            if not self.fallback:
                raise PlannerError("unusable planner response and fallback disabled")
            return self._fallback_choice(query, count_call=False)
        return PlannerChoice(tuple(ranked), self.kind)

    def _fallback_choice(self, query: PlannerQuery, count_call: bool = True) -> PlannerChoice:
        ranked = rank_by_similarity(self.encoder, query.question, query.candidates)[: query.k]
        if count_call:
            self._account(query, [label for _, label in ranked])
        return PlannerChoice(tuple(cid for cid, _ in ranked), "fallback")
