"""QA dataset loading and answer metrics.

Datasets are JSON lines, one object per question with fields ``id``,
``question``, ``topic_entities`` (list of entity labels) and ``answers``
(list of entity labels).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence


class DatasetError(ValueError):
    """A dataset file is malformed; the message names the offending line."""


@dataclass(frozen=True)
class QAItem:
    id: str
    question: str
    topic_entities: tuple[str, ...]
    answers: frozenset[str]

    def __post_init__(self) -> None:
        if not self.topic_entities:
            raise ValueError("topic_entities must be non-empty")
        if not self.answers:
            raise ValueError("answers must be non-empty")


REQUIRED_FIELDS = ("id", "question", "topic_entities", "answers")


def load_dataset(path: str | Path) -> list[QAItem]:
    items: list[QAItem] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
            for fieldname in REQUIRED_FIELDS:
                if fieldname not in record:
                    raise DatasetError(f"{path}: line {lineno}: missing field {fieldname!r}")
            try:
                items.append(
                    QAItem(
                        id=str(record["id"]),
                        question=str(record["question"]),
                        topic_entities=tuple(record["topic_entities"]),
                        answers=frozenset(record["answers"]),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise DatasetError(f"{path}: line {lineno}: {exc}") from exc
    return items


def save_dataset(items: Iterable[QAItem], path: str | Path) -> None:
    """Write items as JSON lines with sorted keys (deterministic bytes)."""
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(
                json.dumps(
                    {
                        "id": item.id,
                        "question": item.question,
                        "topic_entities": list(item.topic_entities),
                        "answers": sorted(item.answers),
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def hits_at_1(ranked: Sequence[str], gold: Iterable[str]) -> int:
    """1 iff the first-ranked prediction is a gold answer; empty predictions score 0."""
    if not ranked:
        return 0
    return int(ranked[0] in set(gold))


def f1(predicted: Iterable[str], gold: Iterable[str]) -> float:
    """Set F1 of predicted vs gold answers; an empty prediction scores 0."""
    predicted = set(predicted)
    gold = set(gold)
    if not gold:
        raise ValueError("gold answer set must be non-empty")
    if not predicted:
        return 0.0
    overlap = len(predicted & gold)
    if overlap == 0:
        return 0.0
    precision = overlap / len(predicted)
    recall = overlap / len(gold)
    return 2.0 * precision * recall / (precision + recall)
