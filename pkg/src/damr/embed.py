"""Text embedding providers (remote endpoint or deterministic stub) with a cache.

The remote protocol is an OpenAI-style ``POST <base>/embeddings`` with body
``{"model": m, "input": [texts...]}``; the bearer token comes from
``DAMR_API_KEY`` and the base URL from ``DAMR_API_BASE``. The stub provider
derives each vector from a hash of (seed, text), so it is reproducible across
processes and platforms.
"""
from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from pathlib import Path
from typing import Sequence

import numpy as np
import requests

DEFAULT_DIM = 1024

API_BASE_ENV = "DAMR_API_BASE"
API_KEY_ENV = "DAMR_API_KEY"


class EmbeddingError(RuntimeError):
    """Transport-level failure talking to the embedding endpoint."""


class ProtocolError(EmbeddingError):
    """The endpoint answered, but with a malformed or wrong-dimension payload."""


class CacheError(ValueError):
    """An embedding cache file could not be parsed."""


def stub_embedding(seed: int, text: str, dim: int) -> np.ndarray:
    """Deterministic unit-norm vector derived from hash(seed, text).

    Entries are drawn uniform in [-1, 1] from a generator seeded by the hash,
    then scaled to unit Euclidean norm.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    digest = hashlib.sha256(f"{seed}\x1f{text}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "big"))
    values = rng.uniform(-1.0, 1.0, dim)
    norm = float(np.linalg.norm(values))
    if norm == 0.0:  # unreachable in practice for dim >= 1
        values[0] = 1.0
        norm = 1.0
    return values / norm


class StubEmbedder:
    """Offline provider: hash-seeded unit vectors, stable across runs."""

    kind = "stub"

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0) -> None:
        self.dim = dim
        self.seed = seed

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        for text in texts:
            if not text:
                raise ValueError("text must be non-empty")
        return [stub_embedding(self.seed, text, self.dim) for text in texts]


class RemoteEmbedder:
    """Provider backed by an OpenAI-compatible ``/embeddings`` endpoint."""

    kind = "remote"

    def __init__(
        self,
        model: str,
        dim: int = DEFAULT_DIM,
        base_url: str | None = None,
        api_key: str | None = None,
        timeout: float = 60.0,
        retries: int = 3,
        backoff: float = 0.5,
        max_in_flight: int = 4,
    ) -> None:
        self.model = model
        self.dim = dim
        self.base_url = (base_url or os.environ.get(API_BASE_ENV, "")).rstrip("/")
        if not self.base_url:
            raise EmbeddingError(f"no embedding base URL (set {API_BASE_ENV})")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._gate = threading.Semaphore(max_in_flight)

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        for text in texts:
            if not text:
                raise ValueError("text must be non-empty")
        if not texts:
            return []
        payload = {"model": self.model, "input": list(texts)}
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                with self._gate:
                    resp = requests.post(
                        f"{self.base_url}/embeddings",
                        json=payload,
                        headers=headers,
                        timeout=self.timeout,
                    )
                resp.raise_for_status()
                return self._parse(resp.json(), len(texts))
            except ProtocolError:
                raise
            except (requests.RequestException, ValueError) as exc:
                last_error = exc
                if attempt < self.retries - 1:
                    time.sleep(self.backoff * (2**attempt))
        raise EmbeddingError(f"embedding request failed after {self.retries} attempts: {last_error}")

    def _parse(self, body: dict, expected: int) -> list[np.ndarray]:
        try:
            rows = body["data"]
            vectors = [np.asarray(row["embedding"], dtype=np.float64) for row in rows]
        except (KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed embeddings response: {exc}") from exc
        if len(vectors) != expected:
            raise ProtocolError(f"expected {expected} embeddings, got {len(vectors)}")
        for vec in vectors:
            if vec.shape != (self.dim,):
                raise ProtocolError(f"embedding has dimension {vec.shape[0]}, declared {self.dim}")
        return vectors


class EmbeddingCache:
    """Thread-safe text -> vector map with JSONL persistence.

    Stored vectors are returned read-only and round-trip bit-exactly through
    ``save``/``load`` (one ``{"text": ..., "values": [...]}`` object per line).
    """

    def __init__(self) -> None:
        self._data: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def get(self, text: str) -> np.ndarray | None:
        with self._lock:
            return self._data.get(text)

    def put(self, text: str, values: np.ndarray) -> None:
        frozen = np.asarray(values, dtype=np.float64)
        frozen.flags.writeable = False
        with self._lock:
            self._data[text] = frozen

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, text: str) -> bool:
        return text in self._data

    def save(self, path: str | Path) -> None:
        with self._lock:
            items = list(self._data.items())
        with open(path, "w", encoding="utf-8") as fh:
            for text, values in items:
                fh.write(json.dumps({"text": text, "values": values.tolist()}) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingCache":
        cache = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    text = record["text"]
                    values = record["values"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise CacheError(f"{path}: record at line {lineno} is corrupt: {exc}") from exc
                if not isinstance(text, str) or not isinstance(values, list):
                    raise CacheError(f"{path}: record at line {lineno} has wrong field types")
                cache.put(text, np.asarray(values, dtype=np.float64))
        return cache


class CachedEmbedder:
    """An embedding provider behind a cache; the lookup point used downstream."""

    def __init__(self, provider, cache: EmbeddingCache | None = None) -> None:
        self.provider = provider
        self.cache = cache if cache is not None else EmbeddingCache()

    @property
    def dim(self) -> int:
        return self.provider.dim

    def embed_text(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("text must be non-empty")
        hit = self.cache.get(text)
        if hit is not None:
            if hit.shape != (self.dim,):
                raise ProtocolError(
                    f"cached embedding for {text!r} has dimension {hit.shape[0]}, "
                    f"provider declares {self.dim}"
                )
            return hit
        vec = self.provider.embed_many([text])[0]
        self.cache.put(text, vec)
        return self.cache.get(text)

    def embed_texts(self, texts: Sequence[str]) -> list[np.ndarray]:
        missing = [t for t in dict.fromkeys(texts) if t not in self.cache]
        if missing:
            for text, vec in zip(missing, self.provider.embed_many(missing)):
                self.cache.put(text, vec)
        return [self.embed_text(t) for t in texts]
