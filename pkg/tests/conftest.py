import numpy as np
import pytest

from damr.embed import CachedEmbedder, StubEmbedder
from damr.kg import KnowledgeGraph
from damr.scorer import ScorerConfig, init_params


@pytest.fixture
def small_config() -> ScorerConfig:
    return ScorerConfig(embed_dim=24, model_dim=16, num_layers=2, num_heads=4, max_path_len=5)


@pytest.fixture
def small_params(small_config):
    return init_params(small_config, seed=7)


@pytest.fixture
def encoder() -> CachedEmbedder:
    return CachedEmbedder(StubEmbedder(dim=24, seed=0))


@pytest.fixture
def chain_kg() -> KnowledgeGraph:
    """A -r1-> B -r2-> C -r3-> D."""
    return KnowledgeGraph.from_labeled_triples(
        [("A", "r1", "B"), ("B", "r2", "C"), ("C", "r3", "D")]
    )


@pytest.fixture
def branch_kg() -> KnowledgeGraph:
    """Topic A with gold chain A->B->C (answer C) and a sibling branch B->D."""
    return KnowledgeGraph.from_labeled_triples(
        [("A", "r1", "B"), ("B", "r2", "C"), ("B", "r9", "D"), ("D", "r5", "E")]
    )


def random_path(rng: np.random.Generator, dim: int, length: int) -> list[np.ndarray]:
    return [rng.normal(size=dim) for _ in range(length)]
