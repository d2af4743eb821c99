"""damr: knowledge-graph question answering with planner-guided tree search
and a trainable, online-refined path scorer."""
from .data import QAItem, f1, hits_at_1, load_dataset, save_dataset
from .embed import CachedEmbedder, EmbeddingCache, RemoteEmbedder, StubEmbedder
from .kg import EntityPath, KnowledgeGraph, load_kg
from .planner import (
    LlmPlanner,
    MockPlanner,
    PlannerChoice,
    PlannerQuery,
    SimilarityPlanner,
    UsageCounter,
)
from .runner import EvalReport, evaluate
from .scorer import PathScorer, ScorerConfig, TrainTriplet, mine_triplets
from .search import SearchConfig, SearchResult, search
from .synth import SynthSpec, generate_synthetic, oracle_paths

__version__ = "0.1.0"

__all__ = [
    "CachedEmbedder",
    "EmbeddingCache",
    "EntityPath",
    "EvalReport",
    "KnowledgeGraph",
    "LlmPlanner",
    "MockPlanner",
    "PathScorer",
    "PlannerChoice",
    "PlannerQuery",
    "QAItem",
    "RemoteEmbedder",
    "ScorerConfig",
    "SearchConfig",
    "SearchResult",
    "SimilarityPlanner",
    "StubEmbedder",
    "SynthSpec",
    "TrainTriplet",
    "UsageCounter",
    "evaluate",
    "f1",
    "generate_synthetic",
    "hits_at_1",
    "load_dataset",
    "load_kg",
    "mine_triplets",
    "oracle_paths",
    "save_dataset",
    "search",
]
