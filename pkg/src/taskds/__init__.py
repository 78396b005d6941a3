"""Task-oriented dataset search over a task-dataset knowledge graph."""

from .config import SystemConfig, load_config
from .embed import EmbeddingVector, HashingEmbedder, VectorIndex, cosine
from .evalbench import EvalReport, GoldAnswer, evaluate
from .extract import ExtractionRecord, extract_pipeline
from .ingest import Manifest, NormalizedDocument, normalize_document
from .kgraph import KnowledgeGraph, LinkingConfig
from .pipeline import cmd_build, cmd_update, open_engine
from .query import QueryConfig, RankedResult, SearchEngine, expand_ppr, search

__version__ = "0.1.0"

__all__ = [
    "EmbeddingVector",
    "EvalReport",
    "ExtractionRecord",
    "GoldAnswer",
    "HashingEmbedder",
    "KnowledgeGraph",
    "LinkingConfig",
    "Manifest",
    "NormalizedDocument",
    "QueryConfig",
    "RankedResult",
    "SearchEngine",
    "SystemConfig",
    "VectorIndex",
    "cmd_build",
    "cmd_update",
    "cosine",
    "evaluate",
    "expand_ppr",
    "extract_pipeline",
    "load_config",
    "normalize_document",
    "open_engine",
    "search",
]
