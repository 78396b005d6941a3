"""Task-dataset knowledge graph: construction, linking, resolution, updates."""

from .blocking import NeighborTable, candidate_pairs
from .build import add_records, build_graph, mention_id_for, task_id_for
from .incremental import (
    Clients,
    ExternalIngestResult,
    Indices,
    IntegrationStats,
    incremental_update,
    ingest_external_dataset,
    integrate_records,
)
from .linking import LinkingConfig, keyword_overlap, link_tasks
from .model import DatasetNode, DocumentNode, KnowledgeGraph, Mention, TaskNode, canonical_form
from .resolution import (
    DisjointSet,
    NormalizedTitle,
    ResolutionState,
    ResolutionStats,
    judge_pair_key,
    merge_dataset_nodes,
    normalize_title,
    resolve_datasets,
    title_keys,
)

__all__ = [
    "Clients",
    "DatasetNode",
    "DisjointSet",
    "DocumentNode",
    "ExternalIngestResult",
    "Indices",
    "IntegrationStats",
    "KnowledgeGraph",
    "LinkingConfig",
    "Mention",
    "NeighborTable",
    "NormalizedTitle",
    "ResolutionState",
    "ResolutionStats",
    "TaskNode",
    "add_records",
    "build_graph",
    "candidate_pairs",
    "canonical_form",
    "incremental_update",
    "ingest_external_dataset",
    "integrate_records",
    "judge_pair_key",
    "keyword_overlap",
    "link_tasks",
    "mention_id_for",
    "merge_dataset_nodes",
    "normalize_title",
    "resolve_datasets",
    "task_id_for",
    "title_keys",
]
