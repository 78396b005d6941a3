"""Adding documents (or bare dataset entries) to an existing graph."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from ..clients import ModelClient
from ..embed import EmbeddingProvider, VectorIndex, embed_dataset, embed_datasets, embed_tasks
from ..extract import ExtractionRecord, ExtractionReport, extract_pipeline
from ..ingest import ArtifactCache, NormalizedDocument
from .blocking import NeighborTable
from .build import add_records
from .linking import LinkingConfig, link_tasks
from .model import DatasetNode, KnowledgeGraph, Mention, content_id
from .resolution import ResolutionState, ResolutionStats, resolve_datasets

logger = logging.getLogger(__name__)


@dataclass
class Indices:
    task: VectorIndex
    dataset: VectorIndex
    task_neighbors: NeighborTable | None = None

    @classmethod
    def empty(cls, dim: int) -> "Indices":
        return cls(VectorIndex("task", dim), VectorIndex("dataset", dim))


@dataclass
class Clients:
    extractor: ModelClient
    judge: ModelClient
    embedder: EmbeddingProvider
    reranker: ModelClient | None = None

    def model_calls(self) -> int:
        seen, total = set(), 0
        for c in (self.extractor, self.judge, self.reranker):
            if c is not None and id(c) not in seen:
                seen.add(id(c))
                total += c.counter.total
        return total


@dataclass
class IntegrationStats:
    new_documents: int = 0
    records: int = 0
    new_tasks: int = 0
    new_mentions: int = 0
    task_edges_added: int = 0
    resolution: ResolutionStats = field(default_factory=ResolutionStats)
    extraction: ExtractionReport = field(default_factory=ExtractionReport)

    def as_dict(self) -> dict[str, object]:
        return {
            "new_documents": self.new_documents,
            "records": self.records,
            "new_tasks": self.new_tasks,
            "new_mentions": self.new_mentions,
            "task_edges_added": self.task_edges_added,
            "merges": self.resolution.node_merges,
            "judge_calls": self.resolution.judge_calls,
            "judge_cache_hits": self.resolution.judge_cache_hits,
            "extraction_cache_hits": self.extraction.cache_hits,
            "filtered_out": self.extraction.filtered_out,
        }


def integrate_records(
    graph: KnowledgeGraph,
    state: ResolutionState,
    indices: Indices,
    docs: Iterable[NormalizedDocument],
    records: Iterable[ExtractionRecord],
    clients: Clients,
    config: LinkingConfig,
) -> IntegrationStats:
    """Nodes and edges, vectors, task linking and dataset resolution for a
    batch of new documents. Linking and resolution only look at pairs that
    involve something new, so earlier decisions are never revisited."""
    docs, records = list(docs), list(records)
    stats = IntegrationStats(new_documents=len(docs), records=len(records))
    added = add_records(graph, records, docs)
    stats.new_tasks, stats.new_mentions = len(added.tasks), len(added.mentions)

    if added.tasks:
        vecs = embed_tasks([graph.tasks[t].description for t in added.tasks], clients.embedder)
        indices.task.add_many(added.tasks, vecs)
    if added.mentions:
        items = [(graph.mentions[m].name, graph.mentions[m].description) for m in added.mentions]
        indices.dataset.add_many(added.mentions, embed_datasets(items, clients.embedder))

    if len(indices.task):
        stats.task_edges_added, indices.task_neighbors = link_tasks(
            graph, indices.task, config, new_task_ids=added.tasks, table=indices.task_neighbors
        )
    if len(indices.dataset):
        stats.resolution = resolve_datasets(
            graph, indices.dataset, state, clients.judge, config, new_mention_ids=added.mentions
        )
    return stats


def extract_documents(
    docs: Iterable[NormalizedDocument],
    client: ModelClient,
    cache: ArtifactCache | None,
    *,
    budget: int,
    report: ExtractionReport,
) -> list[ExtractionRecord]:
    records: list[ExtractionRecord] = []
    for doc in docs:
        records.extend(extract_pipeline(doc, client, cache, budget=budget, report=report))
    return records


def incremental_update(
    graph: KnowledgeGraph,
    state: ResolutionState,
    indices: Indices,
    new_docs: Iterable[NormalizedDocument],
    clients: Clients,
    config: LinkingConfig = LinkingConfig(),
    *,
    cache: ArtifactCache | None = None,
    budget: int = 24_000,
) -> IntegrationStats:
    """Extract, embed and integrate documents already filtered by ``diff_corpus``."""
    new_docs = sorted(new_docs, key=lambda d: d.doc_id)
    report = ExtractionReport()
    records = extract_documents(new_docs, clients.extractor, cache, budget=budget, report=report)
    stats = integrate_records(graph, state, indices, new_docs, records, clients, config)
    stats.extraction = report
    return stats


@dataclass
class ExternalIngestResult:
    canonical_id: str
    anchor_id: str | None
    linked_tasks: int


def ingest_external_dataset(
    graph: KnowledgeGraph,
    indices: Indices,
    name: str,
    description: str,
    provider: EmbeddingProvider,
) -> ExternalIngestResult:
    """Add a dataset that has no task description of its own, borrowing the
    tasks of the most similar existing dataset (smallest id on ties)."""
    if not name.strip():
        raise ValueError("dataset name must be non-empty")
    name, description = " ".join(name.split()), " ".join(description.split())
    mid = content_id("m", "<external>", name, description)
    cid = "d-" + mid[2:]
    if mid in graph.mentions:
        return ExternalIngestResult(graph.mention_of[mid], None, 0)
    vec = embed_dataset(name, description, provider)

    anchor: str | None = None
    if graph.datasets and len(indices.dataset):
        scores = indices.dataset.scores(vec)
        best = scores.max()
        anchor = min(graph.mention_of[indices.dataset.ids[i]] for i in np.flatnonzero(scores == best))
    else:
        logger.warning("no existing datasets to anchor %r; added without task links", name)

    graph.mentions[mid] = Mention(mid, name, description, None)
    graph.datasets[cid] = DatasetNode(cid, name, {name}, description, {mid}, external=True)
    graph.mention_of[mid] = cid
    graph.dataset_docs[cid] = set()
    graph.dataset_tasks[cid] = set(graph.dataset_tasks.get(anchor, ())) if anchor else set()
    indices.dataset.add(mid, vec)
    return ExternalIngestResult(cid, anchor, len(graph.dataset_tasks[cid]))
