"""Build, update and open stores from a SystemConfig."""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import yaml

from ._io import atomic_write_json, read_json
from .clients import ModelClient, OpenAIChatClient, StubModelClient
from .config import ClientSettings, SystemConfig
from .embed import EmbeddingProvider, HashingEmbedder, HTTPEmbeddingProvider
from .errors import ConfigError, EmptyCorpus, SnapshotError
from .extract import ExtractionRecord, ExtractionReport, extract_pipeline
from .ingest import ArtifactCache, Manifest, NormalizedDocument, diff_corpus, load_corpus
from .kgraph import Clients, Indices, IntegrationStats, KnowledgeGraph, ResolutionState, integrate_records
from .query import SearchEngine
from .store import StoreSnapshot, load_snapshot, save_snapshot, store_lock

logger = logging.getLogger(__name__)

REPRODUCIBLE_EPOCH = 0


def _model_client(kind: str, settings: ClientSettings) -> ModelClient:
    if kind == "openai":
        return OpenAIChatClient(settings.llm_base_url, settings.llm_model, api_key_env=settings.api_key_env)
    if settings.stub_rules:
        return StubModelClient.from_directory(settings.stub_rules, latency=settings.stub_latency)
    return StubModelClient(latency=settings.stub_latency)


def make_embedder(settings: ClientSettings) -> EmbeddingProvider:
    if settings.embedder == "openai":
        return HTTPEmbeddingProvider(
            settings.embed_base_url, settings.embed_model, settings.embedding_dim, api_key_env=settings.api_key_env
        )
    return HashingEmbedder(settings.embedding_dim, settings.seed)


def make_clients(settings: ClientSettings) -> Clients:
    return Clients(
        extractor=_model_client(settings.extractor, settings),
        judge=_model_client(settings.judge, settings),
        embedder=make_embedder(settings),
        reranker=_model_client(settings.reranker, settings),
    )


def processed_at(config: SystemConfig) -> datetime:
    """Wall clock, unless the build must be reproducible."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        return datetime.fromtimestamp(int(epoch), timezone.utc)
    if config.is_reproducible:
        return datetime.fromtimestamp(REPRODUCIBLE_EPOCH, timezone.utc)
    return datetime.now(timezone.utc)


def load_alias_file(path: str | None) -> dict[str, list[str]]:
    if not path:
        return {}
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict) or not all(isinstance(v, list) for v in data.values()):
        raise ConfigError(f"{path}: expected a mapping of canonical name to a list of aliases")
    return {str(k): [str(a) for a in v] for k, v in data.items()}


# -- shared judge verdicts ----------------------------------------------------


def _verdict_path(cache_root: str, judge: ModelClient) -> Path:
    digest = hashlib.sha256(judge.identity.encode("utf-8")).hexdigest()[:16]
    return Path(cache_root) / "verdicts" / f"{digest}.json"


def _load_verdicts(cache_root: str, judge: ModelClient) -> dict[str, bool]:
    path = _verdict_path(cache_root, judge)
    try:
        data = read_json(path)
    except FileNotFoundError:
        return {}
    except ValueError:
        logger.warning("ignoring unreadable verdict cache %s", path)
        return {}
    return {k: bool(v) for k, v in data.items()} if isinstance(data, dict) else {}


def _store_verdicts(cache_root: str, judge: ModelClient, state: ResolutionState) -> None:
    merged = {**state.shared_verdicts, **state.judge_cache}
    if merged:
        atomic_write_json(_verdict_path(cache_root, judge), merged, indent=None)


# -- commands -------------------------------------------------------------


@dataclass
class RunResult:
    snapshot: StoreSnapshot
    stats: IntegrationStats
    model_calls: int
    seconds: float
    rejected: list[tuple[str, str]] = field(default_factory=list)

    def summary(self) -> dict[str, Any]:
        g = self.snapshot.graph.stats()
        return {
            "snapshot": self.snapshot.snapshot_id,
            "documents": g["documents"],
            "new_documents": self.stats.new_documents,
            "records": self.stats.records,
            "nodes": {k: g[k] for k in ("documents", "datasets", "tasks", "mentions")},
            "edges": {k: g[k] for k in ("doc_dataset_edges", "dataset_task_edges", "task_task_edges")},
            "merges": self.stats.resolution.node_merges,
            "model_calls": self.model_calls,
            "judge_calls": self.stats.resolution.judge_calls,
            "cache_hits": self.stats.extraction.cache_hits + self.stats.resolution.judge_cache_hits,
            "rejected": len(self.rejected),
            "seconds": round(self.seconds, 4),
        }


def _meta(config: SystemConfig, clients: Clients, graph: KnowledgeGraph) -> dict[str, Any]:
    return {
        "dim": clients.embedder.dim,
        "embedder": clients.embedder.identity,
        "extractor": clients.extractor.identity,
        "judge": clients.judge.identity,
        "linking": dataclasses.asdict(config.linking),
        "stats": graph.stats(),
    }


def _integrate(
    config: SystemConfig,
    clients: Clients,
    graph: KnowledgeGraph,
    state: ResolutionState,
    indices: Indices,
    manifest: Manifest,
    docs: list[NormalizedDocument],
    cache: ArtifactCache,
) -> tuple[IntegrationStats, list[ExtractionRecord]]:
    docs = sorted(docs, key=lambda d: d.doc_id)
    report = ExtractionReport()
    records = []
    for doc in docs:
        records.extend(extract_pipeline(doc, clients.extractor, cache, budget=config.char_budget, report=report))
    state.shared_verdicts = _load_verdicts(config.cache, clients.judge)
    stats = integrate_records(graph, state, indices, docs, records, clients, config.linking)
    stats.extraction = report
    when = processed_at(config)
    for doc in docs:
        manifest.record(doc, when)
    _store_verdicts(config.cache, clients.judge, state)
    return stats, records


def cmd_build(config: SystemConfig, clients: Clients | None = None) -> RunResult:
    """Build a fresh snapshot from the whole corpus and make it current."""
    start = time.perf_counter()
    clients = clients or make_clients(config.clients)
    cache = ArtifactCache(config.cache)
    calls_before = clients.model_calls()
    with store_lock(config.store):
        docs, rejected = load_corpus(config.corpus, cache)
        if not docs:
            raise EmptyCorpus(f"no usable documents under {', '.join(config.corpus) or '(no corpus paths)'}")
        graph, state = KnowledgeGraph(), ResolutionState()
        state.seed_aliases(load_alias_file(config.alias_file))
        indices, manifest = Indices.empty(clients.embedder.dim), Manifest()
        stats, records = _integrate(config, clients, graph, state, indices, manifest, docs, cache)
        snap = StoreSnapshot(graph, indices, state, manifest, records, _meta(config, clients, graph))
        snap.check_consistency()
        save_snapshot(config.store, snap)
    return RunResult(snap, stats, clients.model_calls() - calls_before, time.perf_counter() - start, rejected)


def _rename_reused(doc: NormalizedDocument, graph: KnowledgeGraph) -> NormalizedDocument:
    if doc.doc_id not in graph.documents:
        return doc
    renamed = f"{doc.doc_id}@{doc.fingerprint[:8]}"
    logger.info("document id %s already present with other content; adding as %s", doc.doc_id, renamed)
    return dataclasses.replace(doc, doc_id=renamed)


def cmd_update(config: SystemConfig, clients: Clients | None = None) -> RunResult:
    """Integrate documents whose fingerprints are not in the current manifest."""
    start = time.perf_counter()
    clients = clients or make_clients(config.clients)
    cache = ArtifactCache(config.cache)
    calls_before = clients.model_calls()
    with store_lock(config.store):
        snap = load_snapshot(config.store)
        check_embedder(snap, clients.embedder)
        docs, rejected = load_corpus(config.corpus, cache)
        new_docs = [_rename_reused(d, snap.graph) for d in diff_corpus(snap.manifest, docs)]
        stats, records = _integrate(
            config, clients, snap.graph, snap.state, snap.indices, snap.manifest, new_docs, cache
        )
        snap.records = [*snap.records, *records]
        snap.meta = _meta(config, clients, snap.graph)
        snap.check_consistency()
        save_snapshot(config.store, snap)
    return RunResult(snap, stats, clients.model_calls() - calls_before, time.perf_counter() - start, rejected)


def check_embedder(snap: StoreSnapshot, provider: EmbeddingProvider) -> None:
    want = snap.meta.get("embedder")
    if want != provider.identity:
        raise SnapshotError(
            f"snapshot was embedded with {want!r} but the configured embedder is {provider.identity!r}"
        )


def open_engine(config: SystemConfig, provider: EmbeddingProvider | None = None) -> tuple[StoreSnapshot, SearchEngine]:
    snap = load_snapshot(config.store)
    provider = provider or make_embedder(config.clients)
    check_embedder(snap, provider)
    return snap, SearchEngine(snap.graph, snap.indices.task, provider)
