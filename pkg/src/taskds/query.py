"""Online search: seed tasks, personalized PageRank over the task-similarity
graph, max-aggregation onto datasets, optional model rerank."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Collection, Iterator, Mapping

import numpy as np
import scipy.sparse as sp

from . import prompts
from .clients import ModelClient
from .embed import EmbeddingProvider, VectorIndex, embed_task
from .errors import ConfigError, EmptyIndex, ModelUnavailable
from .kgraph.model import KnowledgeGraph

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QueryConfig:
    seed_k: int = 2
    alpha: float = 0.85
    ppr_tolerance: float = 1e-8
    ppr_max_iterations: int = 100
    task_cutoff: int = 200
    k_rerank: int = 10
    rerank_enabled: bool = False
    seed_weighting: str = "uniform"  # or "cosine"

    def __post_init__(self) -> None:
        if self.seed_k < 1:
            raise ConfigError("seed_k must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must be in (0, 1)")
        if self.ppr_tolerance <= 0 or self.ppr_max_iterations < 1:
            raise ConfigError("ppr_tolerance must be > 0 and ppr_max_iterations >= 1")
        if self.task_cutoff < 1 or self.k_rerank < 1 or self.k_rerank > self.task_cutoff:
            raise ConfigError("need 1 <= k_rerank <= task_cutoff")
        if self.seed_weighting not in {"uniform", "cosine"}:
            raise ConfigError("seed_weighting must be 'uniform' or 'cosine'")


@dataclass(frozen=True)
class SeedSet:
    entries: tuple[tuple[str, float], ...]

    @property
    def task_ids(self) -> list[str]:
        return [t for t, _ in self.entries]


class TaskScores(Mapping[str, float]):
    """PPR relevance per task id, backed by an array in task-matrix order."""

    def __init__(self, ids: list[str], array: np.ndarray, *, converged: bool, iterations: int) -> None:
        self.ids = ids
        self.array = array
        self.converged = converged
        self.iterations = iterations
        self._pos: dict[str, int] | None = None

    def __getitem__(self, task_id: str) -> float:
        if self._pos is None:
            self._pos = {t: i for i, t in enumerate(self.ids)}
        return float(self.array[self._pos[task_id]])

    def __iter__(self) -> Iterator[str]:
        return iter(self.ids)

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class RankedDataset:
    canonical_id: str
    canonical_name: str
    score: float
    supporting_tasks: tuple[tuple[str, float], ...]
    source_documents: tuple[str, ...]


@dataclass(frozen=True)
class RankedResult:
    entries: tuple[RankedDataset, ...]
    query: str = ""
    seeds: SeedSet = SeedSet(())
    rerank_status: str = "disabled"
    ppr_converged: bool = True

    def __len__(self) -> int:
        return len(self.entries)

    def names(self) -> list[str]:
        return [e.canonical_name for e in self.entries]


# ---------------------------------------------------------------------------


class TaskGraphMatrix:
    """Row-normalized task-task transition matrix, transposed, in the row
    order of ``ids``."""

    def __init__(self, ids: list[str], edges: Mapping[tuple[str, str], float]) -> None:
        self.ids = list(ids)
        self.pos = {t: i for i, t in enumerate(self.ids)}
        n = len(self.ids)
        rows, cols, vals = [], [], []
        for (a, b), w in edges.items():
            i, j = self.pos[a], self.pos[b]
            rows += [i, j]
            cols += [j, i]
            vals += [w, w]
        self.adjacency = sp.csr_matrix(
            (np.asarray(vals, dtype=np.float64), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
            shape=(n, n),
        )
        self._compile(self.adjacency)

    def _compile(self, adjacency: sp.csr_matrix) -> None:
        out_weight = np.asarray(adjacency.sum(axis=1)).ravel()
        self.dangling = out_weight <= 0
        inv = np.where(self.dangling, 0.0, 1.0 / np.where(self.dangling, 1.0, out_weight))
        self.transition_t = (sp.diags(inv) @ adjacency).T.tocsr()

    @classmethod
    def from_graph(cls, graph: KnowledgeGraph, order: list[str] | None = None) -> "TaskGraphMatrix":
        return cls(order if order is not None else sorted(graph.tasks), graph.task_task)

    def masked(self, keep: np.ndarray) -> "TaskGraphMatrix":
        """Copy with every edge touching a dropped task removed."""
        clone = object.__new__(TaskGraphMatrix)
        clone.ids, clone.pos = self.ids, self.pos
        d = sp.diags(keep.astype(np.float64))
        clone.adjacency = (d @ self.adjacency @ d).tocsr()
        clone.adjacency.eliminate_zeros()
        clone._compile(clone.adjacency)
        return clone


def identify_seeds(
    query_text: str,
    provider: EmbeddingProvider,
    task_index: VectorIndex,
    seed_k: int = 2,
    *,
    exclude: np.ndarray | None = None,
) -> SeedSet:
    if not len(task_index):
        raise EmptyIndex("task index is empty")
    hits = task_index.search(embed_task(query_text, provider), seed_k, exclude=exclude)
    return SeedSet(tuple(hits))


def personalization(matrix: TaskGraphMatrix, seeds: SeedSet, weighting: str = "uniform") -> np.ndarray:
    v = np.zeros(len(matrix.ids))
    for task_id, score in seeds.entries:
        v[matrix.pos[task_id]] = max(score, 0.0) if weighting == "cosine" else 1.0
    if v.sum() <= 0:
        for task_id, _ in seeds.entries:
            v[matrix.pos[task_id]] = 1.0
    return v / v.sum()


def expand_ppr(
    graph: KnowledgeGraph | TaskGraphMatrix,
    seeds: SeedSet,
    config: QueryConfig = QueryConfig(),
    *,
    excluded: np.ndarray | None = None,
) -> TaskScores:
    """Power iteration for ``p = a * M^T p + (1 - a) * v``; dangling mass
    returns to ``v``. ``excluded`` is a boolean mask of tasks to cut out of
    the graph (they end with score 0)."""
    matrix = graph if isinstance(graph, TaskGraphMatrix) else TaskGraphMatrix.from_graph(graph)
    if not seeds.entries:
        raise ValueError("PPR needs at least one seed task")
    if excluded is not None and excluded.any():
        matrix = matrix.masked(~excluded)
    v = personalization(matrix, seeds, config.seed_weighting)
    alpha = config.alpha
    p = v.copy()
    converged, it = False, 0
    for it in range(1, config.ppr_max_iterations + 1):
        nxt = alpha * (matrix.transition_t @ p) + (alpha * p[matrix.dangling].sum() + (1.0 - alpha)) * v
        delta = np.abs(nxt - p).sum()
        p = nxt
        if delta < config.ppr_tolerance:
            converged = True
            break
    if not converged:
        logger.warning("PPR stopped after %d iterations without reaching tolerance", it)
    return TaskScores(matrix.ids, p, converged=converged, iterations=it)


def aggregate_datasets(
    graph: KnowledgeGraph,
    scores: Mapping[str, float],
    config: QueryConfig = QueryConfig(),
    *,
    task_datasets: Mapping[str, Collection[str]] | None = None,
    excluded_docs: Collection[str] = (),
) -> RankedResult:
    """Score(d) = max score over the considered tasks linked to d.

    Considered tasks are the ``task_cutoff`` best-scoring tasks with a
    positive score (ties by task id).
    """
    if isinstance(scores, TaskScores):
        vals = scores.array
        positive = np.flatnonzero(vals > 0)
        if len(positive) > config.task_cutoff:
            kth = np.partition(vals[positive], len(positive) - config.task_cutoff)[len(positive) - config.task_cutoff]
            positive = positive[vals[positive] >= kth]
        considered = sorted(((scores.ids[i], float(vals[i])) for i in positive), key=lambda x: (-x[1], x[0]))
    else:
        considered = sorted(((t, s) for t, s in scores.items() if s > 0), key=lambda x: (-x[1], x[0]))
    considered = considered[: config.task_cutoff]

    if task_datasets is None:
        task_datasets = graph.task_datasets()
    support: dict[str, list[tuple[str, float]]] = {}
    for task_id, s in considered:
        for cid in task_datasets.get(task_id, ()):
            support.setdefault(cid, []).append((task_id, s))

    entries = []
    for cid, tasks in support.items():
        node = graph.datasets[cid]
        docs = tuple(sorted(d for d in graph.dataset_docs.get(cid, ()) if d not in excluded_docs))
        entries.append(RankedDataset(cid, node.canonical_name, max(s for _, s in tasks), tuple(tasks), docs))
    entries.sort(key=lambda e: (-e.score, e.canonical_name, e.canonical_id))
    return RankedResult(tuple(entries))


def rerank(
    result: RankedResult,
    query_text: str,
    client: ModelClient,
    graph: KnowledgeGraph,
    k_rerank: int = 10,
) -> RankedResult:
    """Let the model permute the first ``k_rerank`` entries; anything other
    than a permutation of the head leaves the order unchanged."""
    head, tail = list(result.entries[:k_rerank]), list(result.entries[k_rerank:])
    if len(head) < 2:
        return replace(result, rerank_status="applied")
    candidates = [(e.canonical_id, e.canonical_name, graph.datasets[e.canonical_id].description) for e in head]
    try:
        reply = client.complete(prompts.render_rerank(query_text, candidates), "rerank_list")
    except ModelUnavailable as exc:
        logger.warning("reranker unavailable, keeping graph order: %s", exc)
        return replace(result, rerank_status="fallback:unavailable")
    try:
        order = json.loads(reply.strip())
    except json.JSONDecodeError:
        order = None
    by_id = {e.canonical_id: e for e in head}
    if (
        not isinstance(order, list)
        or len(order) != len(head)
        or not all(isinstance(o, str) for o in order)
        or set(order) != set(by_id)
    ):
        logger.warning("reranker reply is not a permutation of the candidates; keeping graph order")
        return replace(result, rerank_status="fallback:invalid")
    return replace(result, entries=tuple(by_id[o] for o in order) + tuple(tail), rerank_status="applied")


# ---------------------------------------------------------------------------


class SearchEngine:
    """Read-only query state over one graph snapshot."""

    def __init__(self, graph: KnowledgeGraph, task_index: VectorIndex, provider: EmbeddingProvider) -> None:
        self.graph = graph
        self.task_index = task_index
        self.provider = provider
        self.matrix = TaskGraphMatrix(list(task_index.ids), graph.task_task)
        self.task_datasets = graph.task_datasets()
        source = np.array([graph.tasks[t].source_doc_id for t in task_index.ids], dtype=object)
        self._task_source = source

    def task_mask(self, excluded_docs: Collection[str]) -> np.ndarray | None:
        if not excluded_docs:
            return None
        excluded = set(excluded_docs)
        mask = np.fromiter((d in excluded for d in self._task_source), dtype=bool, count=len(self._task_source))
        return mask if mask.any() else None

    def search(
        self,
        query_text: str,
        config: QueryConfig = QueryConfig(),
        *,
        reranker: ModelClient | None = None,
        excluded_docs: Collection[str] = (),
    ) -> RankedResult:
        if not len(self.task_index):
            return RankedResult((), query=query_text)
        mask = self.task_mask(excluded_docs)
        if mask is not None and mask.all():
            return RankedResult((), query=query_text)
        seeds = identify_seeds(query_text, self.provider, self.task_index, config.seed_k, exclude=mask)
        scores = expand_ppr(self.matrix, seeds, config, excluded=mask)
        result = aggregate_datasets(
            self.graph, scores, config, task_datasets=self.task_datasets, excluded_docs=excluded_docs
        )
        result = replace(result, query=query_text, seeds=seeds, ppr_converged=scores.converged)
        if config.rerank_enabled and reranker is not None:
            result = rerank(result, query_text, reranker, self.graph, config.k_rerank)
        return result


def search(
    query_text: str,
    engine: SearchEngine,
    config: QueryConfig = QueryConfig(),
    *,
    reranker: ModelClient | None = None,
    excluded_docs: Collection[str] = (),
) -> RankedResult:
    return engine.search(query_text, config, reranker=reranker, excluded_docs=excluded_docs)


def result_to_dict(result: RankedResult, graph: KnowledgeGraph, top_n: int | None = None) -> dict[str, Any]:
    """The one wire/report format for ranked results."""
    entries = result.entries if top_n is None else result.entries[:top_n]
    return {
        "query": result.query,
        "seeds": [
            {"task_id": t, "description": graph.tasks[t].description, "cosine": s} for t, s in result.seeds.entries
        ],
        "rerank": result.rerank_status,
        "ppr_converged": result.ppr_converged,
        "results": [
            {
                "rank": i + 1,
                "canonical_id": e.canonical_id,
                "canonical_name": e.canonical_name,
                "score": e.score,
                "supporting_tasks": [
                    {"task_id": t, "description": graph.tasks[t].description, "score": s}
                    for t, s in e.supporting_tasks
                ],
                "source_documents": list(e.source_documents),
            }
            for i, e in enumerate(entries)
        ],
    }
