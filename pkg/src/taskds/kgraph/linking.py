"""Task linking: weighted similarity edges between task nodes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from ..embed import VectorIndex, cosine
from ..errors import ConfigError, MissingVector
from .blocking import NeighborTable, candidate_pairs
from .model import KnowledgeGraph


@dataclass(frozen=True)
class LinkingConfig:
    theta_d: float = 0.80
    theta_k: float = 0.50
    blocking_k: int = 10
    # dataset pairs below this cosine never reach the judge
    judge_floor: float = 0.85

    def __post_init__(self) -> None:
        if not 0.0 < self.theta_d < 1.0:
            raise ConfigError(f"theta_d must be in (0, 1), got {self.theta_d}")
        if not 0.0 < self.theta_k <= 1.0:
            raise ConfigError(f"theta_k must be in (0, 1], got {self.theta_k}")
        if self.blocking_k < 1:
            raise ConfigError("blocking_k must be >= 1")
        if not -1.0 <= self.judge_floor <= 1.0:
            raise ConfigError("judge_floor must be a cosine value")


def keyword_overlap(a: Sequence[str], b: Sequence[str]) -> float:
    """Jaccard index over lowercased keywords; 0.0 when both are empty."""
    sa = {k.lower() for k in a}
    sb = {k.lower() for k in b}
    union = sa | sb
    return len(sa & sb) / len(union) if union else 0.0


def link_tasks(
    graph: KnowledgeGraph,
    task_index: VectorIndex,
    config: LinkingConfig = LinkingConfig(),
    *,
    new_task_ids: Iterable[str] | None = None,
    table: NeighborTable | None = None,
) -> tuple[int, NeighborTable]:
    """Add similarity edges among each task's ``blocking_k`` nearest tasks.

    A pair is linked when its cosine reaches ``theta_d`` or its keyword
    overlap reaches ``theta_k``; the stored weight is the cosine either way,
    so keyword-only pairs with non-positive cosine are skipped. Returns the
    number of edges added and the updated neighbour table.
    """
    missing = [t for t in graph.tasks if t not in task_index]
    if missing:
        raise MissingVector(f"{len(missing)} task(s) without vectors, e.g. {missing[0]}")
    pairs, table = candidate_pairs(task_index, config.blocking_k, new_task_ids, table)
    added = 0
    for a, b in sorted(pairs):
        if (a, b) in graph.task_task:
            continue
        w = cosine(task_index.vector(a), task_index.vector(b))
        if w <= 0.0:
            continue
        if w >= config.theta_d or keyword_overlap(graph.tasks[a].keywords, graph.tasks[b].keywords) >= config.theta_k:
            added += graph.add_task_edge(a, b, w)
    return added, table
