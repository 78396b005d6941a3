"""Top-k neighbour blocking with incremental maintenance.

For every indexed row we remember its current k-th neighbour (score, id).
When rows are appended, an old row's neighbour list can only change if a new
row outranks that k-th neighbour, so only those rows are re-queried and the
candidate-pair set stays equal to what a from-scratch computation over the
enlarged index would produce.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

from ..embed import VectorIndex


@dataclass
class NeighborTable:
    k: int
    kth: dict[str, tuple[float, str] | None] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"k": self.k, "kth": {i: (list(v) if v else None) for i, v in sorted(self.kth.items())}}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "NeighborTable":
        return cls(data["k"], {i: (float(v[0]), v[1]) if v else None for i, v in data["kth"].items()})


def _outranks(score: float, entity_id: str, kth: tuple[float, str]) -> bool:
    return score > kth[0] or (score == kth[0] and entity_id < kth[1])


def candidate_pairs(
    index: VectorIndex,
    k: int,
    new_ids: Iterable[str] | None = None,
    table: NeighborTable | None = None,
) -> tuple[set[tuple[str, str]], NeighborTable]:
    """Unordered pairs ``(a, b)`` with ``a < b`` where one is among the other's
    ``k`` nearest rows. With ``new_ids`` only pairs touching a new row are
    returned (pairs among old rows were produced by earlier calls).
    """
    if table is None or table.k != k:
        table = NeighborTable(k)
        new_ids = None
    ids = index.ids
    n = len(ids)
    if new_ids is None:
        new_rows = list(range(n))
    else:
        new_rows = sorted(index.position(i) for i in set(new_ids))
    is_new = np.zeros(n, dtype=bool)
    is_new[new_rows] = True
    pairs: set[tuple[str, str]] = set()

    def visit(row: int, scores: np.ndarray, only_new: bool) -> None:
        exclude = np.zeros(n, dtype=bool)
        exclude[row] = True
        nbrs = index.top_rows(scores, k, exclude)
        a = ids[row]
        for r in nbrs:
            if only_new and not is_new[r]:
                continue
            b = ids[r]
            pairs.add((a, b) if a < b else (b, a))
        table.kth[a] = (float(scores[nbrs[-1]]), ids[nbrs[-1]]) if len(nbrs) >= k else None

    chunk = 256
    new_scores: list[np.ndarray] = []
    for start in range(0, len(new_rows), chunk):
        rows = new_rows[start : start + chunk]
        block = index.row_scores(rows)
        for row, scores in zip(rows, block):
            visit(row, scores, only_new=False)
        if new_ids is not None:
            new_scores.append(block)

    if new_ids is not None and new_rows:
        old_rows = np.flatnonzero(~is_new)
        sims = np.vstack(new_scores)[:, old_rows]  # (new, old)
        kth_scores = np.array(
            [table.kth[ids[r]][0] if table.kth.get(ids[r]) else -np.inf for r in old_rows]
        )
        has_kth = np.array([bool(table.kth.get(ids[r])) for r in old_rows], dtype=bool)
        beats = (sims > kth_scores).any(axis=0) | ~has_kth
        ties = (sims == kth_scores).any(axis=0) & ~beats
        for i in np.flatnonzero(ties):
            kth = table.kth[ids[old_rows[i]]]
            col = sims[:, i]
            beats[i] = any(_outranks(float(s), ids[new_rows[j]], kth) for j, s in enumerate(col))
        for i in np.flatnonzero(beats):
            row = int(old_rows[i])
            visit(row, index.row_scores([row])[0], only_new=True)
    return pairs, table
