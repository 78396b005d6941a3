"""Independent reference implementations used by the property and acceptance tests."""

from __future__ import annotations

import numpy as np


def dense_ppr(ids, edges, seeds, alpha=0.85, tol=1e-14, max_iter=100_000):
    """Plain dense power iteration, written without the library's matrix code.

    ``edges`` maps (a, b) -> w (undirected); dangling rows teleport to the
    uniform seed vector.
    """
    n = len(ids)
    pos = {t: i for i, t in enumerate(ids)}
    W = np.zeros((n, n))
    for (a, b), w in edges.items():
        W[pos[a], pos[b]] += w
        W[pos[b], pos[a]] += w
    v = np.zeros(n)
    for s in seeds:
        v[pos[s]] = 1.0
    v /= v.sum()
    p = v.copy()
    for _ in range(max_iter):
        nxt = np.zeros(n)
        for i in range(n):
            out = W[i].sum()
            if out > 0:
                nxt += alpha * p[i] * W[i] / out
            else:
                nxt += alpha * p[i] * v
        nxt += (1 - alpha) * v
        if np.abs(nxt - p).max() < tol:
            p = nxt
            break
        p = nxt
    return dict(zip(ids, p))


def brute_force_ranking(dataset_tasks, dataset_names, scores, cutoff=None):
    """Score(d) = max over linked tasks of score(t), among the top ``cutoff``
    positive tasks; sorted by (-score, name, id)."""
    ranked_tasks = sorted(((t, s) for t, s in scores.items() if s > 0), key=lambda x: (-x[1], x[0]))
    if cutoff is not None:
        ranked_tasks = ranked_tasks[:cutoff]
    considered = dict(ranked_tasks)
    out = []
    for d, tasks in dataset_tasks.items():
        linked = [considered[t] for t in tasks if t in considered]
        if linked:
            out.append((d, max(linked)))
    out.sort(key=lambda x: (-x[1], dataset_names[x[0]], x[0]))
    return out
