"""Benchmark loading and retrieval metrics (Hit Rate@k, EM, token F1)."""

from __future__ import annotations

import json
import logging
import re
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from ._io import atomic_write_bytes, dumps_canonical
from .errors import EmptyAfterNormalization, TaskDSError
from .kgraph.resolution import normalize_title

logger = logging.getLogger(__name__)

DEFAULT_KS = (1, 3, 5, 10)
_TOKEN_SPLIT_RE = re.compile(r"[^0-9a-z]+")


@dataclass(frozen=True)
class GoldAnswer:
    canonical_name: str
    acceptable_aliases: frozenset[str] = frozenset()
    acceptable_substitutes: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "acceptable_aliases", frozenset(self.acceptable_aliases) | {self.canonical_name})
        object.__setattr__(self, "acceptable_substitutes", frozenset(self.acceptable_substitutes))


@dataclass(frozen=True)
class BenchmarkQuery:
    query_id: str
    task_text: str
    gold: tuple[GoldAnswer, ...]
    held_out_doc_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.task_text.strip():
            raise ValueError(f"{self.query_id}: empty task_text")
        if not self.gold:
            raise ValueError(f"{self.query_id}: no gold answers")


def load_benchmark(path: Path | str) -> list[BenchmarkQuery]:
    """One JSON object per line: ``{query_id, task_text, gold: [{canonical_name,
    aliases, substitutes}], held_out_doc_ids}``."""
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            out.append(
                BenchmarkQuery(
                    query_id=str(row["query_id"]),
                    task_text=row["task_text"],
                    gold=tuple(
                        GoldAnswer(g["canonical_name"], frozenset(g.get("aliases", ())), frozenset(g.get("substitutes", ())))
                        for g in row["gold"]
                    ),
                    held_out_doc_ids=tuple(row.get("held_out_doc_ids", ())),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TaskDSError(f"{path}:{n}: bad benchmark record: {exc}") from exc
    return out


def _key(name: str) -> str | None:
    try:
        return normalize_title(name).key
    except EmptyAfterNormalization:
        return None


def is_relevant(predicted_name: str, gold: GoldAnswer) -> bool:
    key = _key(predicted_name)
    if key is None:
        return False
    names = gold.acceptable_aliases | gold.acceptable_substitutes
    return any(_key(n) == key for n in names)


def hit_at_k(ranked_names: Sequence[str], gold: Sequence[GoldAnswer], k: int) -> int:
    return int(any(is_relevant(name, g) for name in ranked_names[:k] for g in gold))


def hit_rate_at_k(results: Sequence[Sequence[str]], golds: Sequence[Sequence[GoldAnswer]], k: int) -> float:
    if not results:
        return 0.0
    return sum(hit_at_k(r, g, k) for r, g in zip(results, golds)) / len(results)


def exact_match(top1_name: str | None, gold: Sequence[GoldAnswer]) -> int:
    """Canonical name or alias match; substitutes do not count."""
    if not top1_name:
        return 0
    key = _key(top1_name)
    return int(key is not None and any(_key(a) == key for g in gold for a in g.acceptable_aliases))


def tokenize(name: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT_RE.split(name.lower()) if t]


def token_f1(predicted_name: str, gold_name: str) -> float:
    pred, ref = tokenize(predicted_name), tokenize(gold_name)
    if not pred or not ref:
        return 0.0
    common = sum((Counter(pred) & Counter(ref)).values())
    if common == 0:
        return 0.0
    precision, recall = common / len(pred), common / len(ref)
    return 2 * precision * recall / (precision + recall)


def best_token_f1(predicted_name: str | None, gold: Sequence[GoldAnswer]) -> float:
    if not predicted_name:
        return 0.0
    return max((token_f1(predicted_name, a) for g in gold for a in g.acceptable_aliases), default=0.0)


# ---------------------------------------------------------------------------


@dataclass
class QueryOutcome:
    names: list[str]
    tokens: int = 0


@dataclass
class EvalReport:
    hit_rate: dict[int, float]
    em_top1: float
    f1_top1: float
    per_query: list[dict[str, Any]] = field(default_factory=list)
    timing: float = 0.0
    token_usage: float = 0.0
    failures: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "hit_rate": {str(k): v for k, v in sorted(self.hit_rate.items())},
            "em_top1": self.em_top1,
            "f1_top1": self.f1_top1,
            "mean_query_seconds": self.timing,
            "mean_query_tokens": self.token_usage,
            "failures": self.failures,
            "per_query": self.per_query,
        }

    def table(self) -> str:
        ks = sorted(self.hit_rate)
        head = " | ".join([*(f"HR@{k}" for k in ks), "EM", "F1", "s/query", "tok/query"])
        row = " | ".join(
            [*(f"{self.hit_rate[k]:.3f}" for k in ks), f"{self.em_top1:.3f}", f"{self.f1_top1:.3f}",
             f"{self.timing:.4f}", f"{self.token_usage:.1f}"]
        )
        return f"{head}\n{row}\n({len(self.per_query)} queries, {self.failures} failed)"

    def save(self, directory: Path | str) -> tuple[Path, Path]:
        directory = Path(directory)
        jpath, tpath = directory / "eval_report.json", directory / "eval_report.txt"
        atomic_write_bytes(jpath, (dumps_canonical(self.to_dict(), indent=1) + "\n").encode("utf-8"))
        atomic_write_bytes(tpath, (self.table() + "\n").encode("utf-8"))
        return jpath, tpath


System = Callable[[BenchmarkQuery], QueryOutcome]


def evaluate(system: System, benchmark: Iterable[BenchmarkQuery], ks: Sequence[int] = DEFAULT_KS) -> EvalReport:
    """Run every query through ``system`` and aggregate the metrics.

    ``system`` is responsible for honouring each query's held-out documents.
    A query that raises is scored as a miss.
    """
    rows: list[dict[str, Any]] = []
    failures = 0
    for q in benchmark:
        start = time.perf_counter()
        error = None
        try:
            outcome = system(q)
        except Exception as exc:  # one bad query must not abort the run
            logger.warning("query %s failed: %s", q.query_id, exc)
            outcome, error = QueryOutcome([]), f"{type(exc).__name__}: {exc}"
            failures += 1
        elapsed = time.perf_counter() - start
        top1 = outcome.names[0] if outcome.names else None
        rows.append(
            {
                "query_id": q.query_id,
                "top": outcome.names[: max(ks)],
                **{f"hit@{k}": hit_at_k(outcome.names, q.gold, k) for k in ks},
                "em": exact_match(top1, q.gold),
                "f1": best_token_f1(top1, q.gold),
                "seconds": elapsed,
                "tokens": outcome.tokens,
                "error": error,
            }
        )
    rows.sort(key=lambda r: r["query_id"])
    n = len(rows)

    def mean(field_: str) -> float:
        return sum(r[field_] for r in rows) / n if n else 0.0

    return EvalReport(
        hit_rate={k: mean(f"hit@{k}") for k in ks},
        em_top1=mean("em"),
        f1_top1=mean("f1"),
        per_query=rows,
        timing=mean("seconds"),
        token_usage=mean("tokens"),
        failures=failures,
    )
