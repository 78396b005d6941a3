"""Dataset entity resolution: ANN blocking, title/alias matching, judge
verification, then collapsing each cluster into one dataset node."""

from __future__ import annotations

import hashlib
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from typing import Any, Iterable, NamedTuple

from .. import prompts
from ..clients import ModelClient
from ..embed import VectorIndex, cosine
from ..errors import EmptyAfterNormalization, JudgeUnavailable, MissingVector, ModelUnavailable, UnknownNode
from .blocking import NeighborTable, candidate_pairs
from .linking import LinkingConfig
from .model import KnowledgeGraph

logger = logging.getLogger(__name__)

_TRAILING_PAREN_RE = re.compile(r"^(?P<head>.*\S)\s*\((?P<inner>[^()]*)\)\s*$", re.S)
USER_ALIAS_PREFIX = "user:"


class NormalizedTitle(NamedTuple):
    key: str
    alias: str | None


def _squash(text: str) -> str:
    return "".join(ch for ch in text if ch.isalnum())


def normalize_title(name: str) -> NormalizedTitle:
    """Case/space/punctuation-insensitive key for a dataset name.

    A single trailing parenthetical is split off and returned as an alias
    candidate: ``"Foo Bar (FB)" -> ("foobar", "fb")``.
    """
    text = unicodedata.normalize("NFKC", name).lower()
    alias = None
    m = _TRAILING_PAREN_RE.match(text)
    if m and _squash(m.group("head")):
        text = m.group("head")
        alias = _squash(m.group("inner")) or None
    key = _squash(text)
    if not key:
        raise EmptyAfterNormalization(f"nothing left of {name!r} after normalization")
    return NormalizedTitle(key, alias)


def title_keys(name: str) -> set[str]:
    """Keys under which a name matches other names in title matching.

    Parenthetical aliases count only when they contain a letter, so year or
    version suffixes such as ``(2019)`` never join unrelated datasets.
    """
    try:
        key, alias = normalize_title(name)
    except EmptyAfterNormalization:
        return set()
    keys = {key}
    if alias and len(alias) >= 2 and any(ch.isalpha() for ch in alias):
        keys.add(alias)
    return keys


class DisjointSet:
    """Union-find over string ids; the root of a set is its smallest member."""

    def __init__(self, parent: dict[str, str] | None = None) -> None:
        self.parent: dict[str, str] = dict(parent or {})

    def add(self, x: str) -> None:
        self.parent.setdefault(x, x)

    def __contains__(self, x: object) -> bool:
        return x in self.parent

    def find(self, x: str) -> str:
        self.add(x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: str, b: str) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if rb < ra:
            ra, rb = rb, ra
        self.parent[rb] = ra
        return True

    def groups(self) -> dict[str, set[str]]:
        out: dict[str, set[str]] = {}
        for x in self.parent:
            out.setdefault(self.find(x), set()).add(x)
        return out


@dataclass
class ResolutionState:
    dsu: DisjointSet = field(default_factory=DisjointSet)
    alias_dictionary: dict[str, str] = field(default_factory=dict)
    judge_cache: dict[str, bool] = field(default_factory=dict)
    pending: set[tuple[str, str]] = field(default_factory=set)
    dataset_neighbors: NeighborTable | None = None
    # verdicts from earlier builds, consulted on a miss; never persisted here
    shared_verdicts: dict[str, bool] = field(default_factory=dict, repr=False)

    def seed_aliases(self, groups: dict[str, Iterable[str]]) -> None:
        """Pre-populate from ``{canonical name: [alias, ...]}``."""
        for canonical, aliases in groups.items():
            label = USER_ALIAS_PREFIX + normalize_title(canonical).key
            for name in [canonical, *aliases]:
                for key in title_keys(name):
                    self.alias_dictionary[key] = label

    def to_dict(self) -> dict[str, Any]:
        return {
            "dsu": {x: self.dsu.find(x) for x in sorted(self.dsu.parent)},
            "pending": sorted(list(p) for p in self.pending),
            "dataset_neighbors": self.dataset_neighbors.to_dict() if self.dataset_neighbors else None,
        }

    @classmethod
    def from_parts(
        cls, data: dict[str, Any], aliases: dict[str, str], judge_cache: dict[str, bool]
    ) -> "ResolutionState":
        nbrs = data.get("dataset_neighbors")
        return cls(
            dsu=DisjointSet(data["dsu"]),
            alias_dictionary=dict(aliases),
            judge_cache={k: bool(v) for k, v in judge_cache.items()},
            pending={tuple(p) for p in data.get("pending", [])},
            dataset_neighbors=NeighborTable.from_dict(nbrs) if nbrs else None,
        )


def judge_pair_key(name_a: str, desc_a: str, name_b: str, desc_b: str) -> str:
    """Order-independent digest of two (normalized name, description) entries."""

    def part(name: str, desc: str) -> str:
        try:
            key = normalize_title(name).key
        except EmptyAfterNormalization:
            key = name
        return f"{key}\x1f{' '.join(desc.split())}"

    joined = "\x1e".join(sorted([part(name_a, desc_a), part(name_b, desc_b)]))
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()


def parse_verdict(reply: str) -> bool:
    token = reply.strip().strip(".").strip().lower()
    if token in {"true", "yes"}:
        return True
    if token in {"false", "no"}:
        return False
    raise JudgeUnavailable(f"unparseable verdict {reply[:60]!r}")


def ask_judge(judge: ModelClient, name_a: str, desc_a: str, name_b: str, desc_b: str) -> bool:
    try:
        reply = judge.complete(prompts.render_judge(name_a, desc_a, name_b, desc_b), "verdict")
    except ModelUnavailable as exc:
        raise JudgeUnavailable(str(exc)) from exc
    return parse_verdict(reply)


# ---------------------------------------------------------------------------


def _choose_description(graph: KnowledgeGraph, canonical_name: str, members: Iterable[str]) -> str:
    ordered = sorted(members)
    for mid in ordered:
        m = graph.mentions[mid]
        if m.name == canonical_name and m.description:
            return m.description
    return next((graph.mentions[mid].description for mid in ordered if graph.mentions[mid].description), "")


def merge_dataset_nodes(graph: KnowledgeGraph, keep: str, absorb: str) -> KnowledgeGraph:
    """Fold dataset node ``absorb`` into ``keep`` and delete ``absorb``."""
    if keep not in graph.datasets:
        raise UnknownNode(keep)
    if absorb not in graph.datasets:
        raise UnknownNode(absorb)
    if keep == absorb:
        raise ValueError("cannot merge a node into itself")
    k, a = graph.datasets[keep], graph.datasets.pop(absorb)
    graph.dataset_docs.setdefault(keep, set()).update(graph.dataset_docs.pop(absorb, set()))
    graph.dataset_tasks.setdefault(keep, set()).update(graph.dataset_tasks.pop(absorb, set()))
    k.aliases |= a.aliases
    k.member_mention_ids |= a.member_mention_ids
    k.external = k.external or a.external
    for mid in a.member_mention_ids:
        graph.mention_of[mid] = keep
    k.canonical_name = min(k.aliases, key=lambda s: (-len(s), s))
    k.description = _choose_description(graph, k.canonical_name, k.member_mention_ids)
    return graph


@dataclass
class ResolutionStats:
    candidate_pairs: int = 0
    title_unions: int = 0
    judge_calls: int = 0
    judge_cache_hits: int = 0
    judge_unions: int = 0
    node_merges: int = 0
    skipped: int = 0


def resolve_datasets(
    graph: KnowledgeGraph,
    dataset_index: VectorIndex,
    state: ResolutionState,
    judge: ModelClient,
    config: LinkingConfig = LinkingConfig(),
    *,
    new_mention_ids: Iterable[str] | None = None,
) -> ResolutionStats:
    """Cluster dataset mentions and collapse the graph to one node per cluster.

    With ``new_mention_ids`` the ANN stage only produces pairs touching those
    mentions; title matching is a hash join over all mentions either way.
    Nodes that existed before this call keep their ids when clusters merge.
    """
    stats = ResolutionStats()
    missing = [m for m in graph.mentions if m not in dataset_index]
    if missing:
        raise MissingVector(f"{len(missing)} dataset mention(s) without vectors, e.g. {missing[0]}")
    new_set = set(new_mention_ids) if new_mention_ids is not None else set(graph.mentions)
    preexisting = {cid for cid, node in graph.datasets.items() if not node.member_mention_ids <= new_set}
    for mid in sorted(graph.mentions):
        state.dsu.add(mid)

    # Stage 1: candidate generation
    pairs, state.dataset_neighbors = candidate_pairs(
        dataset_index, config.blocking_k, new_mention_ids, state.dataset_neighbors
    )
    pairs |= state.pending
    state.pending = set()
    stats.candidate_pairs = len(pairs)

    # Stage 2: normalized titles and the alias dictionary
    owner: dict[str, str] = {}
    for mid in sorted(graph.mentions):
        keys = title_keys(graph.mentions[mid].name)
        tokens = keys | {state.alias_dictionary[k] for k in keys if k in state.alias_dictionary}
        for tok in sorted(tokens):
            if tok in owner:
                stats.title_unions += state.dsu.union(owner[tok], mid)
            else:
                owner[tok] = mid

    # Stage 3: judge verification of the remaining candidates
    for a, b in sorted(pairs):
        if state.dsu.find(a) == state.dsu.find(b):
            continue
        if cosine(dataset_index.vector(a), dataset_index.vector(b)) < config.judge_floor:
            continue
        ma, mb = graph.mentions[a], graph.mentions[b]
        key = judge_pair_key(ma.name, ma.description, mb.name, mb.description)
        if key in state.judge_cache:
            stats.judge_cache_hits += 1
            verdict = state.judge_cache[key]
        elif key in state.shared_verdicts:
            stats.judge_cache_hits += 1
            verdict = state.judge_cache[key] = state.shared_verdicts[key]
        else:
            try:
                verdict = ask_judge(judge, ma.name, ma.description, mb.name, mb.description)
            except JudgeUnavailable as exc:
                logger.warning("judge skipped %s/%s: %s", ma.name, mb.name, exc)
                state.pending.add((a, b))
                stats.skipped += 1
                continue
            stats.judge_calls += 1
            state.judge_cache[key] = verdict
        if verdict:
            stats.judge_unions += state.dsu.union(a, b)

    # Collapse clusters into single nodes
    for members in sorted(state.dsu.groups().values(), key=min):
        nodes = sorted({graph.mention_of[m] for m in members if m in graph.mention_of})
        if len(nodes) < 2:
            continue
        keep = min(nodes, key=lambda c: (c not in preexisting, c))
        for absorb in nodes:
            if absorb != keep:
                merge_dataset_nodes(graph, keep, absorb)
                stats.node_merges += 1

    # Learn aliases from the final clusters
    for cid, node in graph.datasets.items():
        for mid in node.member_mention_ids:
            for key in title_keys(graph.mentions[mid].name):
                if not state.alias_dictionary.get(key, "").startswith(USER_ALIAS_PREFIX):
                    state.alias_dictionary[key] = cid
    return stats
