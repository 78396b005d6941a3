"""Tripartite document/dataset/task graph and its on-disk form."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .._io import atomic_write_bytes, dumps_canonical, read_json
from ..errors import SnapshotError, TaskDSError

SCHEMA_VERSION = 1


def content_id(prefix: str, *parts: str) -> str:
    h = hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()
    return f"{prefix}-{h[:20]}"


@dataclass
class DocumentNode:
    doc_id: str
    title: str
    source_path: str
    fingerprint: str


@dataclass
class Mention:
    """One dataset name as it appeared in one document (``doc_id`` is None
    for entries ingested from outside the corpus)."""

    mention_id: str
    name: str
    description: str
    doc_id: str | None


@dataclass
class DatasetNode:
    canonical_id: str
    canonical_name: str
    aliases: set[str]
    description: str
    member_mention_ids: set[str]
    external: bool = False


@dataclass
class TaskNode:
    task_id: str
    description: str
    keywords: tuple[str, ...]
    source_doc_id: str


@dataclass
class KnowledgeGraph:
    documents: dict[str, DocumentNode] = field(default_factory=dict)
    mentions: dict[str, Mention] = field(default_factory=dict)
    datasets: dict[str, DatasetNode] = field(default_factory=dict)
    tasks: dict[str, TaskNode] = field(default_factory=dict)
    # adjacency is the primary edge store; edge sets below are views
    dataset_docs: dict[str, set[str]] = field(default_factory=dict)
    dataset_tasks: dict[str, set[str]] = field(default_factory=dict)
    task_task: dict[tuple[str, str], float] = field(default_factory=dict)
    mention_of: dict[str, str] = field(default_factory=dict)

    # -- edge views --------------------------------------------------------

    @property
    def doc_dataset_edges(self) -> set[tuple[str, str]]:
        return {(doc, cid) for cid, docs in self.dataset_docs.items() for doc in docs}

    @property
    def dataset_task_edges(self) -> set[tuple[str, str]]:
        return {(cid, tid) for cid, tids in self.dataset_tasks.items() for tid in tids}

    @property
    def task_task_edges(self) -> dict[tuple[str, str], float]:
        return dict(self.task_task)

    def task_datasets(self) -> dict[str, set[str]]:
        out: dict[str, set[str]] = {}
        for cid, tids in self.dataset_tasks.items():
            for tid in tids:
                out.setdefault(tid, set()).add(cid)
        return out

    # -- mutation ----------------------------------------------------------

    def add_task_edge(self, a: str, b: str, weight: float) -> bool:
        """Insert an undirected similarity edge; existing edges are kept as is."""
        if a == b:
            raise TaskDSError("self-loops are not allowed in task-task edges")
        if not 0.0 < weight <= 1.0:
            raise TaskDSError(f"task-task weight {weight} outside (0, 1]")
        key = (a, b) if a < b else (b, a)
        if key in self.task_task:
            return False
        self.task_task[key] = weight
        return True

    def canonical_of(self, mention_id: str) -> str:
        return self.mention_of[mention_id]

    # -- checks ------------------------------------------------------------

    def validate(self) -> None:
        for cid, docs in self.dataset_docs.items():
            if cid not in self.datasets or not docs <= self.documents.keys():
                raise TaskDSError(f"dangling document-dataset edge at {cid}")
        for cid, tids in self.dataset_tasks.items():
            if cid not in self.datasets or not tids <= self.tasks.keys():
                raise TaskDSError(f"dangling dataset-task edge at {cid}")
        for (a, b), w in self.task_task.items():
            if a not in self.tasks or b not in self.tasks or not a < b or not 0 < w <= 1:
                raise TaskDSError(f"invalid task-task edge {(a, b, w)}")
        for cid, node in self.datasets.items():
            if node.canonical_name not in node.aliases:
                raise TaskDSError(f"{cid}: canonical name not among aliases")
            if not self.dataset_docs.get(cid) and not node.external:
                raise TaskDSError(f"{cid}: no document edge and not externally ingested")
            for mid in node.member_mention_ids:
                if self.mention_of.get(mid) != cid:
                    raise TaskDSError(f"mention {mid} not mapped to {cid}")
        if set(self.mention_of) != set(self.mentions):
            raise TaskDSError("mention map does not cover every mention")

    def stats(self) -> dict[str, int]:
        return {
            "documents": len(self.documents),
            "mentions": len(self.mentions),
            "datasets": len(self.datasets),
            "tasks": len(self.tasks),
            "doc_dataset_edges": sum(len(v) for v in self.dataset_docs.values()),
            "dataset_task_edges": sum(len(v) for v in self.dataset_tasks.values()),
            "task_task_edges": len(self.task_task),
        }

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "documents": [
                [d.doc_id, d.title, d.source_path, d.fingerprint]
                for d in sorted(self.documents.values(), key=lambda d: d.doc_id)
            ],
            "mentions": [
                [m.mention_id, m.name, m.description, m.doc_id]
                for m in sorted(self.mentions.values(), key=lambda m: m.mention_id)
            ],
            "datasets": [
                {
                    "id": n.canonical_id,
                    "name": n.canonical_name,
                    "aliases": sorted(n.aliases),
                    "description": n.description,
                    "members": sorted(n.member_mention_ids),
                    "external": n.external,
                }
                for n in sorted(self.datasets.values(), key=lambda n: n.canonical_id)
            ],
            "tasks": [
                [t.task_id, t.description, list(t.keywords), t.source_doc_id]
                for t in sorted(self.tasks.values(), key=lambda t: t.task_id)
            ],
            "edges": {
                "doc_dataset": sorted([doc, cid] for cid, docs in self.dataset_docs.items() for doc in docs),
                "dataset_task": sorted([cid, tid] for cid, tids in self.dataset_tasks.items() for tid in tids),
                "task_task": [[a, b, w] for (a, b), w in sorted(self.task_task.items())],
            },
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "KnowledgeGraph":
        if data.get("schema_version") != SCHEMA_VERSION:
            raise SnapshotError(f"unsupported graph schema {data.get('schema_version')!r}")
        g = cls()
        for doc_id, title, path, fp in data["documents"]:
            g.documents[doc_id] = DocumentNode(doc_id, title, path, fp)
        for mid, name, desc, doc_id in data["mentions"]:
            g.mentions[mid] = Mention(mid, name, desc, doc_id)
        for d in data["datasets"]:
            node = DatasetNode(
                d["id"], d["name"], set(d["aliases"]), d["description"], set(d["members"]), d["external"]
            )
            g.datasets[node.canonical_id] = node
            g.dataset_docs[node.canonical_id] = set()
            g.dataset_tasks[node.canonical_id] = set()
            for mid in node.member_mention_ids:
                g.mention_of[mid] = node.canonical_id
        for tid, desc, kws, doc_id in data["tasks"]:
            g.tasks[tid] = TaskNode(tid, desc, tuple(kws), doc_id)
        for doc, cid in data["edges"]["doc_dataset"]:
            g.dataset_docs[cid].add(doc)
        for cid, tid in data["edges"]["dataset_task"]:
            g.dataset_tasks[cid].add(tid)
        g.task_task = {(a, b): float(w) for a, b, w in data["edges"]["task_task"]}
        return g

    def save(self, path: Path | str) -> None:
        atomic_write_bytes(Path(path), (dumps_canonical(self.to_dict()) + "\n").encode("utf-8"))

    @classmethod
    def load(cls, path: Path | str) -> "KnowledgeGraph":
        return cls.from_dict(read_json(Path(path)))


def canonical_form(graph: KnowledgeGraph) -> dict[str, Any]:
    """Id-free description of a graph for isomorphism checks.

    Dataset clusters are identified by their member mentions (whose ids are
    content hashes), so two graphs compare equal iff they hold the same
    clusters, names, aliases and edges regardless of which canonical id each
    cluster was given.
    """
    cluster_key = {cid: tuple(sorted(n.member_mention_ids)) for cid, n in graph.datasets.items()}
    return {
        "documents": sorted(graph.documents),
        "clusters": sorted(
            (
                cluster_key[cid],
                n.canonical_name,
                tuple(sorted(n.aliases)),
                n.description,
                n.external,
                tuple(sorted(graph.dataset_docs.get(cid, ()))),
                tuple(sorted(graph.dataset_tasks.get(cid, ()))),
            )
            for cid, n in graph.datasets.items()
        ),
        "tasks": sorted((t.task_id, t.description, t.keywords) for t in graph.tasks.values()),
        "task_task": sorted(graph.task_task.items()),
    }
