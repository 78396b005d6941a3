"""Versioned on-disk snapshots.

A snapshot is a directory named by the hash of its contents. Writers build
it under a temporary name, rename it into place, then swap the ``CURRENT``
pointer; readers only ever follow ``CURRENT``, so a crashed build is
invisible.
"""

from __future__ import annotations

import hashlib
import json
import shutil
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

from filelock import FileLock, Timeout

from ._io import atomic_write_bytes, atomic_write_json, read_json
from .embed import VectorIndex
from .errors import SnapshotError, TaskDSError
from .extract import ExtractionRecord
from .ingest import Manifest
from .kgraph import Indices, KnowledgeGraph, NeighborTable, ResolutionState

STORE_FORMAT = 1
SNAPSHOT_DIR = "snapshots"
CURRENT = "CURRENT"

GRAPH_FILE = "graph.kats"
RESOLUTION_FILE = "resolution.json"
ALIASES_FILE = "aliases.json"
JUDGE_CACHE_FILE = "judge_cache.json"
NEIGHBORS_FILE = "neighbors.json"
MANIFEST_FILE = "manifest.json"
RECORDS_FILE = "records.jsonl"
META_FILE = "meta.json"


@dataclass
class StoreSnapshot:
    graph: KnowledgeGraph
    indices: Indices
    state: ResolutionState
    manifest: Manifest
    records: list[ExtractionRecord] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)
    snapshot_id: str | None = None
    path: Path | None = None

    def check_consistency(self) -> None:
        """Every indexed id must exist in the graph and vice versa."""
        g = self.graph
        task_ids, mention_ids = set(self.indices.task.ids), set(self.indices.dataset.ids)
        if task_ids != set(g.tasks):
            missing = sorted(task_ids ^ set(g.tasks))
            raise SnapshotError(f"task index and graph disagree on {len(missing)} id(s), e.g. {missing[0]}")
        if mention_ids != set(g.mentions):
            missing = sorted(mention_ids ^ set(g.mentions))
            raise SnapshotError(
                f"dataset index and graph disagree on {len(missing)} id(s), e.g. {missing[0]}"
            )
        unknown = set(self.state.dsu.parent) - set(g.mentions)
        if unknown:
            raise SnapshotError(f"resolution state mentions unknown id {sorted(unknown)[0]}")
        for fp, entry in self.manifest.entries.items():
            if entry.doc_id not in g.documents:
                raise SnapshotError(f"manifest entry {fp[:12]} points at unknown document {entry.doc_id}")
        try:
            g.validate()
        except TaskDSError as exc:
            raise SnapshotError(str(exc)) from exc


@contextmanager
def store_lock(root: Path | str, timeout: float = 30.0) -> Iterator[None]:
    """Exclusive writer lock; readers never take it."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(root / ".lock"), timeout=timeout)
    try:
        with lock:
            yield
    except Timeout as exc:
        raise SnapshotError(f"store {root} is locked by another writer") from exc


def _write_components(snap: StoreSnapshot, directory: Path) -> None:
    snap.graph.save(directory / GRAPH_FILE)
    snap.indices.task.save(directory)
    snap.indices.dataset.save(directory)
    state = snap.state.to_dict()
    atomic_write_json(directory / RESOLUTION_FILE, state)
    atomic_write_json(directory / ALIASES_FILE, snap.state.alias_dictionary)
    atomic_write_json(directory / JUDGE_CACHE_FILE, snap.state.judge_cache)
    nbrs = snap.indices.task_neighbors
    atomic_write_json(directory / NEIGHBORS_FILE, nbrs.to_dict() if nbrs else None)
    snap.manifest.save(directory / MANIFEST_FILE)
    lines = sorted(
        json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) for r in snap.records
    )
    atomic_write_bytes(directory / RECORDS_FILE, "".join(l + "\n" for l in lines).encode("utf-8"))
    atomic_write_json(directory / META_FILE, {**snap.meta, "store_format": STORE_FORMAT})


def content_digest(directory: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(p for p in directory.iterdir() if p.is_file()):
        h.update(path.name.encode("utf-8") + b"\0")
        h.update(hashlib.sha256(path.read_bytes()).digest())
    return h.hexdigest()


def save_snapshot(root: Path | str, snap: StoreSnapshot) -> str:
    """Write, then commit by swapping ``CURRENT``. Caller holds the store lock."""
    root = Path(root)
    snaps = root / SNAPSHOT_DIR
    snaps.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".building-", dir=snaps))
    try:
        _write_components(snap, tmp)
        sid = content_digest(tmp)[:24]
        final = snaps / sid
        if final.exists():
            shutil.rmtree(tmp)
        else:
            tmp.rename(final)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    atomic_write_bytes(root / CURRENT, (sid + "\n").encode("ascii"))
    snap.snapshot_id, snap.path = sid, final
    return sid


def current_snapshot_id(root: Path | str) -> str | None:
    pointer = Path(root) / CURRENT
    if not pointer.exists():
        return None
    return pointer.read_text(encoding="ascii").strip() or None


def load_snapshot(root: Path | str, snapshot_id: str | None = None) -> StoreSnapshot:
    root = Path(root)
    sid = snapshot_id or current_snapshot_id(root)
    if sid is None:
        raise SnapshotError(f"no snapshot found under {root}; run `build` first")
    directory = root / SNAPSHOT_DIR / sid
    if not directory.is_dir():
        raise SnapshotError(f"snapshot {sid} not found under {root}")
    try:
        meta = read_json(directory / META_FILE)
        if meta.get("store_format") != STORE_FORMAT:
            raise SnapshotError(f"unsupported store format {meta.get('store_format')!r}")
        dim = meta.get("dim")
        graph = KnowledgeGraph.load(directory / GRAPH_FILE)
        nbrs = read_json(directory / NEIGHBORS_FILE)
        indices = Indices(
            VectorIndex.load(directory, "task", dim),
            VectorIndex.load(directory, "dataset", dim),
            NeighborTable.from_dict(nbrs) if nbrs else None,
        )
        state = ResolutionState.from_parts(
            read_json(directory / RESOLUTION_FILE),
            read_json(directory / ALIASES_FILE),
            read_json(directory / JUDGE_CACHE_FILE),
        )
        manifest = Manifest.load(directory / MANIFEST_FILE)
        records = [
            ExtractionRecord.from_dict(json.loads(line))
            for line in (directory / RECORDS_FILE).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
    except SnapshotError:
        raise
    except (OSError, ValueError, KeyError, TypeError, TaskDSError) as exc:
        raise SnapshotError(f"snapshot {sid} is unreadable: {exc}") from exc
    snap = StoreSnapshot(graph, indices, state, manifest, records, meta, sid, directory)
    snap.check_consistency()
    return snap
