"""Populate the graph from extraction records."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from ..errors import DanglingRecord
from ..extract import ExtractionRecord
from ..ingest import NormalizedDocument
from .model import DatasetNode, DocumentNode, KnowledgeGraph, Mention, TaskNode, content_id


@dataclass
class Additions:
    documents: list[str] = field(default_factory=list)
    mentions: list[str] = field(default_factory=list)
    tasks: list[str] = field(default_factory=list)


def mention_id_for(doc_id: str, dataset_name: str) -> str:
    return content_id("m", doc_id, dataset_name)


def dataset_id_for(mention_id: str) -> str:
    return "d-" + mention_id[2:]


def task_id_for(record: ExtractionRecord) -> str:
    return content_id("t", record.source_doc_id, record.dataset_name, record.task_description)


def _pick_description(candidates: Iterable[str]) -> str:
    """Longest non-empty description, ties broken lexicographically."""
    return min((c for c in candidates if c), key=lambda c: (-len(c), c), default="")


def add_records(
    graph: KnowledgeGraph, records: Iterable[ExtractionRecord], docs: Iterable[NormalizedDocument]
) -> Additions:
    """Add documents, one dataset node per (document, dataset name) and one
    task node per record. Existing nodes are left untouched.
    """
    added = Additions()
    docs = list(docs)
    records = list(records)
    for doc in sorted(docs, key=lambda d: d.doc_id):
        if doc.doc_id not in graph.documents:
            graph.documents[doc.doc_id] = DocumentNode(doc.doc_id, doc.title, doc.source_path, doc.fingerprint)
            added.documents.append(doc.doc_id)
    for rec in records:
        if rec.source_doc_id not in graph.documents:
            raise DanglingRecord(f"record for {rec.dataset_name!r} cites unknown document {rec.source_doc_id!r}")

    by_mention: dict[str, list[ExtractionRecord]] = {}
    for rec in records:
        by_mention.setdefault(mention_id_for(rec.source_doc_id, rec.dataset_name), []).append(rec)

    for mid in sorted(by_mention):
        recs = by_mention[mid]
        if mid in graph.mentions:
            continue
        first = recs[0]
        mention = Mention(mid, first.dataset_name, _pick_description(r.dataset_description for r in recs), first.source_doc_id)
        graph.mentions[mid] = mention
        cid = dataset_id_for(mid)
        graph.datasets[cid] = DatasetNode(cid, mention.name, {mention.name}, mention.description, {mid})
        graph.mention_of[mid] = cid
        graph.dataset_docs[cid] = {mention.doc_id}
        graph.dataset_tasks[cid] = set()
        added.mentions.append(mid)

    for rec in sorted(records, key=task_id_for):
        tid = task_id_for(rec)
        if tid not in graph.tasks:
            graph.tasks[tid] = TaskNode(tid, rec.task_description, rec.task_keywords, rec.source_doc_id)
            added.tasks.append(tid)
        cid = graph.mention_of[mention_id_for(rec.source_doc_id, rec.dataset_name)]
        graph.dataset_tasks[cid].add(tid)
    return added


def build_graph(records: Iterable[ExtractionRecord], docs: Iterable[NormalizedDocument]) -> KnowledgeGraph:
    graph = KnowledgeGraph()
    add_records(graph, records, docs)
    return graph
