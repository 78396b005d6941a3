"""Three-agent extraction: relevance gate, structured analyst, keyword enrichment."""

from __future__ import annotations

import bisect
import hashlib
import json
import logging
import re
from dataclasses import asdict, dataclass, field, replace
from typing import Any

from . import prompts
from .clients import ModelClient
from .errors import ModelUnavailable, NoValidRecords, UnparseableResponse
from .ingest import ArtifactCache, NormalizedDocument

logger = logging.getLogger(__name__)

DEFAULT_CHAR_BUDGET = 24_000
_FOCUS_RE = re.compile(r"data|dataset|experiment|benchmark", re.I)
_SENTENCE_END_RE = re.compile(r"(?<=[.!?])\s+")


@dataclass(frozen=True)
class ExtractionRecord:
    dataset_name: str
    task_description: str
    source_doc_id: str
    task_keywords: tuple[str, ...] = ()
    dataset_description: str = ""

    def __post_init__(self) -> None:
        if not self.dataset_name.strip():
            raise ValueError("dataset_name must be non-empty")
        if not self.task_description.strip():
            raise ValueError("task_description must be non-empty")
        object.__setattr__(self, "task_keywords", merge_keywords((), self.task_keywords))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["task_keywords"] = list(self.task_keywords)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExtractionRecord":
        return cls(
            dataset_name=data["dataset_name"],
            task_description=data["task_description"],
            source_doc_id=data["source_doc_id"],
            task_keywords=tuple(data.get("task_keywords") or ()),
            dataset_description=data.get("dataset_description") or "",
        )


@dataclass
class ExtractionReport:
    """Per-run bookkeeping of what was skipped or degraded."""

    dropped: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    cache_hits: int = 0
    filtered_out: int = 0

    def warn(self, message: str) -> None:
        logger.warning(message)
        self.warnings.append(message)


def merge_keywords(existing: tuple[str, ...] | list[str], new: list[str] | tuple[str, ...]) -> tuple[str, ...]:
    out: list[str] = []
    for kw in [*existing, *new]:
        kw = " ".join(str(kw).lower().split())
        if kw and kw not in out:
            out.append(kw)
    return tuple(out)


def focus_text(text: str, budget: int = DEFAULT_CHAR_BUDGET) -> str:
    """Truncate to ``budget`` characters, keeping the window with the most
    data/experiment/benchmark mentions (earliest window on ties)."""
    if len(text) <= budget:
        return text
    hits = [m.start() for m in _FOCUS_RE.finditer(text)]
    if not hits:
        return text[:budget]
    best_start, best_count = 0, -1
    for i, pos in enumerate(hits):
        # window roughly centred on this hit
        start = min(max(0, pos - budget // 2), len(text) - budget)
        count = bisect.bisect_left(hits, start + budget) - bisect.bisect_left(hits, start)
        if count > best_count:
            best_start, best_count = start, count
    return text[best_start : best_start + budget]


def _parse_json(reply: str) -> Any:
    reply = reply.strip()
    fence = re.match(r"^```(?:json)?\s*(.*?)\s*```$", reply, re.S)
    if fence:
        reply = fence.group(1)
    return json.loads(reply)


def _parse_bool(reply: str) -> bool:
    token = reply.strip().strip(".").strip().lower()
    if token in {"true", "yes"}:
        return True
    if token in {"false", "no"}:
        return False
    raise UnparseableResponse(f"expected true/false, got {reply[:60]!r}")


def filter_relevance(
    doc: NormalizedDocument,
    client: ModelClient,
    *,
    budget: int = DEFAULT_CHAR_BUDGET,
    report: ExtractionReport | None = None,
) -> bool:
    prompt = prompts.render("filter", document=focus_text(doc.text, budget))
    for _ in range(2):
        try:
            return _parse_bool(client.complete(prompt, "boolean"))
        except UnparseableResponse:
            continue
    msg = f"relevance filter reply unparseable twice for {doc.doc_id}; treating as relevant"
    (report or ExtractionReport()).warn(msg)
    return True


def _backfill_description(text: str, name: str) -> str:
    """The sentence following the first sentence that mentions ``name``."""
    sentences = _SENTENCE_END_RE.split(text)
    needle = name.lower()
    for i, sentence in enumerate(sentences):
        if needle in sentence.lower():
            return sentences[i + 1].strip() if i + 1 < len(sentences) else ""
    return ""


def _validate_element(item: Any, doc_id: str) -> ExtractionRecord:
    if not isinstance(item, dict):
        raise ValueError("element is not an object")
    name, task = item.get("dataset_name"), item.get("task_description")
    if not isinstance(name, str) or not isinstance(task, str):
        raise ValueError("dataset_name and task_description must be strings")
    kws = item.get("task_keywords", [])
    if kws is None:
        kws = []
    if not isinstance(kws, list) or not all(isinstance(k, str) for k in kws):
        raise ValueError("task_keywords must be a list of strings")
    desc = item.get("dataset_description", "") or ""
    if not isinstance(desc, str):
        raise ValueError("dataset_description must be a string")
    return ExtractionRecord(
        dataset_name=" ".join(name.split()),
        task_description=" ".join(task.split()),
        source_doc_id=doc_id,
        task_keywords=tuple(kws),
        dataset_description=" ".join(desc.split()),
    )


def analyze(
    doc: NormalizedDocument,
    client: ModelClient,
    *,
    budget: int = DEFAULT_CHAR_BUDGET,
    report: ExtractionReport | None = None,
) -> list[ExtractionRecord]:
    report = report if report is not None else ExtractionReport()
    prompt = prompts.render("analyst", document=focus_text(doc.text, budget))
    data: Any = None
    for _ in range(2):
        try:
            data = _parse_json(client.complete(prompt, "json_records"))
            break
        except json.JSONDecodeError:
            continue
    else:
        raise NoValidRecords(f"analyst reply for {doc.doc_id} is not JSON")
    if isinstance(data, dict) and isinstance(data.get("records"), list):
        data = data["records"]
    if not isinstance(data, list):
        raise NoValidRecords(f"analyst reply for {doc.doc_id} is not a JSON array")

    records: list[ExtractionRecord] = []
    seen: set[tuple[str, str]] = set()
    for i, item in enumerate(data):
        try:
            rec = _validate_element(item, doc.doc_id)
        except ValueError as exc:
            report.dropped.append(f"{doc.doc_id}[{i}]: {exc}")
            logger.warning("dropping analyst element %s[%d]: %s", doc.doc_id, i, exc)
            continue
        key = (rec.dataset_name, rec.task_description)
        if key in seen:
            continue
        seen.add(key)
        if not rec.dataset_description:
            rec = replace(rec, dataset_description=_backfill_description(doc.text, rec.dataset_name))
        records.append(rec)
    if data and not records:
        raise NoValidRecords(f"all {len(data)} analyst elements for {doc.doc_id} were invalid")
    return records


def enrich(
    record: ExtractionRecord, client: ModelClient, *, report: ExtractionReport | None = None
) -> ExtractionRecord:
    prompt = prompts.render("enrich", document=record.task_description)
    try:
        data = _parse_json(client.complete(prompt, "keyword_list"))
    except ModelUnavailable as exc:
        (report or ExtractionReport()).warn(f"enrichment unavailable, keeping keywords: {exc}")
        return record
    except json.JSONDecodeError:
        (report or ExtractionReport()).warn("enrichment reply is not JSON, keeping keywords")
        return record
    if not isinstance(data, list):
        (report or ExtractionReport()).warn("enrichment reply is not a list, keeping keywords")
        return record
    new = [k for k in data if isinstance(k, str)]
    return replace(record, task_keywords=merge_keywords(record.task_keywords, new))


def extraction_cache_key(doc: NormalizedDocument, client: ModelClient) -> str:
    """Digest of document fingerprint, prompt-template version and model identity."""
    h = hashlib.sha256()
    for part in (doc.fingerprint, prompts.templates_hash(), client.identity):
        h.update(part.encode("utf-8"))
        h.update(b"\0")
    return h.hexdigest()


def extract_pipeline(
    doc: NormalizedDocument,
    client: ModelClient,
    cache: ArtifactCache | None = None,
    *,
    budget: int = DEFAULT_CHAR_BUDGET,
    report: ExtractionReport | None = None,
) -> list[ExtractionRecord]:
    """filter -> analyze -> enrich for one document, memoized per content."""
    report = report if report is not None else ExtractionReport()
    key = extraction_cache_key(doc, client)
    if cache is not None:
        hit = cache.get(key, "extraction")
        if isinstance(hit, dict) and isinstance(hit.get("records"), list):
            try:
                # cached records keep their own doc id; rebind to this document
                recs = [ExtractionRecord.from_dict({**r, "source_doc_id": doc.doc_id}) for r in hit["records"]]
            except (KeyError, TypeError, ValueError) as exc:
                report.warn(f"ignoring malformed extraction cache entry for {doc.doc_id}: {exc}")
            else:
                report.cache_hits += 1
                return recs

    if not filter_relevance(doc, client, budget=budget, report=report):
        report.filtered_out += 1
        records: list[ExtractionRecord] = []
    else:
        try:
            records = analyze(doc, client, budget=budget, report=report)
        except NoValidRecords as exc:
            report.warn(f"no valid records for {doc.doc_id}: {exc}")
            return []
        before = len(report.warnings)
        records = [enrich(r, client, report=report) for r in records]
        if len(report.warnings) != before:
            # degraded enrichment is not cached so a later run can complete it
            return records

    if cache is not None:
        cache.put(key, "extraction", {"records": [r.to_dict() for r in records]})
    return records
