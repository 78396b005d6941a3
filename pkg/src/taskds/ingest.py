"""Document normalization, content fingerprints, the processed-file manifest
and the content-addressed artifact cache."""

from __future__ import annotations

import hashlib
import io
import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Literal

from ._io import atomic_write_bytes, atomic_write_json, dumps_canonical, read_json
from .errors import CorruptCacheEntry, EmptyDocument, TaskDSError, UndecodableInput

logger = logging.getLogger(__name__)

FormatHint = Literal["plain_text", "pdf_text"]
CacheStage = Literal["normalized_text", "extraction"]
CACHE_STAGES: tuple[str, ...] = ("normalized_text", "extraction")
CORPUS_SUFFIXES = {".txt": "plain_text", ".pdf": "pdf_text"}

_WS_RE = re.compile(r"\s+")
_HEX64_RE = re.compile(r"^[0-9a-f]{64}$")


@dataclass(frozen=True)
class NormalizedDocument:
    doc_id: str
    title: str
    source_path: str
    text: str
    fingerprint: str


def fingerprint(text: str) -> str:
    """SHA-256 of the UTF-8 encoded text, lowercase hex."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def raw_digest(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def normalize_text(text: str) -> str:
    text = unicodedata.normalize("NFC", text)
    # whitespace controls become separators, the rest are dropped
    text = "".join(
        " " if ch.isspace() else ch
        for ch in text
        if ch.isspace() or unicodedata.category(ch) != "Cc"
    )
    return _WS_RE.sub(" ", text).strip()


def _decode_plain(raw: bytes) -> str:
    if raw.startswith(b"%PDF-"):
        raise UndecodableInput("input looks like a PDF but was declared plain_text")
    try:
        return raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise UndecodableInput(f"not valid UTF-8: {exc}") from exc


def _decode_pdf(raw: bytes) -> str:
    if not raw.lstrip()[:5] == b"%PDF-":
        raise UndecodableInput("missing %PDF- header")
    from pypdf import PdfReader
    from pypdf.errors import PdfReadError

    try:
        reader = PdfReader(io.BytesIO(raw))
        pages = [page.extract_text() or "" for page in reader.pages]
    except (PdfReadError, ValueError, KeyError, TypeError) as exc:
        raise UndecodableInput(f"unreadable PDF: {exc}") from exc
    return "\n".join(pages)


def normalize_document(
    raw: bytes,
    format_hint: FormatHint = "plain_text",
    *,
    doc_id: str | None = None,
    title: str | None = None,
    source_path: str = "",
) -> NormalizedDocument:
    if format_hint == "plain_text":
        decoded = _decode_plain(raw)
    elif format_hint == "pdf_text":
        decoded = _decode_pdf(raw)
    else:
        raise UndecodableInput(f"unknown format hint {format_hint!r}")

    text = normalize_text(decoded)
    if not text:
        raise EmptyDocument(f"no extractable text in {source_path or '<bytes>'}")

    if title is None:
        title = next(
            (normalize_text(line) for line in decoded.splitlines() if normalize_text(line)),
            "",
        )
    fp = fingerprint(text)
    return NormalizedDocument(
        doc_id=doc_id if doc_id is not None else f"doc-{fp[:16]}",
        title=normalize_text(title),
        source_path=source_path,
        text=text,
        fingerprint=fp,
    )


# ---------------------------------------------------------------------------
# Manifest


@dataclass(frozen=True)
class ManifestEntry:
    doc_id: str
    source_path: str
    processed_at: str


@dataclass
class Manifest:
    entries: dict[str, ManifestEntry] = field(default_factory=dict)

    def __contains__(self, fp: object) -> bool:
        return fp in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, doc: NormalizedDocument, processed_at: datetime | str | None = None) -> None:
        """Add a document; an already-known fingerprint keeps its first entry."""
        if doc.fingerprint in self.entries:
            return
        if processed_at is None:
            processed_at = datetime.now(timezone.utc)
        if isinstance(processed_at, datetime):
            processed_at = processed_at.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        self.entries[doc.fingerprint] = ManifestEntry(doc.doc_id, doc.source_path, processed_at)

    def to_dict(self) -> dict[str, Any]:
        return {
            fp: {"doc_id": e.doc_id, "source_path": e.source_path, "processed_at": e.processed_at}
            for fp, e in sorted(self.entries.items())
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Manifest":
        entries = {}
        for fp, e in data.items():
            if not _HEX64_RE.match(fp):
                raise TaskDSError(f"manifest key is not a hex SHA-256 digest: {fp!r}")
            entries[fp] = ManifestEntry(e["doc_id"], e["source_path"], e["processed_at"])
        return cls(entries)

    def save(self, path: Path) -> None:
        atomic_write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: Path) -> "Manifest":
        path = Path(path)
        if not path.exists():
            return cls()
        return cls.from_dict(read_json(path))


def diff_corpus(manifest: Manifest, corpus: Iterable[NormalizedDocument]) -> list[NormalizedDocument]:
    return [doc for doc in corpus if doc.fingerprint not in manifest]


# ---------------------------------------------------------------------------
# Cache


class ArtifactCache:
    """One JSON file per (key, stage) under ``root/<stage>/<2 hex>/<key>``.

    Entries carry a checksum of their payload; anything that fails validation
    is reported and treated as a miss.
    """

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.corrupt_hits = 0

    def path_for(self, key: str, stage: str) -> Path:
        if stage not in CACHE_STAGES:
            raise ValueError(f"unknown cache stage {stage!r}")
        if not _HEX64_RE.match(key):
            raise ValueError(f"cache key must be a hex SHA-256 digest, got {key!r}")
        return self.root / stage / key[:2] / key

    def get(self, key: str, stage: str) -> Any | None:
        path = self.path_for(key, stage)
        try:
            raw = path.read_bytes()
        except FileNotFoundError:
            return None
        try:
            return self._validate(raw, key, stage)
        except CorruptCacheEntry as exc:
            self.corrupt_hits += 1
            logger.warning("ignoring corrupt cache entry %s: %s", path, exc)
            return None

    def put(self, key: str, stage: str, payload: Any) -> None:
        body = dumps_canonical(payload)
        envelope = {
            "key": key,
            "stage": stage,
            "checksum": hashlib.sha256(body.encode("utf-8")).hexdigest(),
            "payload": payload,
        }
        atomic_write_bytes(self.path_for(key, stage), dumps_canonical(envelope).encode("utf-8"))

    @staticmethod
    def _validate(raw: bytes, key: str, stage: str) -> Any:
        try:
            envelope = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptCacheEntry(f"not JSON: {exc}") from exc
        if not isinstance(envelope, dict) or set(envelope) != {"key", "stage", "checksum", "payload"}:
            raise CorruptCacheEntry("unexpected envelope layout")
        if envelope["key"] != key or envelope["stage"] != stage:
            raise CorruptCacheEntry("envelope does not match its location")
        body = dumps_canonical(envelope["payload"])
        if hashlib.sha256(body.encode("utf-8")).hexdigest() != envelope["checksum"]:
            raise CorruptCacheEntry("checksum mismatch")
        return envelope["payload"]


# ---------------------------------------------------------------------------
# Corpus loading


def discover_corpus(paths: Iterable[Path | str]) -> list[tuple[Path, str]]:
    """Expand corpus roots into ``(file, doc_id)`` pairs.

    A directory contributes every ``.txt``/``.pdf`` below it (doc id is the
    relative path without suffix); any other file is read as a listing of
    paths, one per line, relative to the listing's directory.
    """
    found: list[tuple[Path, str]] = []
    for root in map(Path, paths):
        if root.is_dir():
            for p in sorted(root.rglob("*")):
                if p.is_file() and p.suffix.lower() in CORPUS_SUFFIXES:
                    found.append((p, p.relative_to(root).with_suffix("").as_posix()))
        elif root.suffix.lower() in CORPUS_SUFFIXES:
            found.append((root, root.stem))
        elif root.is_file():
            for line in root.read_text(encoding="utf-8").splitlines():
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                p = Path(line)
                if not p.is_absolute():
                    p = root.parent / p
                found.append((p, p.stem))
        else:
            raise FileNotFoundError(root)
    seen: dict[str, Path] = {}
    for p, doc_id in found:
        if doc_id in seen:
            raise TaskDSError(f"duplicate doc id {doc_id!r}: {seen[doc_id]} and {p}")
        seen[doc_id] = p
    return found


def load_document(path: Path, doc_id: str, cache: ArtifactCache | None = None) -> NormalizedDocument:
    """Read and normalize one file, reusing cached text keyed by the raw-bytes digest."""
    raw = Path(path).read_bytes()
    hint = CORPUS_SUFFIXES.get(Path(path).suffix.lower(), "plain_text")
    key = raw_digest(raw)
    if cache is not None:
        hit = cache.get(key, "normalized_text")
        if isinstance(hit, dict) and isinstance(hit.get("text"), str) and hit.get("text"):
            return NormalizedDocument(
                doc_id=doc_id,
                title=hit.get("title", ""),
                source_path=str(path),
                text=hit["text"],
                fingerprint=fingerprint(hit["text"]),
            )
    doc = normalize_document(raw, hint, doc_id=doc_id, source_path=str(path))
    if cache is not None:
        cache.put(key, "normalized_text", {"text": doc.text, "title": doc.title})
    return doc


def load_corpus(
    paths: Iterable[Path | str], cache: ArtifactCache | None = None
) -> tuple[list[NormalizedDocument], list[tuple[str, str]]]:
    """Load every document; returns the documents and ``(path, error)`` rejects.

    Documents whose text duplicates an earlier one are dropped with a warning.
    """
    docs: list[NormalizedDocument] = []
    rejected: list[tuple[str, str]] = []
    seen: set[str] = set()
    for path, doc_id in discover_corpus(paths):
        try:
            doc = load_document(path, doc_id, cache)
        except (UndecodableInput, EmptyDocument) as exc:
            logger.warning("rejected %s: %s", path, exc)
            rejected.append((str(path), f"{type(exc).__name__}: {exc}"))
            continue
        if doc.fingerprint in seen:
            logger.warning("skipping %s: same content as an earlier document", path)
            continue
        seen.add(doc.fingerprint)
        docs.append(doc)
    return docs, rejected
