"""Dense text embeddings and an exact cosine index over them."""

from __future__ import annotations

import abc
import hashlib
import json
import os
import struct
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._io import atomic_write_bytes
from .errors import DimensionMismatch, EmptyIndex, ProviderUnavailable, ZeroVector

VEC_MAGIC = b"TDSVEC01"
# scores are rounded so that ranking does not depend on BLAS summation order
SCORE_DECIMALS = 12
_HEADER = struct.Struct("<8sIQ")


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    values: np.ndarray
    norm: float = field(init=False)

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=np.float32).reshape(-1)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "norm", float(np.linalg.norm(values.astype(np.float64))))

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def __eq__(self, other: object) -> bool:
        return isinstance(other, EmbeddingVector) and np.array_equal(self.values, other.values)

    def __hash__(self) -> int:
        return hash(self.values.tobytes())


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dim != b.dim:
        raise DimensionMismatch(f"{a.dim} != {b.dim}")
    if a.norm == 0.0 or b.norm == 0.0:
        raise ZeroVector("cosine of a zero vector is undefined")
    dot = float(np.dot(a.values.astype(np.float64), b.values.astype(np.float64)))
    return max(-1.0, min(1.0, dot / (a.norm * b.norm)))


# ---------------------------------------------------------------------------
# Providers


class EmbeddingProvider(abc.ABC):
    identity: str = "abstract"
    dim: int

    def __init__(self) -> None:
        self.calls = 0

    @abc.abstractmethod
    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]: ...


class HashingEmbedder(EmbeddingProvider):
    """Offline embedder: signed feature hashing of character 3-grams.

    Texts are lowercased and whitespace-collapsed first, so strings that share
    most of their trigrams land close together.
    """

    def __init__(self, dim: int = 64, seed: int = 0) -> None:
        super().__init__()
        self.dim = dim
        self.seed = seed
        self.identity = f"stub/hash3-d{dim}-s{seed}"
        self._salt = seed.to_bytes(8, "little", signed=True)

    def _one(self, text: str) -> EmbeddingVector:
        t = " " + " ".join(text.lower().split()) + " "
        acc = np.zeros(self.dim, dtype=np.float64)
        for i in range(len(t) - 2):
            digest = hashlib.blake2b(t[i : i + 3].encode("utf-8"), digest_size=8, key=self._salt).digest()
            h = int.from_bytes(digest, "little")
            acc[h % self.dim] += 1.0 if (h >> 63) & 1 else -1.0
        n = np.linalg.norm(acc)
        return EmbeddingVector(acc / n if n else acc)

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        self.calls += 1
        return [self._one(t) for t in texts]


class HTTPEmbeddingProvider(EmbeddingProvider):
    """Batched client for OpenAI-style ``POST /embeddings`` endpoints.

    Request ``{"model": ..., "input": [texts]}``; response
    ``{"data": [{"index": i, "embedding": [...]}, ...]}``.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        dim: int,
        *,
        api_key_env: str = "OPENAI_API_KEY",
        batch_size: int = 128,
        timeout: float = 60.0,
        retries: int = 2,
    ) -> None:
        super().__init__()
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.dim = dim
        self.api_key_env = api_key_env
        self.batch_size = batch_size
        self.timeout = timeout
        self.retries = retries
        self.identity = f"http/{model}-d{dim}"

    def _post(self, batch: Sequence[str]) -> list[list[float]]:
        body = json.dumps({"model": self.model, "input": list(batch)}).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        req = urllib.request.Request(f"{self.base_url}/embeddings", data=body, headers=headers, method="POST")
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    data = json.loads(resp.read().decode("utf-8"))["data"]
                rows = sorted(data, key=lambda r: r.get("index", 0))
                if len(rows) != len(batch):
                    raise ValueError(f"expected {len(batch)} embeddings, got {len(rows)}")
                return [r["embedding"] for r in rows]
            except (urllib.error.URLError, TimeoutError, OSError, KeyError, TypeError, ValueError) as exc:
                last = exc
                if attempt < self.retries:
                    time.sleep(0.5 * 2**attempt)
        raise ProviderUnavailable(f"{self.identity}: {last}") from last

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        out: list[EmbeddingVector] = []
        for start in range(0, len(texts), self.batch_size):
            self.calls += 1
            for row in self._post(texts[start : start + self.batch_size]):
                vec = EmbeddingVector(np.asarray(row))
                if vec.dim != self.dim:
                    raise DimensionMismatch(f"endpoint returned dim {vec.dim}, expected {self.dim}")
                out.append(vec)
        return out


def dataset_text(name: str, description: str) -> str:
    name, description = name.strip(), description.strip()
    return f"{name} {description}" if description else name


def embed_tasks(descriptions: Sequence[str], provider: EmbeddingProvider) -> list[EmbeddingVector]:
    if any(not d.strip() for d in descriptions):
        raise ValueError("task descriptions must be non-empty")
    return provider.embed(list(descriptions)) if descriptions else []


def embed_task(description: str, provider: EmbeddingProvider) -> EmbeddingVector:
    return embed_tasks([description], provider)[0]


def embed_datasets(items: Sequence[tuple[str, str]], provider: EmbeddingProvider) -> list[EmbeddingVector]:
    if any(not name.strip() for name, _ in items):
        raise ValueError("dataset names must be non-empty")
    return provider.embed([dataset_text(n, d) for n, d in items]) if items else []


def embed_dataset(name: str, description: str, provider: EmbeddingProvider) -> EmbeddingVector:
    return embed_datasets([(name, description)], provider)[0]


# ---------------------------------------------------------------------------
# Index


class VectorIndex:
    """Exact cosine search over float32 rows keyed by entity id.

    Ranking ties are broken by ascending id so results are reproducible.
    """

    def __init__(self, kind: str, dim: int) -> None:
        self.kind = kind
        self.dim = dim
        self.ids: list[str] = []
        self._pos: dict[str, int] = {}
        self._rows: list[np.ndarray] = []
        self._matrix = np.zeros((0, dim), dtype=np.float32)
        self._unit: np.ndarray | None = None
        self._rank: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, entity_id: object) -> bool:
        return entity_id in self._pos

    @property
    def matrix(self) -> np.ndarray:
        if self._rows:
            self._matrix = np.vstack([self._matrix, *self._rows])
            self._rows = []
        return self._matrix

    def add(self, entity_id: str, vector: EmbeddingVector) -> None:
        self.add_many([entity_id], [vector])

    def add_many(self, ids: Sequence[str], vectors: Sequence[EmbeddingVector]) -> None:
        if len(ids) != len(vectors):
            raise ValueError("ids and vectors differ in length")
        for entity_id, vec in zip(ids, vectors):
            if vec.dim != self.dim:
                raise DimensionMismatch(f"vector dim {vec.dim} != index dim {self.dim}")
            if entity_id in self._pos or "\n" in entity_id:
                raise ValueError(f"invalid or duplicate id {entity_id!r}")
            self._pos[entity_id] = len(self.ids)
            self.ids.append(entity_id)
            self._rows.append(vec.values.reshape(1, -1))
        self._unit = None
        self._rank = None

    def position(self, entity_id: str) -> int:
        return self._pos[entity_id]

    def vector(self, entity_id: str) -> EmbeddingVector:
        return EmbeddingVector(self.matrix[self._pos[entity_id]])

    def unit_matrix(self) -> np.ndarray:
        if self._unit is None:
            m = self.matrix.astype(np.float64)
            norms = np.linalg.norm(m, axis=1, keepdims=True)
            norms[norms == 0] = 1.0
            self._unit = m / norms
        return self._unit

    def id_rank(self) -> np.ndarray:
        """Position of each row's id in ascending id order."""
        if self._rank is None:
            order = sorted(range(len(self.ids)), key=self.ids.__getitem__)
            rank = np.empty(len(self.ids), dtype=np.int64)
            rank[order] = np.arange(len(self.ids))
            self._rank = rank
        return self._rank

    def scores(self, query: EmbeddingVector) -> np.ndarray:
        if query.dim != self.dim:
            raise DimensionMismatch(f"query dim {query.dim} != index dim {self.dim}")
        if query.norm == 0.0:
            raise ZeroVector("query vector is zero")
        q = query.values.astype(np.float64) / query.norm
        return np.round(self.unit_matrix() @ q, SCORE_DECIMALS)

    def row_scores(self, rows: Sequence[int]) -> np.ndarray:
        """``(len(rows), len(self))`` scores of stored rows against every row."""
        unit = self.unit_matrix()
        return np.round(unit[list(rows)] @ unit.T, SCORE_DECIMALS)

    def top_rows(self, scores: np.ndarray, k: int, exclude: np.ndarray | None = None) -> np.ndarray:
        """Row positions of the ``k`` best scores; ``exclude`` is a boolean row mask."""
        n = scores.shape[0]
        if exclude is not None:
            scores = np.where(exclude, -np.inf, scores)
            n = int(n - exclude.sum())
        k = min(k, n)
        if k <= 0:
            return np.zeros(0, dtype=np.int64)
        if k < scores.shape[0]:
            kth = np.partition(scores, scores.shape[0] - k)[scores.shape[0] - k]
            cand = np.flatnonzero(scores >= kth)
        else:
            cand = np.arange(scores.shape[0])
        cand = cand[np.isfinite(scores[cand])]
        order = np.lexsort((self.id_rank()[cand], -scores[cand]))
        return cand[order[:k]]

    def search(
        self, query: EmbeddingVector, k: int, *, exclude: np.ndarray | None = None
    ) -> list[tuple[str, float]]:
        if k < 1:
            raise ValueError("k must be >= 1")
        if not self.ids:
            raise EmptyIndex(f"{self.kind} index is empty")
        scores = self.scores(query)
        return [(self.ids[i], float(scores[i])) for i in self.top_rows(scores, k, exclude)]

    # persistence -----------------------------------------------------------

    def save(self, directory: Path | str) -> None:
        directory = Path(directory)
        m = np.ascontiguousarray(self.matrix, dtype="<f4")
        atomic_write_bytes(
            directory / f"index.{self.kind}.vec",
            _HEADER.pack(VEC_MAGIC, self.dim, len(self.ids)) + m.tobytes(),
        )
        atomic_write_bytes(
            directory / f"index.{self.kind}.ids",
            "".join(f"{i}\n" for i in self.ids).encode("utf-8"),
        )

    @classmethod
    def load(cls, directory: Path | str, kind: str, dim: int | None = None) -> "VectorIndex":
        directory = Path(directory)
        raw = (directory / f"index.{kind}.vec").read_bytes()
        magic, file_dim, count = _HEADER.unpack_from(raw)
        if magic != VEC_MAGIC:
            raise ValueError(f"bad magic in index.{kind}.vec")
        if dim is not None and file_dim != dim:
            raise DimensionMismatch(f"index.{kind}.vec has dim {file_dim}, expected {dim}")
        body = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
        if body.size != file_dim * count:
            raise ValueError(f"index.{kind}.vec is truncated")
        ids = (directory / f"index.{kind}.ids").read_text(encoding="utf-8").splitlines()
        if len(ids) != count:
            raise ValueError(f"index.{kind}.ids has {len(ids)} ids for {count} rows")
        index = cls(kind, file_dim)
        index.ids = ids
        index._pos = {i: n for n, i in enumerate(ids)}
        if len(index._pos) != count:
            raise ValueError(f"index.{kind}.ids contains duplicates")
        index._matrix = body.reshape(count, file_dim).astype(np.float32)
        return index


def index_search(index: VectorIndex, query: EmbeddingVector, k: int) -> list[tuple[str, float]]:
    return index.search(query, k)


def build_index(kind: str, ids: Iterable[str], vectors: Iterable[EmbeddingVector], dim: int) -> VectorIndex:
    index = VectorIndex(kind, dim)
    index.add_many(list(ids), list(vectors))
    return index
