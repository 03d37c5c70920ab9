"""Embedding providers, exact cosine vector index and top-k retrieval."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Protocol, Sequence

import httpx
import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyIndex,
    EmptyText,
    FingerprintMismatch,
    MalformedFile,
    ProviderUnavailable,
)
from .kb import KnowledgeFragment
from .text import default_stopwords, tokenize

log = logging.getLogger(__name__)

INDEX_SCHEMA = "primod.index/v1"
DEFAULT_K = 7
DEFAULT_DIMENSION = 256
TIE_DECIMALS = 12


class Embedder(Protocol):
    dimension: int | None

    @property
    def fingerprint(self) -> str: ...

    def embed(self, text: str) -> np.ndarray: ...


class HashingEmbedder:
    """Offline, deterministic hashed bag-of-words embedder.

    Each non-stopword token ``t`` (UTF-8 encoded) adds ``sign`` to bucket
    ``bucket`` where::

        bucket = int.from_bytes(sha256(t)[:8], "big") % dimension
        sign   = +1 if sha256(b"sign:" + t)[0] is even else -1

    The accumulated vector is L2-normalized. Text made only of stopwords
    yields the zero vector.
    """

    def __init__(self, dimension: int = DEFAULT_DIMENSION, stopwords: frozenset[str] | None = None):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.stopwords = default_stopwords() if stopwords is None else frozenset(stopwords)

    @property
    def fingerprint(self) -> str:
        sw = hashlib.sha256("\n".join(sorted(self.stopwords)).encode()).hexdigest()[:12]
        return f"offline-hash-v1:dim={self.dimension}:stopwords={sw}"

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmptyText("cannot embed empty text")
        vec = np.zeros(self.dimension, dtype=np.float64)
        for tok in tokenize(text):
            if tok in self.stopwords:
                continue
            raw = tok.encode("utf-8")
            bucket = int.from_bytes(hashlib.sha256(raw).digest()[:8], "big") % self.dimension
            sign = 1.0 if hashlib.sha256(b"sign:" + raw).digest()[0] % 2 == 0 else -1.0
            vec[bucket] += sign
        norm = float(np.linalg.norm(vec))
        if norm > 0:
            vec /= norm
        return vec


class RemoteEmbedder:
    """HTTP embedder: POST ``{"model": ..., "input": text}``, read a numeric array.

    ``field_path`` is a dotted path into the response JSON; integer segments
    index into lists (``"data.0.embedding"``).
    """

    def __init__(
        self,
        endpoint: str | None = None,
        model: str = "all-MiniLM-L6-v2",
        field_path: str = "embedding",
        timeout: float = 60.0,
        dimension: int | None = None,
    ):
        self.endpoint = endpoint or os.environ.get("PRIMOD_EMBED_ENDPOINT", "")
        if not self.endpoint:
            raise ProviderUnavailable("no embedding endpoint configured (set PRIMOD_EMBED_ENDPOINT)")
        self.model = model
        self.field_path = field_path
        self.timeout = timeout
        self.dimension = dimension

    @property
    def fingerprint(self) -> str:
        return f"remote:{self.model}@{self.endpoint}"

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmptyText("cannot embed empty text")
        try:
            resp = httpx.post(
                self.endpoint, json={"model": self.model, "input": text}, timeout=self.timeout
            )
            resp.raise_for_status()
            payload = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise ProviderUnavailable(f"embedding endpoint {self.endpoint}: {exc}") from exc
        value = extract_field(payload, self.field_path)
        if not isinstance(value, list) or not value:
            raise ProviderUnavailable(f"no numeric array at {self.field_path!r} in embedding response")
        vec = np.asarray(value, dtype=np.float64)
        if vec.ndim != 1 or not np.all(np.isfinite(vec)):
            raise ProviderUnavailable("embedding response is not a finite 1-D vector")
        if self.dimension is None:
            self.dimension = len(vec)
        elif len(vec) != self.dimension:
            raise DimensionMismatch(f"embedder returned {len(vec)} components, expected {self.dimension}")
        return vec


def extract_field(payload: Any, path: str) -> Any:
    cur = payload
    for part in path.split(".") if path else []:
        if isinstance(cur, list):
            try:
                cur = cur[int(part)]
            except (ValueError, IndexError):
                return None
        elif isinstance(cur, dict):
            cur = cur.get(part)
        else:
            return None
    return cur


# --------------------------------------------------------------------------- #
# index
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class ScoredFragment:
    fragment: KnowledgeFragment
    similarity: float


@dataclass(frozen=True, eq=False)
class VectorIndex:
    dimension: int
    fragments: tuple[KnowledgeFragment, ...]
    vectors: np.ndarray
    embedder_fingerprint: str

    def __post_init__(self) -> None:
        self.vectors.setflags(write=False)

    def __len__(self) -> int:
        return len(self.fragments)

    @property
    def kb_fingerprint(self) -> str:
        return fragments_fingerprint(self.fragments)

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.embedder_fingerprint.encode())
        h.update(self.kb_fingerprint.encode())
        return h.hexdigest()[:16]

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": INDEX_SCHEMA,
            "dimension": self.dimension,
            "embedder_fingerprint": self.embedder_fingerprint,
            "kb_fingerprint": self.kb_fingerprint,
            "entries": [
                {"fragment": f.to_dict(), "vector": v.tolist()}
                for f, v in zip(self.fragments, self.vectors)
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False) + "\n"

    def save(self, path: str | Path) -> None:
        from .pipeline import atomic_write_text

        atomic_write_text(Path(path), self.dumps())

    @classmethod
    def load(cls, path: str | Path, expected_fingerprint: str | None = None) -> "VectorIndex":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise MalformedFile(f"{path}: index file not found") from None
        except json.JSONDecodeError as exc:
            raise MalformedFile(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(data, dict) or data.get("schema") != INDEX_SCHEMA:
            raise MalformedFile(f"{path}: not a {INDEX_SCHEMA} file")
        fragments = tuple(KnowledgeFragment.from_dict(e["fragment"]) for e in data["entries"])
        vectors = np.asarray([e["vector"] for e in data["entries"]], dtype=np.float64)
        index = cls(
            dimension=int(data["dimension"]),
            fragments=fragments,
            vectors=vectors.reshape(len(fragments), int(data["dimension"])),
            embedder_fingerprint=data["embedder_fingerprint"],
        )
        if data.get("kb_fingerprint") != index.kb_fingerprint:
            raise MalformedFile(f"{path}: fragment content does not match its recorded fingerprint")
        if expected_fingerprint is not None and index.embedder_fingerprint != expected_fingerprint:
            raise FingerprintMismatch(
                f"index was built with {index.embedder_fingerprint!r}, "
                f"configured embedder is {expected_fingerprint!r}"
            )
        return index


def fragments_fingerprint(fragments: Sequence[KnowledgeFragment]) -> str:
    h = hashlib.sha256()
    for f in fragments:
        h.update(json.dumps(f.to_dict(), sort_keys=True, ensure_ascii=False).encode())
        h.update(b"\n")
    return h.hexdigest()[:16]


def build_index(
    fragments: Sequence[KnowledgeFragment], embedder: Embedder, max_workers: int = 1
) -> VectorIndex:
    if not fragments:
        raise EmptyIndex("cannot build an index from zero fragments")
    texts = [f.text for f in fragments]
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            vectors = list(pool.map(embedder.embed, texts))
    else:
        vectors = [embedder.embed(t) for t in texts]
    dims = {len(v) for v in vectors}
    if len(dims) != 1:
        raise DimensionMismatch(f"embedder produced mixed dimensions {sorted(dims)}")
    dim = dims.pop()
    return VectorIndex(
        dimension=dim,
        fragments=tuple(fragments),
        vectors=np.vstack(vectors),
        embedder_fingerprint=embedder.fingerprint,
    )


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; 0.0 when either vector is zero."""
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return max(-1.0, min(1.0, float(np.dot(a, b)) / (na * nb)))


def top_k(index: VectorIndex, query: np.ndarray, k: int = DEFAULT_K) -> list[ScoredFragment]:
    """Exact top-k by cosine similarity; ties go to the smaller fragment_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (index.dimension,):
        raise DimensionMismatch(f"query has shape {query.shape}, index dimension is {index.dimension}")
    qn = float(np.linalg.norm(query))
    norms = np.linalg.norm(index.vectors, axis=1)
    if qn == 0.0:
        sims = np.zeros(len(index))
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            sims = np.where(norms > 0, (index.vectors @ query) / (norms * qn), 0.0)
        sims = np.clip(sims, -1.0, 1.0)
    # Mathematically equal scores can differ in the last ulp depending on the
    # summation order, so rank on a rounded key to make ties deterministic.
    keys = np.round(sims, TIE_DECIMALS)
    order = sorted(range(len(index)), key=lambda i: (-keys[i], index.fragments[i].fragment_id))
    return [ScoredFragment(index.fragments[i], float(sims[i])) for i in order[:k]]


def make_embedder(kind: str, **kwargs: Any) -> Embedder:
    if kind == "offline":
        return HashingEmbedder(dimension=kwargs.get("dimension") or DEFAULT_DIMENSION)
    if kind == "remote":
        return RemoteEmbedder(
            endpoint=kwargs.get("endpoint"),
            model=kwargs.get("model") or "all-MiniLM-L6-v2",
            field_path=kwargs.get("field_path") or "embedding",
        )
    raise ValueError(f"unknown embedder {kind!r} (expected 'offline' or 'remote')")
