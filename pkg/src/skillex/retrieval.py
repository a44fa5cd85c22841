"""Dense exact-search indices over demonstration / definition / KB evidence."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from .corpus import TaggedSentence

SNAPSHOT_VERSION = 1
NORM_TOL = 1e-6


class RetrievalError(Exception):
    pass


class DimensionMismatch(RetrievalError):
    pass


class DuplicateId(RetrievalError):
    pass


class EmbedderFailure(RetrievalError):
    pass


class Source(str, Enum):
    DEMO = "demo"
    DEFINITION = "definition"
    KB = "kb"


def normalize(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("cannot normalize zero vector")
    return v / n


@dataclass(frozen=True)
class RetrievalDoc:
    id: str
    source: Source
    text: str
    embedding: np.ndarray
    payload: Optional[Union[TaggedSentence, str]] = None

    def __post_init__(self):
        if self.source == Source.DEMO and not isinstance(self.payload, TaggedSentence):
            raise ValueError(f"doc {self.id}: demo docs need a TaggedSentence payload")
        if abs(float(np.linalg.norm(self.embedding)) - 1.0) > NORM_TOL:
            raise ValueError(f"doc {self.id}: embedding is not L2-normalized")


@dataclass
class RetrievalConfig:
    k_per_source: Dict[Source, int] = field(default_factory=dict)
    gate_weights: Dict[Source, float] = field(default_factory=dict)
    min_similarity: float = -1.0

    def enabled_sources(self):
        return [
            s
            for s in Source
            if self.k_per_source.get(s, 0) > 0 and self.gate_weights.get(s, 0.0) > 0.0
        ]

    def validate(self):
        enabled = self.enabled_sources()
        if enabled:
            total = sum(self.gate_weights[s] for s in enabled)
            if abs(total - 1.0) > 1e-6:
                raise ValueError(f"gate weights over enabled sources sum to {total}, not 1")
        if not (-1.0 <= self.min_similarity <= 1.0):
            raise ValueError(f"min_similarity {self.min_similarity} outside [-1, 1]")


def similarity(q: np.ndarray, d: np.ndarray) -> float:
    """Cosine similarity of two normalized vectors (plain inner product)."""
    q = np.asarray(q, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if q.shape != d.shape:
        raise DimensionMismatch(f"dims {q.shape} vs {d.shape}")
    return float(np.dot(q, d))


class Index:
    """Immutable exact-search index; linear scan per source."""

    def __init__(self, docs: List[RetrievalDoc]):
        ids = set()
        dim = None
        for doc in docs:
            if doc.id in ids:
                raise DuplicateId(doc.id)
            ids.add(doc.id)
            d = int(np.asarray(doc.embedding).shape[0])
            if dim is None:
                dim = d
            elif d != dim:
                raise DimensionMismatch(f"doc {doc.id}: dim {d}, index dim {dim}")
        self.dim = dim
        self._by_source: Dict[Source, Tuple[List[RetrievalDoc], np.ndarray]] = {}
        for source in Source:
            group = [d for d in docs if d.source == source]
            matrix = (
                np.stack([np.asarray(d.embedding, dtype=np.float64) for d in group])
                if group
                else np.zeros((0, dim or 0))
            )
            self._by_source[source] = (group, matrix)

    def counts(self) -> Dict[Source, int]:
        return {s: len(docs) for s, (docs, _) in self._by_source.items()}

    def __len__(self):
        return sum(self.counts().values())

    def top_k(self, source: Source, query: np.ndarray, k: int, min_similarity: float = -1.0):
        """Top-k docs of one source by cosine similarity, ties broken by id."""
        docs, matrix = self._by_source[source]
        if k <= 0 or not docs:
            return []
        scores = matrix @ np.asarray(query, dtype=np.float64)
        ranked = sorted(
            (
                (float(s), doc)
                for s, doc in zip(scores, docs)
                if float(s) >= min_similarity
            ),
            key=lambda t: (-t[0], t[1].id),
        )
        return [(doc, score) for score, doc in ranked[:k]]


def build_index(docs: List[RetrievalDoc]) -> Index:
    return Index(docs)


def retrieve(
    index: Index,
    query_text: str,
    embedder: "Embedder",
    config: RetrievalConfig,
):
    """Gated multi-source retrieval.

    Returns (doc, score, effective_weight) triples ordered by
    weight * score descending, ties broken by doc id.
    """
    config.validate()
    enabled = config.enabled_sources()
    if not enabled:
        return []
    try:
        q = embedder.embed(query_text)
    except EmbedderFailure:
        raise
    except Exception as exc:
        raise EmbedderFailure(str(exc)) from exc
    if index.dim is not None and np.asarray(q).shape[0] != index.dim:
        raise DimensionMismatch(
            f"query dim {np.asarray(q).shape[0]} vs index dim {index.dim}"
        )
    results = []
    for source in enabled:
        weight = config.gate_weights[source]
        for doc, score in index.top_k(
            source, q, config.k_per_source[source], config.min_similarity
        ):
            results.append((doc, score, weight))
    results.sort(key=lambda t: (-(t[2] * t[1]), t[0].id))
    return results


# --- Embedders ---------------------------------------------------------------

class Embedder:
    """Anything mapping text to a fixed-dimension normalized vector."""

    dim: int

    def embed(self, text: str) -> np.ndarray:
        raise NotImplementedError


class HashEmbedder(Embedder):
    """Deterministic offline pseudo-embedder: hashed token features, then
    L2 normalization. Shared tokens give shared feature mass, which is all
    the retrieval tests need."""

    def __init__(self, dim: int = 64):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim

    def _feature(self, token: str) -> Tuple[int, float]:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        idx = int.from_bytes(digest[:4], "big") % self.dim
        sign = 1.0 if digest[4] % 2 == 0 else -1.0
        return idx, sign

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise EmbedderFailure("empty text")
        v = np.zeros(self.dim)
        for token in text.lower().split():
            idx, sign = self._feature(token)
            v[idx] += sign
        if not v.any():
            v[0] = 1.0
        return normalize(v)


class HttpEmbedder(Embedder):
    """Client for an embeddings endpoint speaking the common JSON protocol
    ({"model", "input"} in, {"data": [{"embedding": [...]}]} out)."""

    def __init__(self, base_url: str, model: str, dim: int, api_key_env: str = "EMBEDDER_API_KEY", timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.dim = dim
        self.api_key_env = api_key_env
        self.timeout = timeout

    def embed(self, text: str) -> np.ndarray:
        import requests

        headers = {}
        token = os.environ.get(self.api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        try:
            resp = requests.post(
                f"{self.base_url}/embeddings",
                json={"model": self.model, "input": text},
                headers=headers,
                timeout=self.timeout,
            )
            resp.raise_for_status()
            values = resp.json()["data"][0]["embedding"]
        except Exception as exc:
            raise EmbedderFailure(str(exc)) from exc
        v = np.asarray(values, dtype=np.float64)
        if v.shape[0] != self.dim:
            raise EmbedderFailure(f"endpoint returned dim {v.shape[0]}, expected {self.dim}")
        return normalize(v)


# --- Persistence -------------------------------------------------------------

def _doc_to_record(doc: RetrievalDoc) -> dict:
    rec = {
        "id": doc.id,
        "source": doc.source.value,
        "text": doc.text,
        "embedding": [float(x) for x in np.asarray(doc.embedding)],
    }
    if isinstance(doc.payload, TaggedSentence):
        rec["payload"] = {
            "tokens": doc.payload.words,
            "tags": doc.payload.tag_strings,
            "source_id": doc.payload.source_id,
        }
    elif doc.payload is not None:
        rec["payload"] = doc.payload
    return rec


def _record_to_doc(rec: dict) -> RetrievalDoc:
    payload = rec.get("payload")
    if isinstance(payload, dict):
        payload = TaggedSentence.from_strings(
            payload["tokens"], payload["tags"], payload.get("source_id", "")
        )
    return RetrievalDoc(
        id=rec["id"],
        source=Source(rec["source"]),
        text=rec["text"],
        embedding=np.asarray(rec["embedding"], dtype=np.float64),
        payload=payload,
    )


def save_snapshot(docs: List[RetrievalDoc], path: Union[str, Path]):
    """Write a versioned JSONL snapshot (header line + one doc per line)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format_version": SNAPSHOT_VERSION}) + "\n")
        for doc in docs:
            fh.write(json.dumps(_doc_to_record(doc), ensure_ascii=False) + "\n")


def load_snapshot(path: Union[str, Path]) -> List[RetrievalDoc]:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        version = header.get("format_version")
        if version != SNAPSHOT_VERSION:
            raise RetrievalError(f"unsupported snapshot version {version!r}")
        return [_record_to_doc(json.loads(line)) for line in fh if line.strip()]


def load_definitions(path: Union[str, Path], embedder: Embedder, source: Source = Source.DEFINITION):
    """Load a definitions/KB JSONL dump with `id`, `label`, `text` fields."""
    docs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            text = f"{rec['label']}: {rec['text']}"
            docs.append(
                RetrievalDoc(
                    id=rec["id"],
                    source=source,
                    text=text,
                    embedding=embedder.embed(text),
                    payload=rec["text"],
                )
            )
    return docs


def demos_from_corpus(corpus: List[TaggedSentence], embedder: Embedder):
    return [
        RetrievalDoc(
            id=sent.source_id or f"demo:{i}",
            source=Source.DEMO,
            text=sent.text,
            embedding=embedder.embed(sent.text),
            payload=sent,
        )
        for i, sent in enumerate(corpus)
    ]
