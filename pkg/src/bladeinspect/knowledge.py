"""Maintenance-procedure knowledge base and exact top-1 semantic retrieval."""
from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np
import requests

from .text import tokenize

LEXICAL_DIM = 384


class KnowledgeError(ValueError):
    pass


class EmbeddingError(RuntimeError):
    pass


class RetrievalError(ValueError):
    pass


@dataclass(frozen=True)
class ProcedureRecord:
    procedure_id: str
    class_tags: frozenset[str]
    title: str
    body: str
    source: str = ""

    def __post_init__(self):
        if not self.procedure_id:
            raise KnowledgeError("procedure id is empty")
        if not self.class_tags:
            raise KnowledgeError(f"procedure {self.procedure_id} has no class tags")
        if not self.body.strip():
            raise KnowledgeError(f"procedure {self.procedure_id} has an empty body")
        object.__setattr__(self, "class_tags", frozenset(self.class_tags))

    @property
    def text(self) -> str:
        """The string that gets embedded: title, newline, body."""
        return f"{self.title}\n{self.body}"

    def to_dict(self) -> dict:
        return {
            "id": self.procedure_id,
            "classes": sorted(self.class_tags),
            "title": self.title,
            "body": self.body,
            "source": self.source,
        }


class KnowledgeBase:
    """Ordered, id-unique collection of procedure records."""

    def __init__(self, records: Iterable[ProcedureRecord]):
        self.records: tuple[ProcedureRecord, ...] = tuple(records)
        self._by_id: dict[str, ProcedureRecord] = {}
        for r in self.records:
            if r.procedure_id in self._by_id:
                raise KnowledgeError(f"duplicate procedure id {r.procedure_id!r}")
            self._by_id[r.procedure_id] = r

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __contains__(self, procedure_id: object) -> bool:
        return procedure_id in self._by_id

    def get(self, procedure_id: str) -> ProcedureRecord:
        return self._by_id[procedure_id]

    def for_class(self, class_label: str) -> list[ProcedureRecord]:
        return [r for r in self.records if class_label in r.class_tags]


def parse_kb(document: str | list) -> KnowledgeBase:
    if isinstance(document, str):
        document = json.loads(document)
    if not isinstance(document, list):
        raise KnowledgeError("knowledge base must be a JSON array of procedure objects")
    records = []
    for k, item in enumerate(document):
        try:
            records.append(
                ProcedureRecord(
                    procedure_id=str(item["id"]),
                    class_tags=frozenset(item["classes"]),
                    title=str(item.get("title", "")),
                    body=str(item["body"]),
                    source=str(item.get("source", "")),
                )
            )
        except (KeyError, TypeError) as exc:
            raise KnowledgeError(f"procedure entry {k} is malformed: {exc!r}") from None
    return KnowledgeBase(records)


def load_kb(path: str | Path) -> KnowledgeBase:
    return parse_kb(Path(path).read_text(encoding="utf-8"))


def bundled_kb() -> KnowledgeBase:
    """The 42-procedure fixture knowledge base shipped with the package."""
    text = resources.files("bladeinspect").joinpath("assets/knowledge_base.json").read_text(encoding="utf-8")
    return parse_kb(text)


# --------------------------------------------------------------------------
# embedding providers


class EmbeddingProvider(Protocol):
    embedder_id: str

    def embed(self, text: str) -> np.ndarray: ...


def l2_normalize(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    return vec if norm == 0.0 else vec / norm


def is_unit(vec: np.ndarray, tol: float = 1e-9) -> bool:
    return abs(float(np.linalg.norm(vec)) - 1.0) <= tol


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b)) / (na * nb)


class LexicalEmbedder:
    """Hashed bag-of-words, L2-normalized. Deterministic across processes."""

    def __init__(self, dimension: int = LEXICAL_DIM):
        self.dimension = dimension
        self.embedder_id = f"lexical-bow-{dimension}"

    def _bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big") % self.dimension

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        for tok in tokenize(text):
            vec[self._bucket(tok)] += 1.0
        return l2_normalize(vec)


def lexical_embedder(dimension: int = LEXICAL_DIM) -> LexicalEmbedder:
    return LexicalEmbedder(dimension)


class RemoteEmbedder:
    """Client for an embeddings endpoint speaking ``{input, model} -> {data: [{embedding}]}``."""

    def __init__(self, endpoint_url: str, model: str, api_key_env: str = "PIPELINE_API_KEY",
                 timeout_s: float = 30.0, session: requests.Session | None = None):
        self.endpoint_url = endpoint_url
        self.model = model
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s
        self.embedder_id = f"remote:{model}"
        self._session = session or requests.Session()
        self._lock = threading.Lock()

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            with self._lock:
                resp = self._session.post(
                    self.endpoint_url,
                    json={"input": list(texts), "model": self.model},
                    headers=headers,
                    timeout=self.timeout_s,
                )
            resp.raise_for_status()
            data = resp.json()["data"]
            vectors = [np.asarray(item["embedding"], dtype=np.float64) for item in data]
        except (requests.RequestException, KeyError, TypeError, ValueError) as exc:
            raise EmbeddingError(f"embedding request to {self.endpoint_url} failed: {exc}") from exc
        if len(vectors) != len(texts):
            raise EmbeddingError(f"endpoint returned {len(vectors)} embeddings for {len(texts)} inputs")
        return [l2_normalize(v) for v in vectors]

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]


# --------------------------------------------------------------------------
# index and retrieval


@dataclass(frozen=True)
class VectorIndex:
    procedure_ids: tuple[str, ...]
    matrix: np.ndarray = field(repr=False)
    dimension: int
    embedder_id: str

    def __len__(self) -> int:
        return len(self.procedure_ids)

    def embedding(self, procedure_id: str) -> np.ndarray:
        return self.matrix[self.procedure_ids.index(procedure_id)]


@dataclass(frozen=True)
class Retrieval:
    record_id: str
    score: float


def build_index(records: Sequence[ProcedureRecord] | KnowledgeBase, provider: EmbeddingProvider) -> VectorIndex:
    records = list(records)
    if not records:
        raise KnowledgeError("cannot index an empty knowledge base")
    ids = [r.procedure_id for r in records]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise KnowledgeError(f"duplicate procedure ids: {dupes}")

    vectors = []
    batch = getattr(provider, "embed_many", None)
    if batch is not None:
        try:
            vectors = batch([r.text for r in records])
        except EmbeddingError as exc:
            raise EmbeddingError(f"embedding failed for records {ids[0]}..{ids[-1]}: {exc}") from exc
    else:
        for r in records:
            try:
                vectors.append(provider.embed(r.text))
            except Exception as exc:
                raise EmbeddingError(f"embedding failed for record {r.procedure_id}: {exc}") from exc

    matrix = np.vstack([np.asarray(v, dtype=np.float64) for v in vectors])
    matrix.setflags(write=False)
    return VectorIndex(tuple(ids), matrix, matrix.shape[1], provider.embedder_id)


def retrieve_top1(query: str, index: VectorIndex, provider: EmbeddingProvider) -> Retrieval:
    """Exact cosine scan; ties go to the lexicographically smallest id."""
    if not query or not query.strip():
        raise RetrievalError("empty retrieval query")
    if len(index) == 0:
        raise RetrievalError("empty index")
    if provider.embedder_id != index.embedder_id:
        raise RetrievalError(
            f"provider {provider.embedder_id!r} does not match index embedder {index.embedder_id!r}"
        )
    q = np.asarray(provider.embed(query), dtype=np.float64)
    q_norm = float(np.linalg.norm(q))
    if q_norm == 0.0:
        raise RetrievalError(f"query {query!r} embeds to the zero vector")
    norms = np.linalg.norm(index.matrix, axis=1)
    dots = index.matrix @ q
    scores = np.where(norms > 0, dots / np.where(norms > 0, norms, 1.0) / q_norm, 0.0)
    best = min(range(len(index)), key=lambda i: (-scores[i], index.procedure_ids[i]))
    return Retrieval(index.procedure_ids[best], float(np.clip(scores[best], -1.0, 1.0)))


class Retriever:
    """Class-label -> procedure lookup with a per-query cache."""

    def __init__(self, kb: KnowledgeBase, provider: EmbeddingProvider, index: VectorIndex | None = None,
                 query_template: str = "{class_label}"):
        self.kb = kb
        self.provider = provider
        self.index = index if index is not None else build_index(kb, provider)
        self.query_template = query_template
        self._cache: dict[str, Retrieval] = {}
        self._lock = threading.Lock()

    def check(self) -> None:
        if self.provider.embedder_id != self.index.embedder_id:
            raise RetrievalError(
                f"provider {self.provider.embedder_id!r} does not match index embedder {self.index.embedder_id!r}"
            )

    def lookup(self, class_label: str) -> tuple[ProcedureRecord, Retrieval]:
        query = self.query_template.format(class_label=class_label)
        with self._lock:
            hit = self._cache.get(query)
        if hit is None:
            hit = retrieve_top1(query, self.index, self.provider)
            with self._lock:
                self._cache[query] = hit
        return self.kb.get(hit.record_id), hit
