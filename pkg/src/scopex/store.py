"""Decoupled question/solution methods with cosine-distance retrieval."""

from __future__ import annotations

import json
import string
import threading
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateEmbedding, DimensionMismatch, InvalidInput, NotFound
from .text import content_key, normalize, question_key

ORIGINAL = "original-question"
EXTENDED = "extended-question"

_IGNORABLE = set(string.whitespace) | set(string.punctuation)


def _compact(text: str) -> str:
    return "".join(ch for ch in text.lower() if ch not in _IGNORABLE)


def method_id(question: str, solution: str) -> str:
    return content_key(question, solution)


@dataclass
class Method:
    id: str
    question: str
    solution: str
    steps: list[str]
    embedding: list[float]
    tags: set[str] = field(default_factory=set)
    applicability: set[str] = field(default_factory=set)
    # "authored", "generalized-from:<id>" or "improved-from:<id>"
    origin: str = "authored"

    @property
    def question_id(self) -> str:
        return question_key(self.question)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "question": self.question,
            "solution": self.solution,
            "steps": list(self.steps),
            "embedding": list(self.embedding),
            "tags": sorted(self.tags),
            "applicability": sorted(self.applicability),
            "origin": self.origin,
        }

    @classmethod
    def from_json(cls, data: dict) -> Method:
        return cls(
            id=data["id"],
            question=data["question"],
            solution=data["solution"],
            steps=list(data["steps"]),
            embedding=[float(x) for x in data["embedding"]],
            tags=set(data.get("tags", ())),
            applicability=set(data.get("applicability", ())),
            origin=data.get("origin", "authored"),
        )


@dataclass(frozen=True)
class RetrievalHit:
    method_id: str
    distance: float
    matched_on: str = ORIGINAL


def _as_vector(v: Sequence[float], dim: int | None = None) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise DimensionMismatch(f"embedding must be a flat vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionMismatch(f"expected dimension {dim}, got {arr.shape[0]}")
    return arr


def similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine similarity, clipped to [-1, 1]."""
    va, vb = _as_vector(a), _as_vector(b)
    if va.shape != vb.shape:
        raise DimensionMismatch(f"dimensions differ: {va.shape[0]} vs {vb.shape[0]}")
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0 or nb == 0:
        raise DegenerateEmbedding("zero-norm embedding")
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


def distance(a: Sequence[float], b: Sequence[float]) -> float:
    return 1.0 - similarity(a, b)


def unit(v: Sequence[float], dim: int | None = None) -> list[float]:
    arr = _as_vector(v, dim)
    norm = np.linalg.norm(arr)
    if norm == 0 or not np.isfinite(norm):
        raise DegenerateEmbedding("cannot normalize a zero or non-finite vector")
    return (arr / norm).tolist()


def split_steps(solution: str, steps: Sequence[str] | None) -> list[str]:
    """Validate a step decomposition; ``None`` means the single step [solution]."""
    if not steps:
        return [solution]
    steps = [s for s in steps]
    if any(not s.strip() for s in steps):
        raise InvalidInput("steps must be non-empty")
    if _compact("".join(steps)) != _compact(solution):
        raise InvalidInput("steps do not reconstruct the solution")
    return steps


class MethodStore:
    """In-memory method store with optional line-delimited JSON persistence.

    Writers hold a lock; readers work on a snapshot of the record dict. When
    ``path`` is set, every mutation is appended to the file as one line.
    """

    def __init__(self, gateway=None, dim: int | None = None, path: str | Path | None = None):
        self.gateway = gateway
        self.dim = dim
        self.path = Path(path) if path is not None else None
        self._methods: dict[str, Method] = {}
        self._lock = threading.RLock()

    # -- persistence -------------------------------------------------------

    @classmethod
    def open(cls, path: str | Path, gateway=None, dim: int | None = None) -> MethodStore:
        """Load ``path`` if it exists, then keep appending to it."""
        path = Path(path)
        store = cls.load(path, gateway) if path.exists() else cls(gateway, dim)
        if store.dim is None:
            store.dim = dim
        store.path = path
        return store

    @classmethod
    def load(cls, path: str | Path, gateway=None) -> MethodStore:
        """Read a store file. Repeated ids merge (applicability and tags are unioned),
        so line order does not matter."""
        store = cls(gateway)
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                data = json.loads(line)
                if "dim" in data and "id" not in data:
                    if store.dim is not None and store.dim != data["dim"]:
                        raise DimensionMismatch(f"{path}:{lineno}: conflicting dim header")
                    store.dim = int(data["dim"])
                    continue
                method = Method.from_json(data)
                _as_vector(method.embedding, store.dim)
                prior = store._methods.get(method.id)
                if prior is not None:
                    method.applicability |= prior.applicability
                    method.tags |= prior.tags
                store._methods[method.id] = method
        return store

    def dump(self, path: str | Path) -> None:
        """Write a compacted file: header, then one line per method sorted by id."""
        lines = [json.dumps({"dim": self.dim})]
        lines += [json.dumps(m.to_json()) for m in sorted(self.snapshot(), key=lambda m: m.id)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def _append(self, method: Method) -> None:
        if self.path is None:
            return
        new_file = not self.path.exists() or self.path.stat().st_size == 0
        with open(self.path, "a", encoding="utf-8") as fh:
            if new_file:
                fh.write(json.dumps({"dim": self.dim}) + "\n")
            fh.write(json.dumps(method.to_json()) + "\n")

    # -- mutation ----------------------------------------------------------

    def add_method(
        self,
        question: str,
        solution: str,
        steps: Sequence[str] | None = None,
        *,
        tags: Iterable[str] = (),
        origin: str = "authored",
        embedding: Sequence[float] | None = None,
    ) -> str:
        if not normalize(question) or not normalize(solution):
            raise InvalidInput("question and solution must be non-empty")
        mid = method_id(question, solution)
        with self._lock:
            if mid in self._methods:
                return mid
            step_list = split_steps(solution, steps)
            if embedding is None:
                if self.gateway is None:
                    raise InvalidInput("no gateway configured to embed the question")
                embedding = self.gateway.embed(question)
            if self.dim is None:
                self.dim = len(embedding)
            vec = unit(embedding, self.dim)
            method = Method(mid, question, solution, step_list, vec, set(tags), set(), origin)
            self._methods[mid] = method
            self._append(method)
        return mid

    def record_applicability(self, method_id: str, question_id: str) -> Method:
        with self._lock:
            method = self.get(method_id)
            if question_id not in method.applicability:
                method.applicability.add(question_id)
                self._append(method)
            return method

    # -- queries -----------------------------------------------------------

    def get(self, method_id: str) -> Method:
        try:
            return self._methods[method_id]
        except KeyError:
            raise NotFound(f"unknown method {method_id!r}") from None

    def __contains__(self, method_id: str) -> bool:
        return method_id in self._methods

    def __len__(self) -> int:
        return len(self._methods)

    def snapshot(self) -> list[Method]:
        with self._lock:
            return list(self._methods.values())

    def applicable_to(self, question_id: str) -> set[str]:
        """M(q): ids of methods whose applicability contains ``question_id``."""
        return {m.id for m in self.snapshot() if question_id in m.applicability}

    def embed_query(self, text: str) -> list[float]:
        if self.gateway is None:
            raise InvalidInput("no gateway configured to embed the query")
        return unit(self.gateway.embed(text), self.dim)

    def retrieve_nearest(
        self,
        query: str | Sequence[float],
        k: int = 1,
        max_distance: float | None = None,
        matched_on: str = ORIGINAL,
    ) -> list[RetrievalHit]:
        if k < 1:
            raise InvalidInput("k must be >= 1")
        methods = self.snapshot()
        if not methods:
            return []
        vec = self.embed_query(query) if isinstance(query, str) else unit(query, self.dim)
        matrix = np.asarray([m.embedding for m in methods], dtype=float)
        dists = np.clip(1.0 - matrix @ np.asarray(vec), 0.0, 2.0)
        hits = [
            RetrievalHit(m.id, float(d), matched_on)
            for m, d in zip(methods, dists)
            if max_distance is None or d <= max_distance
        ]
        hits.sort(key=lambda h: (h.distance, h.method_id))
        return hits[:k]
