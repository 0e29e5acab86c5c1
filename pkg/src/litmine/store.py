"""Evidence store: embeds chunk, table and figure surrogates and answers
exact top-k cosine queries over them.

Retrieval is brute-force on purpose. Corpora here are a few thousand
entries per run, a dense matmul over unit vectors is exact, fast enough,
and has no recall parameter to tune or get wrong.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from typing import Any, Callable, Iterable

import numpy as np

from .document import Document, FigureRecord, TableBlock


class StoreError(Exception):
    pass


class EmptyText(StoreError):
    """Embedding input had no usable text."""


class ServiceUnavailable(StoreError):
    """Remote embedding backend kept failing after retries."""


class DuplicateEntryId(StoreError):
    """An entry id was indexed twice."""


class IoFailure(StoreError):
    """Persistence could not read or write the store file."""


class FormatVersionMismatch(StoreError):
    """Persisted store was written by an incompatible format version."""


FORMAT_VERSION = 1
_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


def _tokens(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def _bucket(token: str, dim: int) -> int:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % dim


class HashedBagEmbedder:
    """Deterministic bag-of-tokens embedder for tests and offline runs.

    Tokens are lowercased alphanumeric runs, hashed with SHA-256 into a
    fixed number of buckets, counted and L2-normalized. Identical text
    always embeds identically, across processes and platforms.
    """

    kind = "hashed_bag"

    def __init__(self, dim: int = 256):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        if not isinstance(text, str) or not text.strip():
            raise EmptyText("cannot embed empty text")
        counts = np.zeros(self.dim, dtype=np.float64)
        for token in _tokens(text):
            counts[_bucket(token, self.dim)] += 1.0
        norm = float(np.linalg.norm(counts))
        if norm == 0.0:
            raise EmptyText("text contains no alphanumeric tokens")
        return counts / norm

    def config(self) -> dict:
        return {"kind": self.kind, "dim": self.dim}


class HttpEmbedder:
    """Client for a remote embedding service speaking a small JSON contract.

    POSTs ``{"texts": [...]}`` and expects ``{"vectors": [[...], ...]}``.
    Transient failures (connection errors, 5xx, 429) are retried with
    exponential backoff before giving up with ServiceUnavailable.
    """

    kind = "http"

    def __init__(
        self,
        endpoint: str,
        dim: int,
        api_key: str | None = None,
        session: Any | None = None,
        retries: int = 3,
        backoff_base: float = 0.2,
        sleep_fn: Callable[[float], None] | None = None,
        timeout: float = 30.0,
    ):
        import requests

        self.endpoint = endpoint
        self.dim = dim
        self.api_key = api_key
        self.session = session if session is not None else requests.Session()
        self.retries = retries
        self.backoff_base = backoff_base
        self.sleep_fn = sleep_fn if sleep_fn is not None else __import__("time").sleep
        self.timeout = timeout

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def embed(self, text: str) -> np.ndarray:
        if not isinstance(text, str) or not text.strip():
            raise EmptyText("cannot embed empty text")
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                self.sleep_fn(self.backoff_base * (2 ** (attempt - 1)))
            try:
                resp = self.session.post(
                    self.endpoint,
                    json={"texts": [text]},
                    headers=self._headers(),
                    timeout=self.timeout,
                )
            except Exception as exc:  # connection reset, DNS, timeout
                last_error = exc
                continue
            if resp.status_code in (429,) or resp.status_code >= 500:
                last_error = StoreError(f"backend returned {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise ServiceUnavailable(f"backend returned {resp.status_code}")
            payload = resp.json()
            vectors = payload.get("vectors")
            if not vectors or len(vectors[0]) != self.dim:
                raise ServiceUnavailable("backend returned malformed vectors")
            vec = np.asarray(vectors[0], dtype=np.float64)
            norm = float(np.linalg.norm(vec))
            if norm == 0.0:
                raise ServiceUnavailable("backend returned a zero vector")
            return vec / norm
        raise ServiceUnavailable(f"embedding failed after {self.retries + 1} attempts: {last_error}")

    def config(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "endpoint": self.endpoint}


MODALITIES = ("text", "table", "figure")


@dataclass(frozen=True)
class StoreEntry:
    """One retrievable evidence item: original locator plus the text
    surrogate that was embedded."""

    entry_id: str
    doc_id: str
    modality: str
    ref: Any
    text_surrogate: str
    vector: tuple[float, ...]


@dataclass(frozen=True)
class QueryResult:
    entry_id: str
    doc_id: str
    modality: str
    ref: Any
    score: float


def linearize_table(table: TableBlock) -> str:
    """Row-wise text surrogate: caption first, then one line per row with
    header rows prefixed distinctly."""
    lines = []
    if table.caption:
        lines.append(table.caption)
    for i, row in enumerate(table.cells):
        prefix = "header" if i < table.header_rows else "row"
        lines.append(f"{prefix}: " + " | ".join(row))
    return "\n".join(lines)


def linearize_figure(figure: FigureRecord) -> str:
    """Caption plus a compact rendering of the structured reading when
    one exists (axes, legend, per-series point count and y-range)."""
    lines = [figure.caption] if figure.caption else []
    if figure.structured is not None:
        for axis in figure.structured.axes:
            unit = axis.unit if axis.unit else "unitless"
            lines.append(f"axis: {axis.label} ({unit}, {axis.scale})")
        if figure.structured.legend:
            lines.append("legend: " + ", ".join(figure.structured.legend))
        for series in figure.structured.series:
            ys = [y for _, y in series.points]
            if ys:
                lines.append(
                    f"series: {series.name} ({len(ys)} points, y {min(ys):g} to {max(ys):g})"
                )
            else:
                lines.append(f"series: {series.name} (0 points)")
    return "\n".join(lines)


def build_entries(doc: Document, embedder) -> list[StoreEntry]:
    """Turn a validated document into store entries, one per chunk, table
    and figure. Items whose surrogate has no embeddable text are skipped."""
    entries: list[StoreEntry] = []

    def _add(entry_id: str, modality: str, ref: Any, surrogate: str) -> None:
        try:
            vec = embedder.embed(surrogate)
        except EmptyText:
            return
        entries.append(
            StoreEntry(
                entry_id=entry_id,
                doc_id=doc.doc_id,
                modality=modality,
                ref=ref,
                text_surrogate=surrogate,
                vector=tuple(float(x) for x in vec),
            )
        )

    for chunk in doc.chunks:
        _add(f"{doc.doc_id}/chunk/{chunk.chunk_index}", "text", chunk.chunk_index, chunk.text)
    for table in doc.tables:
        _add(f"{doc.doc_id}/table/{table.table_id}", "table", table.table_id, linearize_table(table))
    for figure in doc.figures:
        _add(
            f"{doc.doc_id}/figure/{figure.figure_id}",
            "figure",
            figure.figure_id,
            linearize_figure(figure),
        )
    return entries


class VectorStore:
    """Exact cosine retrieval over unit-normalized entry vectors."""

    def __init__(self, embedder):
        self.embedder = embedder
        self.entries: list[StoreEntry] = []
        self._by_id: dict[str, StoreEntry] = {}
        self._matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def index(self, entries: Iterable[StoreEntry]) -> int:
        """Add entries; rejects duplicate ids and wrong-sized vectors.
        Returns the number added."""
        added = 0
        staged: list[StoreEntry] = []
        staged_ids: set[str] = set()
        for entry in entries:
            if entry.entry_id in self._by_id or entry.entry_id in staged_ids:
                raise DuplicateEntryId(entry.entry_id)
            if len(entry.vector) != self.embedder.dim:
                raise StoreError(
                    f"{entry.entry_id}: vector has dimension {len(entry.vector)}, "
                    f"store expects {self.embedder.dim}"
                )
            norm = float(np.linalg.norm(entry.vector))
            if abs(norm - 1.0) > 1e-9:
                raise StoreError(f"{entry.entry_id}: vector is not unit-normalized")
            staged.append(entry)
            staged_ids.add(entry.entry_id)
        for entry in staged:
            self.entries.append(entry)
            self._by_id[entry.entry_id] = entry
            added += 1
        if added:
            self._matrix = None
        return added

    def index_document(self, doc: Document) -> int:
        return self.index(build_entries(doc, self.embedder))

    def get_entry(self, entry_id: str) -> StoreEntry:
        try:
            return self._by_id[entry_id]
        except KeyError:
            raise KeyError(f"no entry {entry_id!r} in store") from None

    def doc_ids(self) -> list[str]:
        return sorted({e.doc_id for e in self.entries})

    def _ensure_matrix(self) -> np.ndarray:
        if self._matrix is None:
            if self.entries:
                self._matrix = np.array([e.vector for e in self.entries], dtype=np.float64)
            else:
                self._matrix = np.zeros((0, self.embedder.dim), dtype=np.float64)
        return self._matrix

    def query(
        self, text: str, k: int = 5, filter: dict | None = None
    ) -> list[QueryResult]:
        """Top-k entries by cosine score, ties broken by ascending entry id.

        ``filter`` may restrict by ``doc_id`` and/or ``modality``. Returns
        exactly min(k, matching entries) results.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        query_vec = self.embedder.embed(text)
        matrix = self._ensure_matrix()
        if filter:
            unknown = set(filter) - {"doc_id", "modality"}
            if unknown:
                raise ValueError(f"unsupported filter keys: {sorted(unknown)}")
            mask = np.ones(len(self.entries), dtype=bool)
            if "doc_id" in filter:
                mask &= np.array([e.doc_id == filter["doc_id"] for e in self.entries])
            if "modality" in filter:
                mask &= np.array([e.modality == filter["modality"] for e in self.entries])
            idx = np.nonzero(mask)[0]
        else:
            idx = np.arange(len(self.entries))
        if idx.size == 0:
            return []
        scores = matrix[idx] @ query_vec
        order = sorted(range(idx.size), key=lambda i: (-scores[i], self.entries[idx[i]].entry_id))
        results = []
        for i in order[: min(k, idx.size)]:
            entry = self.entries[idx[i]]
            score = min(1.0, max(-1.0, float(scores[i])))
            results.append(
                QueryResult(
                    entry_id=entry.entry_id,
                    doc_id=entry.doc_id,
                    modality=entry.modality,
                    ref=entry.ref,
                    score=score,
                )
            )
        return results

    def persist(self, path: str) -> None:
        """Write the store to a versioned JSON file."""
        payload = {
            "format_version": FORMAT_VERSION,
            "embedder": self.embedder.config(),
            "entries": [
                {
                    "entry_id": e.entry_id,
                    "doc_id": e.doc_id,
                    "modality": e.modality,
                    "ref": e.ref,
                    "text_surrogate": e.text_surrogate,
                    "vector": list(e.vector),
                }
                for e in self.entries
            ],
        }
        try:
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, sort_keys=True)
                fh.write("\n")
        except OSError as exc:
            raise IoFailure(f"cannot write store to {path}: {exc}") from exc

    @classmethod
    def load(cls, path: str, embedder=None) -> "VectorStore":
        """Load a persisted store. The hashed embedder is reconstructed from
        the file; remote embedders must be supplied and must match the
        recorded config."""
        try:
            with open(path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
        except OSError as exc:
            raise IoFailure(f"cannot read store from {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise IoFailure(f"store file {path} is not valid JSON: {exc}") from exc
        version = payload.get("format_version")
        if version != FORMAT_VERSION:
            raise FormatVersionMismatch(
                f"store file has format_version {version!r}, this build reads {FORMAT_VERSION}"
            )
        config = payload.get("embedder", {})
        if embedder is None:
            if config.get("kind") == HashedBagEmbedder.kind:
                embedder = HashedBagEmbedder(dim=int(config.get("dim", 256)))
            else:
                raise StoreError(
                    f"store was built with embedder kind {config.get('kind')!r}; "
                    "pass a matching embedder to load()"
                )
        elif getattr(embedder, "kind", None) != config.get("kind") or getattr(
            embedder, "dim", None
        ) != config.get("dim"):
            raise StoreError("supplied embedder does not match the persisted config")
        store = cls(embedder)
        store.index(
            StoreEntry(
                entry_id=e["entry_id"],
                doc_id=e["doc_id"],
                modality=e["modality"],
                ref=e["ref"],
                text_surrogate=e["text_surrogate"],
                vector=tuple(float(x) for x in e["vector"]),
            )
            for e in payload.get("entries", [])
        )
        return store
