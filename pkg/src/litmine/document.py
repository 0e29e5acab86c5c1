"""Canonical in-memory form of a parsed publication.

A document is the unit every downstream stage consumes: an ordered list of
text chunks plus structured tables, figure records and page image references.
Everything here is plain data; validation turns untrusted JSON into frozen
dataclasses and refuses anything that would break an invariant downstream
code relies on.
"""
from __future__ import annotations

import json
import math
import re
import sys
from dataclasses import dataclass
from typing import Any


class DocumentError(Exception):
    """Base class for document validation failures.

    Carries ``path``, a dotted/indexed locator into the offending JSON
    (for example ``figures[1].structured.series[0].points[2]``).
    """

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class MissingField(DocumentError):
    """A required key is absent or empty."""


class InvalidField(DocumentError):
    """A key is present but its value is malformed."""


class BadReference(DocumentError):
    """An id or page number points at nothing in this document."""


class DuplicateId(DocumentError):
    """An identifier that must be unique appears twice."""


CAPTION_SOURCES = ("extracted", "generated")
AXIS_SCALES = ("linear", "log")


@dataclass(frozen=True)
class Chunk:
    """One contiguous span of body text."""

    chunk_index: int
    text: str
    page_number: int = 1
    section_hint: str | None = None


@dataclass(frozen=True)
class PageImageRef:
    """Pointer to a rendered page image; the engine never reopens the file."""

    page_number: int
    uri: str


@dataclass(frozen=True)
class AxisSpec:
    label: str
    unit: str | None = None
    scale: str = "linear"


@dataclass(frozen=True)
class SeriesSpec:
    name: str
    points: tuple[tuple[Any, float], ...]


@dataclass(frozen=True)
class FigureJson:
    """Structured reading of a scientific figure: axes, legend, data series."""

    axes: tuple[AxisSpec, ...]
    legend: tuple[str, ...]
    series: tuple[SeriesSpec, ...]


@dataclass(frozen=True)
class FigureRecord:
    figure_id: str
    page_number: int
    caption: str
    caption_source: str
    is_scientific: bool
    structured: FigureJson | None = None


@dataclass(frozen=True)
class TableBlock:
    table_id: str
    page_number: int
    caption: str
    cells: tuple[tuple[str, ...], ...]
    header_rows: int = 0


@dataclass(frozen=True)
class Document:
    """Immutable validated document. Build via :func:`validate_document`."""

    doc_id: str
    chunks: tuple[Chunk, ...]
    tables: tuple[TableBlock, ...]
    figures: tuple[FigureRecord, ...]
    page_images: tuple[PageImageRef, ...]
    title: str | None = None
    source_uri: str = ""

    @property
    def full_text(self) -> str:
        return "".join(c.text for c in self.chunks)


def _need(obj: dict, key: str, path: str) -> Any:
    if key not in obj or obj[key] is None:
        raise MissingField(f"{path}.{key}" if path else key, "required field missing")
    return obj[key]


def _need_str(obj: dict, key: str, path: str, allow_empty: bool = False) -> str:
    value = _need(obj, key, path)
    loc = f"{path}.{key}" if path else key
    if not isinstance(value, str):
        raise InvalidField(loc, f"expected string, got {type(value).__name__}")
    if not allow_empty and not value.strip():
        raise MissingField(loc, "string is empty")
    return value


def _need_int(obj: dict, key: str, path: str, minimum: int | None = None) -> int:
    value = _need(obj, key, path)
    loc = f"{path}.{key}" if path else key
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvalidField(loc, f"expected integer, got {type(value).__name__}")
    if minimum is not None and value < minimum:
        raise InvalidField(loc, f"must be >= {minimum}, got {value}")
    return value


def _need_list(obj: dict, key: str, path: str) -> list:
    value = _need(obj, key, path)
    loc = f"{path}.{key}" if path else key
    if not isinstance(value, list):
        raise InvalidField(loc, f"expected list, got {type(value).__name__}")
    return value


def _opt_str(obj: dict, key: str, path: str) -> str | None:
    value = obj.get(key)
    if value is None:
        return None
    if not isinstance(value, str):
        raise InvalidField(f"{path}.{key}" if path else key, "expected string")
    return value


def _validate_chunk(raw: Any, i: int) -> Chunk:
    path = f"chunks[{i}]"
    if not isinstance(raw, dict):
        raise InvalidField(path, "expected object")
    idx = _need_int(raw, "chunk_index", path, minimum=0)
    text = _need_str(raw, "text", path)
    page = raw.get("page_number", 1)
    if isinstance(page, bool) or not isinstance(page, int) or page < 1:
        raise InvalidField(f"{path}.page_number", "expected integer >= 1")
    return Chunk(
        chunk_index=idx,
        text=text,
        page_number=page,
        section_hint=_opt_str(raw, "section_hint", path),
    )


def _validate_table(raw: Any, i: int) -> TableBlock:
    path = f"tables[{i}]"
    if not isinstance(raw, dict):
        raise InvalidField(path, "expected object")
    table_id = sys.intern(_need_str(raw, "table_id", path))
    page = _need_int(raw, "page_number", path, minimum=1)
    caption = raw.get("caption", "")
    if not isinstance(caption, str):
        raise InvalidField(f"{path}.caption", "expected string")
    rows = _need_list(raw, "cells", path)
    if not rows:
        raise InvalidField(f"{path}.cells", "table has no rows")
    width = 0
    parsed_rows: list[list[str]] = []
    for r, row in enumerate(rows):
        if not isinstance(row, list):
            raise InvalidField(f"{path}.cells[{r}]", "expected list of cells")
        cells = []
        for c, cell in enumerate(row):
            if not isinstance(cell, str):
                raise InvalidField(f"{path}.cells[{r}][{c}]", "expected string cell")
            cells.append(cell)
        width = max(width, len(cells))
        parsed_rows.append(cells)
    # ragged rows are padded on the right so every row has equal width
    padded = tuple(tuple(row + [""] * (width - len(row))) for row in parsed_rows)
    header_rows = raw.get("header_rows", 0)
    if isinstance(header_rows, bool) or not isinstance(header_rows, int) or header_rows < 0:
        raise InvalidField(f"{path}.header_rows", "expected integer >= 0")
    if header_rows > len(padded):
        raise InvalidField(f"{path}.header_rows", "exceeds row count")
    return TableBlock(table_id, page, caption, padded, header_rows)


def _validate_points(raw: Any, path: str) -> tuple[tuple[Any, float], ...]:
    if not isinstance(raw, list):
        raise InvalidField(path, "expected list of points")
    points = []
    for i, pt in enumerate(raw):
        loc = f"{path}[{i}]"
        if not isinstance(pt, list) or len(pt) != 2:
            raise InvalidField(loc, "expected [x, y] pair")
        x, y = pt
        if isinstance(x, bool) or not isinstance(x, (int, float, str)):
            raise InvalidField(loc, "x must be a number or a category label")
        if isinstance(y, bool) or not isinstance(y, (int, float)):
            raise InvalidField(loc, "y must be a number")
        y = float(y)
        if not math.isfinite(y):
            raise InvalidField(loc, "y must be finite")
        points.append((float(x) if isinstance(x, (int, float)) else x, y))
    return tuple(points)


def _validate_figure_json(raw: Any, path: str) -> FigureJson:
    if not isinstance(raw, dict):
        raise InvalidField(path, "expected object")
    axes = []
    for i, ax in enumerate(raw.get("axes", [])):
        loc = f"{path}.axes[{i}]"
        if not isinstance(ax, dict):
            raise InvalidField(loc, "expected object")
        label = _need_str(ax, "label", loc, allow_empty=True)
        scale = ax.get("scale", "linear")
        if scale not in AXIS_SCALES:
            raise InvalidField(f"{loc}.scale", f"expected one of {AXIS_SCALES}")
        axes.append(AxisSpec(label=label, unit=_opt_str(ax, "unit", loc), scale=scale))
    legend = raw.get("legend", [])
    if not isinstance(legend, list) or any(not isinstance(s, str) for s in legend):
        raise InvalidField(f"{path}.legend", "expected list of strings")
    series = []
    for i, s in enumerate(raw.get("series", [])):
        loc = f"{path}.series[{i}]"
        if not isinstance(s, dict):
            raise InvalidField(loc, "expected object")
        name = _need_str(s, "name", loc, allow_empty=True)
        points = _validate_points(s.get("points", []), f"{loc}.points")
        series.append(SeriesSpec(name=name, points=points))
    return FigureJson(axes=tuple(axes), legend=tuple(legend), series=tuple(series))


def _validate_figure(raw: Any, i: int) -> FigureRecord:
    path = f"figures[{i}]"
    if not isinstance(raw, dict):
        raise InvalidField(path, "expected object")
    figure_id = sys.intern(_need_str(raw, "figure_id", path))
    page = _need_int(raw, "page_number", path, minimum=1)
    caption = raw.get("caption", "")
    if not isinstance(caption, str):
        raise InvalidField(f"{path}.caption", "expected string")
    caption_source = raw.get("caption_source", "extracted")
    if caption_source not in CAPTION_SOURCES:
        raise InvalidField(f"{path}.caption_source", f"expected one of {CAPTION_SOURCES}")
    is_scientific = raw.get("is_scientific")
    if not isinstance(is_scientific, bool):
        raise InvalidField(f"{path}.is_scientific", "expected boolean")
    structured = None
    if raw.get("structured") is not None:
        if not is_scientific:
            raise InvalidField(
                f"{path}.structured", "structured data only allowed on scientific figures"
            )
        structured = _validate_figure_json(raw["structured"], f"{path}.structured")
    return FigureRecord(figure_id, page, caption, caption_source, is_scientific, structured)


def validate_document(raw: dict | str | bytes) -> Document:
    """Validate untrusted document JSON and return a frozen Document.

    Accepts a parsed dict or a JSON string/bytes. Raises a DocumentError
    subclass naming the first violation found; never returns a partially
    valid object.
    """
    if isinstance(raw, (str, bytes)):
        raw = json.loads(raw)
    if not isinstance(raw, dict):
        raise InvalidField("$", "document must be a JSON object")

    doc_id = sys.intern(_need_str(raw, "doc_id", ""))

    chunks = [_validate_chunk(c, i) for i, c in enumerate(_need_list(raw, "chunks", ""))]
    seen_idx: set[int] = set()
    for i, chunk in enumerate(chunks):
        if chunk.chunk_index in seen_idx:
            raise DuplicateId(f"chunks[{i}].chunk_index", f"index {chunk.chunk_index} repeats")
        seen_idx.add(chunk.chunk_index)
    for i, chunk in enumerate(chunks):
        if chunk.chunk_index != i:
            raise InvalidField(
                f"chunks[{i}].chunk_index",
                f"indices must be contiguous from 0 in list order, got {chunk.chunk_index}",
            )

    tables = [_validate_table(t, i) for i, t in enumerate(_need_list(raw, "tables", ""))]
    seen_ids: set[str] = set()
    for i, table in enumerate(tables):
        if table.table_id in seen_ids:
            raise DuplicateId(f"tables[{i}].table_id", f"id {table.table_id!r} repeats")
        seen_ids.add(table.table_id)

    figures = [_validate_figure(f, i) for i, f in enumerate(_need_list(raw, "figures", ""))]
    seen_ids = set()
    for i, fig in enumerate(figures):
        if fig.figure_id in seen_ids:
            raise DuplicateId(f"figures[{i}].figure_id", f"id {fig.figure_id!r} repeats")
        seen_ids.add(fig.figure_id)

    page_images = []
    seen_pages: set[int] = set()
    for i, raw_ref in enumerate(_need_list(raw, "page_images", "")):
        path = f"page_images[{i}]"
        if not isinstance(raw_ref, dict):
            raise InvalidField(path, "expected object")
        page = _need_int(raw_ref, "page_number", path, minimum=1)
        uri = _need_str(raw_ref, "uri", path)
        if page in seen_pages:
            raise DuplicateId(f"{path}.page_number", f"page {page} has two images")
        seen_pages.add(page)
        page_images.append(PageImageRef(page, uri))

    known_pages = seen_pages | {c.page_number for c in chunks}
    if not known_pages:
        known_pages = {1}
    for i, table in enumerate(tables):
        if table.page_number not in known_pages:
            raise BadReference(f"tables[{i}].page_number", f"page {table.page_number} not in document")
    for i, fig in enumerate(figures):
        if fig.page_number not in known_pages:
            raise BadReference(f"figures[{i}].page_number", f"page {fig.page_number} not in document")

    title = _opt_str(raw, "title", "")
    source_uri = raw.get("source_uri", "")
    if not isinstance(source_uri, str):
        raise InvalidField("source_uri", "expected string")

    return Document(
        doc_id=doc_id,
        chunks=tuple(chunks),
        tables=tuple(tables),
        figures=tuple(figures),
        page_images=tuple(page_images),
        title=title,
        source_uri=source_uri,
    )


def document_to_dict(doc: Document) -> dict:
    """Serialize back to the JSON wire shape. Optional fields are omitted
    when unset so validate/serialize round-trips are stable."""
    out: dict[str, Any] = {"doc_id": doc.doc_id}
    if doc.title is not None:
        out["title"] = doc.title
    if doc.source_uri:
        out["source_uri"] = doc.source_uri
    out["chunks"] = [
        {
            "chunk_index": c.chunk_index,
            "text": c.text,
            "page_number": c.page_number,
            **({"section_hint": c.section_hint} if c.section_hint is not None else {}),
        }
        for c in doc.chunks
    ]
    out["tables"] = [
        {
            "table_id": t.table_id,
            "page_number": t.page_number,
            "caption": t.caption,
            "cells": [list(row) for row in t.cells],
            "header_rows": t.header_rows,
        }
        for t in doc.tables
    ]
    out["figures"] = []
    for f in doc.figures:
        fig: dict[str, Any] = {
            "figure_id": f.figure_id,
            "page_number": f.page_number,
            "caption": f.caption,
            "caption_source": f.caption_source,
            "is_scientific": f.is_scientific,
        }
        if f.structured is not None:
            fig["structured"] = {
                "axes": [
                    {
                        "label": a.label,
                        **({"unit": a.unit} if a.unit is not None else {}),
                        "scale": a.scale,
                    }
                    for a in f.structured.axes
                ],
                "legend": list(f.structured.legend),
                "series": [
                    {"name": s.name, "points": [[x, y] for x, y in s.points]}
                    for s in f.structured.series
                ],
            }
        out["figures"].append(fig)
    out["page_images"] = [
        {"page_number": p.page_number, "uri": p.uri} for p in doc.page_images
    ]
    return out


_PARAGRAPH_BREAK = re.compile(r"\n[ \t]*\n")
_SENTENCE_END = re.compile(r"[.!?][)\]\"']*\s+")


def _pick_split(text: str, lo: int, hi: int) -> int:
    """Best split position in (lo, hi]: latest paragraph break, else latest
    sentence end, else hi. Positions are indices where the next chunk starts."""
    best_para = -1
    for m in _PARAGRAPH_BREAK.finditer(text, max(0, lo - 200), hi):
        end = m.end()
        if lo < end <= hi:
            best_para = max(best_para, end)
    if best_para > 0:
        return best_para
    best_sent = -1
    for m in _SENTENCE_END.finditer(text, max(0, lo - 400), hi):
        end = m.end()
        if lo < end <= hi:
            best_sent = max(best_sent, end)
    if best_sent > 0:
        return best_sent
    return hi


def chunk_text(
    full_text: str, max_chars: int = 1600, overlap_chars: int = 200
) -> list[Chunk]:
    """Split running text into overlapping chunks.

    Boundary preference inside each window: paragraph break (blank line),
    then sentence end, then a hard cut at the window edge. Consecutive
    chunks share exactly ``overlap_chars`` characters, so the original
    string is ``chunks[0].text + "".join(c.text[overlap_chars:] for c in
    chunks[1:])``. Empty input produces no chunks.
    """
    if overlap_chars < 0:
        raise ValueError("overlap_chars must be >= 0")
    if max_chars <= overlap_chars:
        raise ValueError("max_chars must exceed overlap_chars")
    if not full_text:
        return []

    pieces: list[str] = []
    start = 0
    n = len(full_text)
    while True:
        if n - start <= max_chars:
            pieces.append(full_text[start:])
            break
        window_end = start + max_chars
        # the next start is end - overlap, and it must advance past `start`
        end = _pick_split(full_text, start + overlap_chars, window_end)
        pieces.append(full_text[start:end])
        start = end - overlap_chars

    return [Chunk(chunk_index=i, text=piece, page_number=1) for i, piece in enumerate(pieces)]
