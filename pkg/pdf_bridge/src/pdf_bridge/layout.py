"""Page layout analysis over interpreted PDF content.

Turns positioned text runs, stroked segments, and placed images into
higher-level regions: lattice tables (from ruled grids), figures (from
raster images), their captions, and the remaining prose in reading
order. Works on one page at a time; coordinates stay in PDF device
space with the origin at the lower left.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .pdfreader import PageContent, PlacedImage, Segment, TextRun

__all__ = [
    "Line",
    "TableRegion",
    "FigureRegion",
    "PageLayout",
    "analyze_page",
]

# Baselines within this distance belong to one visual line.
_LINE_TOL = 2.0
# Grid coordinates within this distance count as the same rule.
_GRID_TOL = 1.0
# Captions must sit within this vertical distance of their region.
_CAPTION_REACH = 48.0

_CAPTION_FIGURE = re.compile(r"^\s*fig(?:ure)?\.?\s*\d+", re.IGNORECASE)
_CAPTION_TABLE = re.compile(r"^\s*table\s*\d+", re.IGNORECASE)
_NUMERICISH = re.compile(r"^[\s$(+-]*\d")


@dataclass(frozen=True)
class Line:
    """One visual text line: joined runs sharing a baseline."""

    x: float
    y: float
    size: float
    text: str


@dataclass
class TableRegion:
    """A ruled table reconstructed from grid strokes."""

    x0: float
    y0: float
    x1: float
    y1: float
    cells: list[list[str]]
    header_rows: int
    caption: str = ""


@dataclass
class FigureRegion:
    """A raster image large enough to be a figure candidate."""

    image: PlacedImage
    x0: float
    y0: float
    x1: float
    y1: float
    caption: str = ""


@dataclass
class PageLayout:
    tables: list[TableRegion] = field(default_factory=list)
    figures: list[FigureRegion] = field(default_factory=list)
    prose: str = ""


def group_lines(runs: list[TextRun]) -> list[Line]:
    """Cluster runs into visual lines, top of page first."""
    ordered = sorted(runs, key=lambda r: (-r.y, r.x))
    lines: list[Line] = []
    bucket: list[TextRun] = []

    def flush() -> None:
        if not bucket:
            return
        bucket.sort(key=lambda r: r.x)
        parts = [bucket[0].text]
        for prev, cur in zip(bucket, bucket[1:]):
            gap = cur.x - (prev.x + 0.5 * prev.size * len(prev.text))
            parts.append(" " if gap > 0.75 * prev.size else "")
            parts.append(cur.text)
        text = "".join(parts).strip()
        if text:
            lines.append(
                Line(
                    x=min(r.x for r in bucket),
                    y=bucket[0].y,
                    size=max(r.size for r in bucket),
                    text=text,
                )
            )
        bucket.clear()

    for run in ordered:
        if bucket and abs(run.y - bucket[0].y) > _LINE_TOL:
            flush()
        bucket.append(run)
    flush()
    return lines


def _cluster(values: list[float], tol: float) -> list[float]:
    """Merge near-equal coordinates into representative values."""
    out: list[float] = []
    for v in sorted(values):
        if out and v - out[-1] <= tol:
            continue
        out.append(v)
    return out


def _connected_grids(
    horiz: list[Segment], vert: list[Segment]
) -> list[tuple[list[Segment], list[Segment]]]:
    """Split rules into connected components; each component with at
    least two rules in both directions is a lattice candidate."""
    rules = [("h", s) for s in horiz] + [("v", s) for s in vert]
    n = len(rules)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i: int, j: int) -> None:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj

    def touches(h: Segment, v: Segment) -> bool:
        y = h.y0
        x = v.x0
        return (
            min(h.x0, h.x1) - _GRID_TOL <= x <= max(h.x0, h.x1) + _GRID_TOL
            and min(v.y0, v.y1) - _GRID_TOL <= y <= max(v.y0, v.y1) + _GRID_TOL
        )

    for i, (kind_i, seg_i) in enumerate(rules):
        for j in range(i + 1, n):
            kind_j, seg_j = rules[j]
            if kind_i == kind_j:
                continue
            h, v = (seg_i, seg_j) if kind_i == "h" else (seg_j, seg_i)
            if touches(h, v):
                union(i, j)

    groups: dict[int, tuple[list[Segment], list[Segment]]] = {}
    for i, (kind, seg) in enumerate(rules):
        root = find(i)
        hs, vs = groups.setdefault(root, ([], []))
        (hs if kind == "h" else vs).append(seg)
    return [(hs, vs) for hs, vs in groups.values() if len(hs) >= 2 and len(vs) >= 2]


def detect_tables(segments: list[Segment], runs: list[TextRun]) -> tuple[list[TableRegion], set[int]]:
    """Find ruled tables. Returns regions plus the indexes of runs
    consumed as cell text."""
    horiz = [
        s for s in segments
        if abs(s.y0 - s.y1) <= 0.5 and abs(s.x1 - s.x0) > 4.0
    ]
    vert = [
        s for s in segments
        if abs(s.x0 - s.x1) <= 0.5 and abs(s.y1 - s.y0) > 4.0
    ]
    regions: list[TableRegion] = []
    consumed: set[int] = set()
    for hs, vs in _connected_grids(horiz, vert):
        ys = _cluster([h.y0 for h in hs], _GRID_TOL)
        xs = _cluster([v.x0 for v in vs], _GRID_TOL)
        if len(ys) < 2 or len(xs) < 2:
            continue
        # Row bands run top to bottom; ys is ascending.
        bands = list(zip(ys, ys[1:]))[::-1]
        cols = list(zip(xs, xs[1:]))
        grid_runs: dict[tuple[int, int], list[TextRun]] = {}
        for idx, run in enumerate(runs):
            if not (xs[0] - _GRID_TOL <= run.x <= xs[-1] + _GRID_TOL):
                continue
            if not (ys[0] - _GRID_TOL <= run.y <= ys[-1] + _GRID_TOL):
                continue
            row = next((i for i, (lo, hi) in enumerate(bands) if lo <= run.y < hi), None)
            col = next((i for i, (lo, hi) in enumerate(cols) if lo <= run.x < hi), None)
            if row is None or col is None:
                continue
            grid_runs.setdefault((row, col), []).append(run)
            consumed.add(idx)
        cells = []
        for r in range(len(bands)):
            row_cells = []
            for c in range(len(cols)):
                members = sorted(grid_runs.get((r, c), []), key=lambda t: (-t.y, t.x))
                row_cells.append(" ".join(t.text for t in members).strip())
            cells.append(row_cells)
        regions.append(
            TableRegion(
                x0=xs[0],
                y0=ys[0],
                x1=xs[-1],
                y1=ys[-1],
                cells=cells,
                header_rows=_header_rows(cells),
            )
        )
    regions.sort(key=lambda t: (-t.y1, t.x0))
    return regions, consumed


def _header_rows(cells: list[list[str]]) -> int:
    """One header row when the first row is label-like and the body
    contains numbers; zero otherwise."""
    if len(cells) < 2:
        return 0
    first = [c for c in cells[0] if c]
    if not first or any(_NUMERICISH.match(c) for c in first):
        return 0
    body_numeric = any(
        _NUMERICISH.match(c) for row in cells[1:] for c in row if c
    )
    return 1 if body_numeric else 0


def detect_figures(images: list[PlacedImage], min_figure_area_px: int) -> list[FigureRegion]:
    """Images whose source pixel area passes the floor, in reading order."""
    regions = [
        FigureRegion(image=im, x0=im.x0, y0=im.y0, x1=im.x1, y1=im.y1)
        for im in images
        if im.width_px * im.height_px >= min_figure_area_px
    ]
    regions.sort(key=lambda f: (-f.y1, f.x0))
    return regions


def _overlaps_horizontally(line: Line, x0: float, x1: float) -> bool:
    line_x1 = line.x + 0.5 * line.size * len(line.text)
    return line.x <= x1 and line_x1 >= x0


def _claim_caption(
    lines: list[Line],
    used: set[int],
    pattern: re.Pattern,
    x0: float,
    y0: float,
    x1: float,
    y1: float,
    prefer_below: bool,
) -> str:
    """Find the nearest caption line for a region. Figures usually
    carry captions below, tables above; the fallback checks the other
    side before giving up."""

    def candidates(below: bool) -> list[tuple[float, int]]:
        found = []
        for idx, line in enumerate(lines):
            if idx in used or not pattern.match(line.text):
                continue
            if not _overlaps_horizontally(line, x0, x1):
                continue
            if below and y0 - _CAPTION_REACH <= line.y <= y0:
                found.append((y0 - line.y, idx))
            if not below and y1 <= line.y <= y1 + _CAPTION_REACH:
                found.append((line.y - y1, idx))
        return sorted(found)

    for below in (prefer_below, not prefer_below):
        got = candidates(below)
        if got:
            _, idx = got[0]
            used.add(idx)
            return lines[idx].text
    return ""


def analyze_page(content: PageContent, min_figure_area_px: int) -> PageLayout:
    """Full layout pass for one page."""
    tables, consumed = detect_tables(content.segments, content.runs)
    free_runs = [r for i, r in enumerate(content.runs) if i not in consumed]
    lines = group_lines(free_runs)
    figures = detect_figures(content.images, min_figure_area_px)

    used: set[int] = set()
    for fig in figures:
        fig.caption = _claim_caption(
            lines, used, _CAPTION_FIGURE, fig.x0, fig.y0, fig.x1, fig.y1, prefer_below=True
        )
    for table in tables:
        table.caption = _claim_caption(
            lines, used, _CAPTION_TABLE, table.x0, table.y0, table.x1, table.y1, prefer_below=False
        )

    prose_lines = [line for idx, line in enumerate(lines) if idx not in used]
    paragraphs: list[list[Line]] = []
    for line in prose_lines:  # already top-down from group_lines
        if paragraphs:
            prev = paragraphs[-1][-1]
            gap = prev.y - line.y
            if gap > 1.8 * max(prev.size, line.size):
                paragraphs.append([line])
                continue
        if not paragraphs:
            paragraphs.append([line])
        else:
            paragraphs[-1].append(line)
    prose = "\n\n".join(" ".join(l.text for l in para) for para in paragraphs)
    return PageLayout(tables=tables, figures=figures, prose=prose)
