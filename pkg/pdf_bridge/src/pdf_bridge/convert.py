"""PDF to canonical document conversion.

Orchestrates the full bridge pass for one file: parse the PDF, analyze
each page's layout, render page images, crop figures, run the visual
model for classification / structured data / missing captions, and emit
a document JSON that the engine validates plus its image assets.

Batch conversion runs one process per PDF; conversions share nothing,
so parallel output equals sequential output file for file.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from litmine.document import chunk_text, document_to_dict, validate_document
from litmine.gateway import Gateway, GatewayError, MockBackend

from .layout import PageLayout, analyze_page
from .pdfreader import read_pdf
from .render import render_page_png
from . import vlm

__all__ = ["BridgeConfig", "ConversionResult", "convert", "convert_batch", "build_vlm_gateway"]

_ID_SAFE = re.compile(r"[^A-Za-z0-9._-]+")


@dataclass(frozen=True)
class BridgeConfig:
    """Knobs for one conversion run."""

    vlm_profile: str = "default"
    min_figure_area_px: int = 4096
    output_dir: str = "."
    classify_figures: bool = True

    def __post_init__(self) -> None:
        if self.min_figure_area_px < 0:
            raise ValueError("min_figure_area_px must be >= 0")


@dataclass
class ConversionResult:
    """Everything one PDF produced."""

    doc_id: str
    document: dict
    json_path: str
    asset_paths: list[str] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)


def build_vlm_gateway(mock_script: str | None) -> Gateway | None:
    """Gateway for bridge VLM calls; None when no backend is configured."""
    if mock_script is None:
        return None
    backend = MockBackend.from_file(mock_script)
    return Gateway(profiles={"default": backend}, sleep_fn=lambda _s: None)


def _doc_id_for(pdf_path: str) -> str:
    stem = Path(pdf_path).stem or "document"
    cleaned = _ID_SAFE.sub("-", stem).strip("-.")
    return cleaned or "document"


def _png_bytes(rgb: bytes, width: int, height: int) -> bytes:
    import io

    from PIL import Image

    img = Image.frombytes("RGB", (width, height), rgb)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def convert(pdf_path: str, config: BridgeConfig, gateway: Gateway | None) -> ConversionResult:
    """Convert one PDF into a validated document JSON plus image assets.

    The emitted JSON always passes the engine's document validation;
    that is the bridge's one hard contract. Figure-level model problems
    degrade to diagnostics instead of failing the conversion.
    """
    doc_id = _doc_id_for(pdf_path)
    pages = read_pdf(pdf_path)
    layouts: list[tuple[int, PageLayout]] = [
        (page.number, analyze_page(page.content, config.min_figure_area_px))
        for page in pages
    ]

    out_dir = Path(config.output_dir)
    assets_rel = f"{doc_id}_assets"
    assets_dir = out_dir / assets_rel
    assets_dir.mkdir(parents=True, exist_ok=True)
    asset_paths: list[str] = []
    diagnostics: list[str] = []

    page_images = []
    for page in pages:
        png = render_page_png(page)
        rel = f"{assets_rel}/page-{page.number}.png"
        (out_dir / rel).write_bytes(png)
        asset_paths.append(str(out_dir / rel))
        page_images.append({"page_number": page.number, "uri": rel})

    chunks = []
    title: str | None = None
    for page_number, layout in layouts:
        if title is None and layout.prose:
            title = layout.prose.split("\n", 1)[0].strip() or None
        for piece in chunk_text(layout.prose):
            chunks.append(
                {
                    "chunk_index": len(chunks),
                    "text": piece.text,
                    "page_number": page_number,
                }
            )

    tables = []
    for page_number, layout in layouts:
        for region in layout.tables:
            tables.append(
                {
                    "table_id": f"t{len(tables) + 1}",
                    "page_number": page_number,
                    "caption": region.caption,
                    "cells": region.cells,
                    "header_rows": region.header_rows,
                }
            )

    figures = []
    for page_number, layout in layouts:
        for region in layout.figures:
            figure_id = f"fig{len(figures) + 1}"
            rgb, digest, width, height = vlm.figure_pixels(region.image, figure_id)
            rel = f"{assets_rel}/{figure_id}.png"
            (out_dir / rel).write_bytes(_png_bytes(rgb, width, height))
            asset_paths.append(str(out_dir / rel))

            caption = region.caption
            caption_source = "extracted"
            is_scientific = False
            structured = None
            if config.classify_figures:
                if gateway is None:
                    raise GatewayError(
                        f"{figure_id}: figure classification needs a VLM "
                        "gateway but none is configured"
                    )
                verdict = vlm.classify_figure(
                    gateway, config.vlm_profile, figure_id, digest, width, height
                )
                is_scientific = verdict["is_scientific"]
                if not caption:
                    caption = vlm.generate_caption(
                        gateway, config.vlm_profile, figure_id, digest, width, height
                    )
                    caption_source = "generated"
                if is_scientific:
                    structured, fig_diags = vlm.figure_to_json(
                        gateway,
                        config.vlm_profile,
                        figure_id,
                        digest,
                        width,
                        height,
                        caption,
                    )
                    diagnostics.extend(fig_diags)
            elif not caption:
                # Classification disabled and nothing to caption with:
                # fall back to a deterministic placeholder.
                caption = f"Figure on page {page_number}"
                caption_source = "generated"

            figure = {
                "figure_id": figure_id,
                "page_number": page_number,
                "caption": caption,
                "caption_source": caption_source,
                "is_scientific": is_scientific,
            }
            if structured is not None:
                figure["structured"] = structured
            figures.append(figure)

    payload: dict = {"doc_id": doc_id}
    if title:
        payload["title"] = title
    payload["source_uri"] = Path(pdf_path).name
    payload["chunks"] = chunks
    payload["tables"] = tables
    payload["figures"] = figures
    payload["page_images"] = page_images

    document = document_to_dict(validate_document(payload))
    json_path = out_dir / f"{doc_id}.json"
    json_path.write_text(
        json.dumps(document, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    return ConversionResult(
        doc_id=doc_id,
        document=document,
        json_path=str(json_path),
        asset_paths=asset_paths,
        diagnostics=diagnostics,
    )


def _convert_job(args: tuple[str, BridgeConfig, str | None]) -> ConversionResult:
    pdf_path, config, mock_script = args
    gateway = build_vlm_gateway(mock_script)
    return convert(pdf_path, config, gateway)


def convert_batch(
    pdf_paths: list[str],
    config: BridgeConfig,
    mock_script: str | None = None,
    jobs: int = 1,
) -> list[ConversionResult]:
    """Convert many PDFs, optionally in parallel processes.

    Workers rebuild their gateway from the script path, so results do
    not depend on jobs; output order follows the input order.
    """
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    work = [(path, config, mock_script) for path in pdf_paths]
    if jobs == 1 or len(work) <= 1:
        return [_convert_job(item) for item in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_convert_job, work))
