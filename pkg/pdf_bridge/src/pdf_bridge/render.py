"""Raster rendering of interpreted PDF pages.

Produces one PNG per page for downstream visual models: white canvas,
placed images composited at their device rectangles, stroked segments,
and text runs drawn with a bundled font. Output is deterministic for a
given page so converted artifacts can be compared byte for byte.
"""

from __future__ import annotations

import io

from PIL import Image, ImageDraw, ImageFont

from .pdfreader import Page

__all__ = ["PageRenderFailure", "render_page_png"]

_SCALE = 2.0


class PageRenderFailure(Exception):
    """Rendering a page image failed."""

    def __init__(self, page_number: int, reason: str):
        self.page_number = page_number
        super().__init__(f"page {page_number}: {reason}")


def _font_for(size: float) -> ImageFont.ImageFont:
    try:
        return ImageFont.load_default(size=max(6, round(size)))
    except TypeError:  # very old raster default without size support
        return ImageFont.load_default()


def render_page_png(page: Page, scale: float = _SCALE) -> bytes:
    """Render one page to PNG bytes at the given device scale."""
    try:
        width = max(1, round(page.width * scale))
        height = max(1, round(page.height * scale))
        canvas = Image.new("RGB", (width, height), (255, 255, 255))
        draw = ImageDraw.Draw(canvas)

        def to_px(x: float, y: float) -> tuple[float, float]:
            return (x * scale, (page.height - y) * scale)

        for im in page.content.images:
            try:
                rgb, w, h = im.decode_rgb()
            except ValueError:
                # Undecodable pixels degrade to a placeholder frame so
                # the page image itself still renders.
                x0, y0 = to_px(im.x0, im.y1)
                x1, y1 = to_px(im.x1, im.y0)
                draw.rectangle([x0, y0, x1, y1], outline=(128, 128, 128), width=2)
                continue
            source = Image.frombytes("RGB", (w, h), rgb)
            x0, y0 = to_px(im.x0, im.y1)
            x1, y1 = to_px(im.x1, im.y0)
            target_w = max(1, round(x1 - x0))
            target_h = max(1, round(y1 - y0))
            resized = source.resize((target_w, target_h), Image.NEAREST)
            canvas.paste(resized, (round(x0), round(y0)))

        for seg in page.content.segments:
            draw.line(
                [to_px(seg.x0, seg.y0), to_px(seg.x1, seg.y1)],
                fill=(0, 0, 0),
                width=max(1, round(scale)),
            )

        for run in page.content.runs:
            px, py = to_px(run.x, run.y)
            font = _font_for(run.size * scale)
            draw.text((px, py), run.text, fill=(0, 0, 0), font=font, anchor="ls")

        buf = io.BytesIO()
        canvas.save(buf, format="PNG")
        return buf.getvalue()
    except PageRenderFailure:
        raise
    except Exception as exc:
        raise PageRenderFailure(page.number, str(exc)) from exc
