"""Visual-model calls for figure handling.

Three operations run through the engine gateway: classifying a figure
as scientific or decorative, converting a scientific figure into
structured axes/legend/series JSON, and drafting a caption when the
page carries none. Requests attach the figure's decoded pixel digest
rather than raw bytes, so scripted replies stay stable across runs and
machines.
"""

from __future__ import annotations

import hashlib
import math

from litmine.gateway import (
    Attachment,
    Gateway,
    GatewayError,
    PromptRequest,
    StructureInvalidAfterRepair,
)

from .pdfreader import PlacedImage

__all__ = [
    "figure_pixels",
    "build_classify_request",
    "build_figure_request",
    "build_caption_request",
    "classify_figure",
    "figure_to_json",
    "generate_caption",
]

_CLASSIFY_SYSTEM = (
    "You review images taken from research papers. Decide whether the "
    "image is a scientific figure (a plot, chart, diagram, or other "
    "data display) or a decorative element such as a logo. Reply with "
    "one JSON object: {\"is_scientific\": boolean, \"confidence\": number}."
)
_FIGURE_SYSTEM = (
    "You convert scientific figures into structured data. Read the "
    "axes, legend, and plotted series from the attached figure and "
    "reply with one JSON object of shape {\"axes\": [{\"label\": str, "
    "\"unit\": str?, \"scale\": \"linear\"|\"log\"}], \"legend\": [str], "
    "\"series\": [{\"name\": str, \"points\": [[x, y]]}]}."
)
_CAPTION_SYSTEM = (
    "You caption figures from research papers. Reply with one short "
    "plain-text caption and nothing else."
)


def figure_pixels(image: PlacedImage, figure_id: str) -> tuple[bytes, str, int, int]:
    """Decode a placed image and digest its RGB samples.

    Returns (rgb bytes, sha256 hex of those bytes, width, height).
    Images whose sample data cannot be decoded are gateway-level
    failures carrying the figure id, per the classification contract.
    """
    try:
        rgb, width, height = image.decode_rgb()
    except ValueError as exc:
        raise GatewayError(f"{figure_id}: unreadable image bytes ({exc})") from exc
    return rgb, hashlib.sha256(rgb).hexdigest(), width, height


def _image_attachment(figure_id: str, pixels_sha256: str, width: int, height: int) -> Attachment:
    return Attachment(
        kind="image_uri",
        payload={
            "figure_id": figure_id,
            "pixels_sha256": pixels_sha256,
            "width": width,
            "height": height,
        },
    )


def build_classify_request(
    profile: str, figure_id: str, pixels_sha256: str, width: int, height: int
) -> PromptRequest:
    return PromptRequest(
        model_profile=profile,
        system=_CLASSIFY_SYSTEM,
        user=f"Classify figure {figure_id}.",
        attachments=(_image_attachment(figure_id, pixels_sha256, width, height),),
    )


def build_figure_request(
    profile: str,
    figure_id: str,
    pixels_sha256: str,
    width: int,
    height: int,
    caption: str,
) -> PromptRequest:
    user = f"Extract the structured data from figure {figure_id}."
    if caption:
        user += f"\nCaption: {caption}"
    return PromptRequest(
        model_profile=profile,
        system=_FIGURE_SYSTEM,
        user=user,
        attachments=(_image_attachment(figure_id, pixels_sha256, width, height),),
    )


def build_caption_request(
    profile: str, figure_id: str, pixels_sha256: str, width: int, height: int
) -> PromptRequest:
    return PromptRequest(
        model_profile=profile,
        system=_CAPTION_SYSTEM,
        user=f"Write a caption for figure {figure_id}.",
        attachments=(_image_attachment(figure_id, pixels_sha256, width, height),),
    )


class _ClassificationShape:
    """Validation target for the classification reply."""

    def validate(self, payload) -> dict:
        if not isinstance(payload, dict):
            raise ValueError("classification must be a JSON object")
        if not isinstance(payload.get("is_scientific"), bool):
            raise ValueError("is_scientific must be a boolean")
        confidence = payload.get("confidence")
        if not isinstance(confidence, (int, float)) or isinstance(confidence, bool):
            raise ValueError("confidence must be a number")
        confidence = float(confidence)
        if not 0.0 <= confidence <= 1.0:
            raise ValueError("confidence must be within [0, 1]")
        return {"is_scientific": payload["is_scientific"], "confidence": confidence}


class _FigureJsonShape:
    """Validation target for the figure-to-JSON reply.

    Structure is checked strictly; point y values may still be strings
    or non-finite numbers at this stage. The finiteness rule is applied
    after validation so a bad point costs a diagnostic, not a repair
    loop.
    """

    def validate(self, payload) -> dict:
        if not isinstance(payload, dict):
            raise ValueError("figure data must be a JSON object")
        axes = payload.get("axes", [])
        if not isinstance(axes, list):
            raise ValueError("axes must be a list")
        out_axes = []
        for i, axis in enumerate(axes):
            if not isinstance(axis, dict) or not isinstance(axis.get("label"), str):
                raise ValueError(f"axes[{i}] needs a string label")
            scale = axis.get("scale", "linear")
            if scale not in ("linear", "log"):
                raise ValueError(f"axes[{i}].scale must be linear or log")
            unit = axis.get("unit")
            if unit is not None and not isinstance(unit, str):
                raise ValueError(f"axes[{i}].unit must be a string")
            entry = {"label": axis["label"], "scale": scale}
            if unit is not None:
                entry["unit"] = unit
            out_axes.append(entry)
        legend = payload.get("legend", [])
        if not isinstance(legend, list) or any(not isinstance(s, str) for s in legend):
            raise ValueError("legend must be a list of strings")
        series = payload.get("series", [])
        if not isinstance(series, list):
            raise ValueError("series must be a list")
        out_series = []
        for i, entry in enumerate(series):
            if not isinstance(entry, dict) or not isinstance(entry.get("name"), str):
                raise ValueError(f"series[{i}] needs a string name")
            points = entry.get("points", [])
            if not isinstance(points, list):
                raise ValueError(f"series[{i}].points must be a list")
            out_points = []
            for j, point in enumerate(points):
                if not isinstance(point, (list, tuple)) or len(point) != 2:
                    raise ValueError(f"series[{i}].points[{j}] must be an [x, y] pair")
                x, y = point
                if not isinstance(x, (int, float, str)) or isinstance(x, bool):
                    raise ValueError(f"series[{i}].points[{j}].x must be a number or string")
                if not isinstance(y, (int, float, str)) or isinstance(y, bool):
                    raise ValueError(f"series[{i}].points[{j}].y must be a number or string")
                out_points.append([x, y])
            out_series.append({"name": entry["name"], "points": out_points})
        return {"axes": out_axes, "legend": legend, "series": out_series}


def _finite_y(value) -> float | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        y = float(value)
    elif isinstance(value, str):
        try:
            y = float(value.strip())
        except ValueError:
            return None
    else:
        return None
    return y if math.isfinite(y) else None


def classify_figure(
    gateway: Gateway,
    profile: str,
    figure_id: str,
    pixels_sha256: str,
    width: int,
    height: int,
) -> dict:
    """Ask the VLM whether the figure is scientific."""
    request = build_classify_request(profile, figure_id, pixels_sha256, width, height)
    result = gateway.complete_structured(request, _ClassificationShape())
    return result.value


def figure_to_json(
    gateway: Gateway,
    profile: str,
    figure_id: str,
    pixels_sha256: str,
    width: int,
    height: int,
    caption: str,
) -> tuple[dict | None, list[str]]:
    """Convert a scientific figure into axes/legend/series JSON.

    Returns (structured, diagnostics). Replies that never validate
    leave structured as None with a diagnostic; non-finite data points
    are dropped individually. Conversion degrades, it does not abort.
    """
    request = build_figure_request(profile, figure_id, pixels_sha256, width, height, caption)
    try:
        result = gateway.complete_structured(request, _FigureJsonShape())
    except StructureInvalidAfterRepair as exc:
        return None, [f"{figure_id}: figure data invalid after repairs: {exc.last_error}"]
    structured = result.value
    diagnostics: list[str] = []
    for series in structured["series"]:
        kept = []
        for point in series["points"]:
            y = _finite_y(point[1])
            if y is None:
                diagnostics.append(
                    f"{figure_id}: dropped point {point!r} in series "
                    f"{series['name']!r}: y is not a finite number"
                )
                continue
            kept.append([point[0], y])
        series["points"] = kept
    return structured, diagnostics


def generate_caption(
    gateway: Gateway,
    profile: str,
    figure_id: str,
    pixels_sha256: str,
    width: int,
    height: int,
) -> str:
    """Draft a caption for a figure the page does not caption."""
    request = build_caption_request(profile, figure_id, pixels_sha256, width, height)
    response = gateway.complete(request)
    return response.text.strip()
