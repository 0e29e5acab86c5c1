"""Conversion tests: document assembly, VLM handling, batch determinism."""

import io
import json
from pathlib import Path

import pytest
from PIL import Image

from litmine.document import validate_document
from litmine.gateway import Gateway, GatewayError

import fixture_pdfs
from pdf_bridge import vlm
from pdf_bridge.convert import (
    BridgeConfig,
    build_vlm_gateway,
    convert,
    convert_batch,
)
from pdf_bridge.pdfreader import PlacedImage, read_pdf
from pdf_bridge.render import render_page_png


@pytest.fixture(scope="module")
def kit(tmp_path_factory):
    return fixture_pdfs.build_kit(tmp_path_factory.mktemp("convertkit"))


def do_convert(kit, pdf_path, out_dir, script=None, **config_kwargs):
    config = BridgeConfig(output_dir=str(out_dir), **config_kwargs)
    gateway = build_vlm_gateway(str(script if script is not None else kit.script))
    return convert(str(pdf_path), config, gateway)


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


class RoutingBackend:
    """Scriptless backend that answers by request intent."""

    def __init__(self, classify_reply: str, figure_reply: str, caption_reply: str = "A caption."):
        self.classify_reply = classify_reply
        self.figure_reply = figure_reply
        self.caption_reply = caption_reply

    def complete_raw(self, request) -> str:
        if request.user.startswith("Classify"):
            return self.classify_reply
        if request.user.startswith("Extract"):
            return self.figure_reply
        return self.caption_reply


def routing_gateway(**kwargs) -> Gateway:
    return Gateway(
        profiles={"default": RoutingBackend(**kwargs)}, sleep_fn=lambda _s: None
    )


@pytest.fixture(scope="module")
def result(kit, tmp_path_factory):
    out = tmp_path_factory.mktemp("sci_out")
    return do_convert(kit, kit.scientific, out)


class TestScientificConvert:
    def test_constructed_counts(self, result):
        doc = result.document
        assert len(doc["chunks"]) == 2
        assert len(doc["tables"]) == 1
        assert len(doc["figures"]) == 1
        assert len(doc["page_images"]) == 2

    def test_written_json_validates(self, result):
        payload = json.loads(Path(result.json_path).read_text())
        validated = validate_document(payload)
        assert validated.doc_id == "scientific"

    def test_title_and_chunks_follow_page_prose(self, result):
        doc = result.document
        assert doc["title"] == fixture_pdfs.TITLE
        assert [c["chunk_index"] for c in doc["chunks"]] == [0, 1]
        assert [c["page_number"] for c in doc["chunks"]] == [1, 2]
        assert doc["chunks"][0]["text"] == (
            fixture_pdfs.TITLE
            + "\n\n"
            + fixture_pdfs.SENTENCE_1
            + " "
            + fixture_pdfs.SENTENCE_2
        )
        assert doc["chunks"][1]["text"] == fixture_pdfs.PAGE2_SENTENCE

    def test_table_block(self, result):
        table = result.document["tables"][0]
        assert table["table_id"] == "t1"
        assert table["page_number"] == 2
        assert table["cells"] == fixture_pdfs.TABLE_CELLS
        assert table["header_rows"] == 1
        assert table["caption"] == fixture_pdfs.TABLE_CAPTION

    def test_figure_record_with_scripted_structured(self, result):
        figure = result.document["figures"][0]
        assert figure["figure_id"] == "fig1"
        assert figure["page_number"] == 1
        assert figure["is_scientific"] is True
        assert figure["caption"] == fixture_pdfs.FIGURE_CAPTION
        assert figure["caption_source"] == "extracted"
        assert figure["structured"] == fixture_pdfs.CHART_STRUCTURED

    def test_no_diagnostics_on_clean_run(self, result):
        assert result.diagnostics == []

    def test_assets_on_disk(self, result):
        names = sorted(Path(p).name for p in result.asset_paths)
        assert names == ["fig1.png", "page-1.png", "page-2.png"]
        assert all(Path(p).exists() for p in result.asset_paths)
        uris = [p["uri"] for p in result.document["page_images"]]
        assert uris == ["scientific_assets/page-1.png", "scientific_assets/page-2.png"]

    def test_figure_crop_pixels_match_source(self, result):
        crop_path = next(p for p in result.asset_paths if p.endswith("fig1.png"))
        crop = Image.open(crop_path).convert("RGB")
        assert crop.tobytes() == fixture_pdfs.chart_image().tobytes()

    def test_page_png_dimensions(self, result):
        page_png = next(p for p in result.asset_paths if p.endswith("page-1.png"))
        img = Image.open(page_png)
        assert (img.width, img.height) == (1224, 1584)

    def test_rerun_is_byte_identical(self, kit, result, tmp_path):
        again = do_convert(kit, kit.scientific, tmp_path)
        first_root = Path(result.json_path).parent
        assert tree_bytes(tmp_path) == tree_bytes(first_root)


class TestOtherFixtures:
    def test_logo_not_scientific_no_structured(self, kit, tmp_path):
        result = do_convert(kit, kit.logo, tmp_path)
        figure = result.document["figures"][0]
        assert figure["is_scientific"] is False
        assert "structured" not in figure
        assert figure["caption"] == fixture_pdfs.LOGO_CAPTION
        assert figure["caption_source"] == "generated"
        validate_document(result.document)

    def test_jpeg_figure_gets_generated_caption_and_structured(self, kit, tmp_path):
        result = do_convert(kit, kit.jpeg, tmp_path)
        figure = result.document["figures"][0]
        assert figure["is_scientific"] is True
        assert figure["caption"] == fixture_pdfs.JPEG_CAPTION
        assert figure["caption_source"] == "generated"
        assert figure["structured"] == fixture_pdfs.JPEG_STRUCTURED

    def test_text_only_document_has_empty_regions(self, kit, tmp_path):
        result = do_convert(kit, kit.textonly, tmp_path)
        doc = result.document
        assert doc["tables"] == [] and doc["figures"] == []
        assert len(doc["chunks"]) == 1
        assert len(doc["page_images"]) == 1
        validate_document(doc)


class TestDegradation:
    def test_nan_point_dropped_with_diagnostic(self, kit, tmp_path):
        result = do_convert(kit, kit.scientific, tmp_path, script=kit.nan_script)
        figure = result.document["figures"][0]
        # The scripted reply carried one extra [35.0, "NaN"] point.
        assert figure["structured"] == fixture_pdfs.CHART_STRUCTURED
        assert len(result.diagnostics) == 1
        assert "fig1" in result.diagnostics[0]
        assert "NaN" in result.diagnostics[0]
        validate_document(result.document)

    def test_invalid_structured_after_repairs_degrades(self, kit, tmp_path):
        gateway = routing_gateway(
            classify_reply=json.dumps({"is_scientific": True, "confidence": 0.9}),
            figure_reply="[]",
        )
        config = BridgeConfig(output_dir=str(tmp_path))
        result = convert(str(kit.scientific), config, gateway)
        figure = result.document["figures"][0]
        assert figure["is_scientific"] is True
        assert "structured" not in figure
        assert len(result.diagnostics) == 1
        assert "invalid after repairs" in result.diagnostics[0]
        validate_document(result.document)

    def test_unreadable_image_raises_gateway_error_with_figure_id(self):
        broken = PlacedImage(
            name="X",
            x0=0.0,
            y0=0.0,
            x1=1.0,
            y1=1.0,
            width_px=4,
            height_px=4,
            color_space="DeviceRGB",
            bits=8,
            data=b"short",
            codec=None,
        )
        with pytest.raises(GatewayError, match="fig9: unreadable image bytes"):
            vlm.figure_pixels(broken, "fig9")

    def test_area_filter_runs_before_classification(self, kit, tmp_path):
        # An empty script would raise on any VLM call, so success proves
        # the filtered figure never reached classification.
        empty = tmp_path / "empty.json"
        empty.write_text("[]")
        result = do_convert(
            kit,
            kit.scientific,
            tmp_path,
            script=empty,
            min_figure_area_px=320 * 200 + 1,
        )
        assert result.document["figures"] == []
        validate_document(result.document)

    def test_classification_disabled_needs_no_gateway(self, kit, tmp_path):
        config = BridgeConfig(output_dir=str(tmp_path), classify_figures=False)
        result = convert(str(kit.scientific), config, gateway=None)
        figure = result.document["figures"][0]
        assert figure["is_scientific"] is False
        assert "structured" not in figure
        assert figure["caption"] == fixture_pdfs.FIGURE_CAPTION
        assert figure["caption_source"] == "extracted"
        validate_document(result.document)

    def test_classification_without_gateway_fails(self, kit, tmp_path):
        config = BridgeConfig(output_dir=str(tmp_path))
        with pytest.raises(GatewayError, match="fig1"):
            convert(str(kit.scientific), config, gateway=None)


class TestVlmShapes:
    def test_classification_reply_must_be_object_with_bool(self):
        shape = vlm._ClassificationShape()
        with pytest.raises(ValueError):
            shape.validate([])
        with pytest.raises(ValueError, match="boolean"):
            shape.validate({"is_scientific": "yes", "confidence": 0.5})
        with pytest.raises(ValueError, match="within"):
            shape.validate({"is_scientific": True, "confidence": 1.5})
        out = shape.validate({"is_scientific": True, "confidence": 1})
        assert out == {"is_scientific": True, "confidence": 1.0}

    def test_figure_shape_structure_errors(self):
        shape = vlm._FigureJsonShape()
        with pytest.raises(ValueError, match="label"):
            shape.validate({"axes": [{"unit": "h"}]})
        with pytest.raises(ValueError, match="scale"):
            shape.validate({"axes": [{"label": "x", "scale": "cubic"}]})
        with pytest.raises(ValueError, match="legend"):
            shape.validate({"legend": [1]})
        with pytest.raises(ValueError, match="pair"):
            shape.validate({"series": [{"name": "s", "points": [[1, 2, 3]]}]})

    def test_figure_shape_keeps_string_y_for_later_filtering(self):
        shape = vlm._FigureJsonShape()
        out = shape.validate({"series": [{"name": "s", "points": [[1, "NaN"]]}]})
        assert out["series"][0]["points"] == [[1, "NaN"]]

    def test_finite_y_filter(self):
        assert vlm._finite_y(3) == 3.0
        assert vlm._finite_y("  2.5 ") == 2.5
        assert vlm._finite_y("NaN") is None
        assert vlm._finite_y(float("inf")) is None
        assert vlm._finite_y(True) is None
        assert vlm._finite_y(None) is None


class TestBatch:
    def batch_paths(self, kit):
        return [str(kit.scientific), str(kit.logo), str(kit.jpeg), str(kit.textonly)]

    def test_order_follows_input(self, kit, tmp_path):
        config = BridgeConfig(output_dir=str(tmp_path))
        results = convert_batch(self.batch_paths(kit), config, str(kit.script))
        assert [r.doc_id for r in results] == ["scientific", "logo", "curvedoc", "textonly"]

    def test_parallel_equals_sequential(self, kit, tmp_path):
        seq_dir = tmp_path / "seq"
        par_dir = tmp_path / "par"
        convert_batch(
            self.batch_paths(kit),
            BridgeConfig(output_dir=str(seq_dir)),
            str(kit.script),
            jobs=1,
        )
        convert_batch(
            self.batch_paths(kit),
            BridgeConfig(output_dir=str(par_dir)),
            str(kit.script),
            jobs=3,
        )
        seq = tree_bytes(seq_dir)
        assert seq == tree_bytes(par_dir)
        assert len(seq) == 4 + 8  # four JSON files plus eight PNG assets

    def test_bad_jobs_rejected(self, kit):
        with pytest.raises(ValueError):
            convert_batch([], BridgeConfig(), None, jobs=0)


class TestConfigAndIds:
    def test_negative_area_floor_rejected(self):
        with pytest.raises(ValueError, match="min_figure_area_px"):
            BridgeConfig(min_figure_area_px=-1)

    def test_defaults(self):
        config = BridgeConfig()
        assert config.vlm_profile == "default"
        assert config.min_figure_area_px == 4096
        assert config.classify_figures is True

    def test_doc_id_sanitized_from_filename(self, kit, tmp_path):
        weird = tmp_path / "weird name (v2).pdf"
        weird.write_bytes(kit.textonly.read_bytes())
        result = do_convert(kit, weird, tmp_path / "out")
        assert result.doc_id == "weird-name-v2"


class TestRender:
    def test_render_deterministic(self, kit):
        page = read_pdf(kit.scientific)[0]
        assert render_page_png(page) == render_page_png(page)

    def test_undecodable_image_renders_placeholder(self, kit):
        page = read_pdf(kit.scientific)[0]
        bad = PlacedImage(
            name="B",
            x0=100.0,
            y0=100.0,
            x1=200.0,
            y1=200.0,
            width_px=10,
            height_px=10,
            color_space="DeviceRGB",
            bits=8,
            data=b"",
            codec=None,
        )
        page.content.images.append(bad)
        try:
            png = render_page_png(page)
            assert png[:8] == b"\x89PNG\r\n\x1a\n"
        finally:
            page.content.images.pop()
