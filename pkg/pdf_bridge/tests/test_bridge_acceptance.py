"""Acceptance gate for the PDF bridge.

Prints one ``ACCEPTANCE <name>: PASS|FAIL`` line to the real stdout so
the verdict stays visible under pytest capture, mirroring the engine's
acceptance suite.
"""

from __future__ import annotations

import contextlib
import sys
from pathlib import Path

import pytest

from litmine.document import validate_document

import fixture_pdfs
from pdf_bridge.convert import BridgeConfig, build_vlm_gateway, convert, convert_batch


@pytest.fixture()
def gate(capfd):
    """Context manager that prints the criterion verdict to the real
    terminal no matter how the test exits, bypassing output capture so
    the line stays visible in a plain ``pytest -v`` run."""

    @contextlib.contextmanager
    def _gate(name: str):
        failed = True
        try:
            yield
            failed = False
        finally:
            verdict = "FAIL" if failed else "PASS"
            with capfd.disabled():
                print(f"ACCEPTANCE {name}: {verdict}", file=sys.__stdout__, flush=True)

    return _gate


@pytest.fixture(scope="module")
def kit(tmp_path_factory):
    return fixture_pdfs.build_kit(tmp_path_factory.mktemp("acceptkit"))


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def test_bridge_contract(gate, kit, tmp_path):
    with gate("bridge-contract"):
        # Two-page fixture converts to a document that the engine's own
        # validator accepts, with exactly the constructed region counts.
        out = tmp_path / "single"
        gateway = build_vlm_gateway(str(kit.script))
        result = convert(
            str(kit.scientific), BridgeConfig(output_dir=str(out)), gateway
        )
        validated = validate_document(result.document)
        assert len(validated.figures) == 1
        assert len(validated.tables) == 1
        assert len(validated.page_images) == 2
        assert len(validated.chunks) > 0

        # The scripted VLM classifies the logo fixture as non-scientific.
        logo = convert(str(kit.logo), BridgeConfig(output_dir=str(out)), gateway)
        assert logo.document["figures"][0]["is_scientific"] is False

        # A parallel batch over four PDFs produces the same output set as
        # a sequential run, byte for byte.
        pdfs = [str(kit.scientific), str(kit.logo), str(kit.jpeg), str(kit.textonly)]
        seq_dir, par_dir = tmp_path / "seq", tmp_path / "par"
        convert_batch(pdfs, BridgeConfig(output_dir=str(seq_dir)), str(kit.script), jobs=1)
        convert_batch(pdfs, BridgeConfig(output_dir=str(par_dir)), str(kit.script), jobs=4)
        seq, par = tree_bytes(seq_dir), tree_bytes(par_dir)
        assert seq == par
        assert len(seq) == 12  # 4 documents + 8 image assets
