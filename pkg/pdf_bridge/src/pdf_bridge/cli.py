"""Command line entry point for PDF conversion.

Exit codes match the engine CLI: 0 all documents converted and
validated, 1 config error (missing or unreadable inputs), 2 data error
(unparseable PDF, failed page render, invalid document), 3 gateway hard
failure.
"""

from __future__ import annotations

import sys

import click

from litmine.document import DocumentError
from litmine.gateway import GatewayError

from .convert import BridgeConfig, build_vlm_gateway, convert, convert_batch
from .pdfreader import UnparseablePdf
from .render import PageRenderFailure

_CONFIG_ERRORS = (FileNotFoundError, IsADirectoryError, PermissionError, ValueError)
_DATA_ERRORS = (UnparseablePdf, PageRenderFailure, DocumentError)


def _fail(exc: Exception) -> None:
    click.echo(f"error: {exc}", err=True)
    if isinstance(exc, GatewayError):
        sys.exit(3)
    if isinstance(exc, _DATA_ERRORS):
        sys.exit(2)
    if isinstance(exc, _CONFIG_ERRORS):
        sys.exit(1)
    sys.exit(2)


@click.group()
def main() -> None:
    """Convert source PDFs into the extraction engine's document JSON."""


@main.command("convert")
@click.argument("pdfs", nargs=-1, required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory.")
@click.option("--mock-script", type=click.Path(), help="Scripted VLM replies.")
@click.option("--profile", default="default", show_default=True, help="VLM profile name.")
@click.option(
    "--min-figure-area",
    default=4096,
    show_default=True,
    help="Smallest source pixel area kept as a figure candidate.",
)
@click.option(
    "--no-classify",
    is_flag=True,
    help="Skip VLM calls; figures are kept unclassified without structured data.",
)
@click.option("--jobs", default=1, show_default=True, help="PDFs converted in parallel.")
def convert_cmd(
    pdfs: tuple[str, ...],
    out_dir: str,
    mock_script: str | None,
    profile: str,
    min_figure_area: int,
    no_classify: bool,
    jobs: int,
) -> None:
    """Convert PDF files into document JSON plus PNG assets."""
    try:
        config = BridgeConfig(
            vlm_profile=profile,
            min_figure_area_px=min_figure_area,
            output_dir=out_dir,
            classify_figures=not no_classify,
        )
        if jobs == 1:
            gateway = build_vlm_gateway(mock_script)
            results = [convert(path, config, gateway) for path in pdfs]
        else:
            results = convert_batch(list(pdfs), config, mock_script, jobs=jobs)
    except (*_DATA_ERRORS, *_CONFIG_ERRORS, GatewayError) as exc:
        _fail(exc)
        return
    total_diags = 0
    for result in results:
        doc = result.document
        click.echo(
            f"{result.doc_id}: {len(doc['chunks'])} chunks, "
            f"{len(doc['tables'])} tables, {len(doc['figures'])} figures, "
            f"{len(doc['page_images'])} pages"
        )
        for diag in result.diagnostics:
            click.echo(f"note: {diag}", err=True)
            total_diags += 1
    click.echo(f"converted {len(results)} documents ({total_diags} diagnostics)")


if __name__ == "__main__":
    main()
