"""Bridge from source PDFs to the extraction engine's document JSON.

Parses digitally generated PDFs without external PDF libraries, splits
each page into prose, ruled tables, and figures, renders page images,
and drives a visual model (through the engine gateway) for figure
classification, structured figure data, and missing captions.
"""

from .convert import BridgeConfig, ConversionResult, convert, convert_batch
from .pdfreader import UnparseablePdf, read_pdf
from .render import PageRenderFailure

__all__ = [
    "BridgeConfig",
    "ConversionResult",
    "convert",
    "convert_batch",
    "UnparseablePdf",
    "PageRenderFailure",
    "read_pdf",
]
