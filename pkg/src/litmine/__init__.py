"""litmine: retrieval-backed extraction of structured experimental records
from parsed scientific papers, with deterministic aggregation and scoring."""

from .document import (
    Chunk,
    Document,
    DocumentError,
    FigureRecord,
    PageImageRef,
    TableBlock,
    chunk_text,
    document_to_dict,
    validate_document,
)
from .schema import FieldSpec, Schema, coerce_value, parse_schema, serialize_schema
from .store import HashedBagEmbedder, QueryResult, StoreEntry, VectorStore, build_entries
from .gateway import Attachment, Gateway, MockBackend, PromptRequest, request_fingerprint
from .rev import ExtractionRecord, Provenance, RevConfig, formulate_queries, verify
from .rev import run as run_extraction
from .aggregate import AggregatedRecord, CanonMap, aggregate, records_from_table
from .evaluate import MatchConfig, Metrics, bipartite_match, compute_metrics, evaluate_rows
from .units import RuleTable, UnitRule, default_rules, normalize_symbol

__version__ = "0.1.0"

__all__ = [
    "Attachment",
    "AggregatedRecord",
    "CanonMap",
    "Chunk",
    "Document",
    "DocumentError",
    "ExtractionRecord",
    "FieldSpec",
    "FigureRecord",
    "Gateway",
    "HashedBagEmbedder",
    "MatchConfig",
    "Metrics",
    "MockBackend",
    "PageImageRef",
    "PromptRequest",
    "Provenance",
    "QueryResult",
    "RevConfig",
    "RuleTable",
    "Schema",
    "StoreEntry",
    "TableBlock",
    "UnitRule",
    "VectorStore",
    "aggregate",
    "bipartite_match",
    "build_entries",
    "chunk_text",
    "coerce_value",
    "compute_metrics",
    "default_rules",
    "document_to_dict",
    "evaluate_rows",
    "formulate_queries",
    "normalize_symbol",
    "parse_schema",
    "records_from_table",
    "request_fingerprint",
    "run_extraction",
    "serialize_schema",
    "validate_document",
    "verify",
    "__version__",
]
