"""Command line entry points.

Exit codes: 0 success, 1 config error (missing or unreadable files,
malformed JSON, bad run configuration), 2 data validation error
(semantically invalid documents, schemas, unit rules, stores, or
integrity violations), 3 gateway hard failure (any backend error that
survived the retry policy).
"""
from __future__ import annotations

import json
import sys

import click

from . import pipeline
from .aggregate import CanonMap, table_to_json
from .document import DocumentError
from .evaluate import MatchConfig
from .gateway import GatewayError
from .rev import RevConfig
from .schema import SchemaError, generate_schema, parse_schema, serialize_schema
from .store import StoreError, VectorStore
from .units import UnitError, load_rules

# Locating, reading, or structurally parsing configuration and input
# files. Semantic validity problems are the data class below.
_CONFIG_ERRORS = (
    pipeline.ConfigError,
    FileNotFoundError,
    IsADirectoryError,
    PermissionError,
    json.JSONDecodeError,
)
_DATA_ERRORS = (SchemaError, UnitError, DocumentError, StoreError, ValueError)


def _fail(exc: Exception) -> None:
    click.echo(f"error: {exc}", err=True)
    if isinstance(exc, GatewayError):
        sys.exit(3)
    # JSONDecodeError subclasses ValueError, so the config check runs first.
    if isinstance(exc, _CONFIG_ERRORS):
        sys.exit(1)
    sys.exit(2)


@click.group()
def main() -> None:
    """Structured extraction of experimental records from parsed papers."""


@main.command()
@click.argument("docs", nargs=-1, required=True, type=click.Path())
@click.option("--store", "store_path", required=True, type=click.Path(), help="Output store file.")
@click.option("--dim", default=256, show_default=True, help="Embedding dimension.")
def ingest(docs: tuple[str, ...], store_path: str, dim: int) -> None:
    """Validate document JSON files (or directories of them) and build a store."""
    try:
        summary = pipeline.ingest(list(docs), store_path, pipeline.make_embedder(dim=dim))
    except (*_CONFIG_ERRORS, *_DATA_ERRORS) as exc:
        _fail(exc)
        return
    for doc in summary["documents"]:
        click.echo(f"{doc['doc_id']}: {doc['entries']} entries")
    click.echo(f"indexed {summary['entries']} entries from {len(summary['documents'])} documents")


@main.command("schema-validate")
@click.argument("schema_file", type=click.Path())
def schema_validate(schema_file: str) -> None:
    """Parse a schema file and report its shape."""
    try:
        with open(schema_file, "r", encoding="utf-8") as fh:
            schema = parse_schema(json.load(fh))
    except (*_CONFIG_ERRORS, *_DATA_ERRORS) as exc:
        _fail(exc)
        return
    keys = ", ".join(schema.key_fields())
    click.echo(f"{schema.schema_id}: {len(schema.fields)} fields, keys: {keys}")


@main.command("schema-generate")
@click.option("--instruction", required=True, help="Plain-language extraction instruction.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--mock-script", type=click.Path(), help="Scripted gateway replies.")
@click.option("--profile", default="default", show_default=True)
def schema_generate(instruction: str, out_path: str, mock_script: str | None, profile: str) -> None:
    """Draft a schema from an instruction through the gateway."""
    try:
        gateway = pipeline.build_gateway(None, mock_script)
        generated = generate_schema(instruction, gateway, profile)
    except (*_CONFIG_ERRORS, *_DATA_ERRORS, GatewayError) as exc:
        _fail(exc)
        return
    pipeline.write_json(out_path, serialize_schema(generated.schema))
    click.echo(f"wrote {generated.schema.schema_id} ({generated.repairs} repairs) to {out_path}")


@main.command()
@click.option("--store", "store_path", required=True, type=click.Path())
@click.option("--schema", "schema_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--audit", "audit_path", type=click.Path(), help="Loop audit JSON-lines output.")
@click.option("--mock-script", type=click.Path())
@click.option("--k", default=5, show_default=True, help="Evidence items per query.")
@click.option("--max-rounds", default=3, show_default=True)
@click.option("--confidence-threshold", default=0.7, show_default=True)
@click.option("--profile", default="default", show_default=True)
@click.option("--unit-rules", "rules_path", type=click.Path())
@click.option("--jobs", default=1, show_default=True, help="Documents processed in parallel.")
def extract(
    store_path: str,
    schema_path: str,
    out_path: str,
    audit_path: str | None,
    mock_script: str | None,
    k: int,
    max_rounds: int,
    confidence_threshold: float,
    profile: str,
    rules_path: str | None,
    jobs: int,
) -> None:
    """Run the retrieval, extraction, verification loop over a store."""
    try:
        store = VectorStore.load(store_path)
        with open(schema_path, "r", encoding="utf-8") as fh:
            schema = parse_schema(json.load(fh))
        rules = load_rules(rules_path) if rules_path else None
        config = RevConfig(
            k=k,
            max_rounds=max_rounds,
            confidence_threshold=confidence_threshold,
            model_profile=profile,
        )
        records, audit, _ = pipeline.extract_corpus(
            store,
            schema,
            lambda: pipeline.build_gateway(None, mock_script),
            config,
            rules,
            jobs,
        )
    except (*_CONFIG_ERRORS, *_DATA_ERRORS, GatewayError) as exc:
        _fail(exc)
        return
    pipeline.write_jsonl(out_path, records)
    if audit_path:
        pipeline.write_jsonl(audit_path, audit)
    click.echo(f"extracted {len(records)} records from {len(store.doc_ids())} documents")


@main.command()
@click.option("--records", "records_path", required=True, type=click.Path())
@click.option("--schema", "schema_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--conflicts", "conflicts_path", type=click.Path())
@click.option("--precision", default=2, show_default=True, help="Decimals for numeric grouping.")
@click.option("--canon-map", "canon_path", type=click.Path())
@click.option("--unit-rules", "rules_path", type=click.Path())
def aggregate(
    records_path: str,
    schema_path: str,
    out_path: str,
    conflicts_path: str | None,
    precision: int,
    canon_path: str | None,
    rules_path: str | None,
) -> None:
    """Merge extraction records into one table with conflict votes."""
    try:
        with open(schema_path, "r", encoding="utf-8") as fh:
            schema = parse_schema(json.load(fh))
        records = pipeline.read_jsonl(records_path)
        canon = CanonMap.from_file(canon_path) if canon_path else None
        rules = load_rules(rules_path) if rules_path else None
        result = pipeline.aggregate_records(records, schema, precision, canon, rules)
    except Exception as exc:
        _fail(exc)
        return
    pipeline.write_json(out_path, table_to_json(result.table))
    if conflicts_path:
        pipeline.write_jsonl(conflicts_path, result.conflict_log)
    if result.violations:
        click.echo(f"integrity violations: {result.violations}", err=True)
        sys.exit(2)
    click.echo(
        f"wrote {len(result.table)} rows, {len(result.conflict_log)} conflict entries"
    )


@main.command()
@click.option("--table", "table_path", required=True, type=click.Path())
@click.option("--ground-truth", "gt_path", required=True, type=click.Path())
@click.option("--schema", "schema_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--text-report", is_flag=True, help="Also print a fixed-width metrics table.")
@click.option("--rel-tol", default=0.05, show_default=True)
@click.option("--abs-tol", default=1e-6, show_default=True)
@click.option("--candidate-threshold", default=0.5, show_default=True)
@click.option(
    "--string-normalizer",
    default="casefold_trim",
    show_default=True,
    type=click.Choice(["exact", "casefold_trim", "canonicalized"]),
)
def evaluate(
    table_path: str,
    gt_path: str,
    schema_path: str,
    out_path: str,
    text_report: bool,
    rel_tol: float,
    abs_tol: float,
    candidate_threshold: float,
    string_normalizer: str,
) -> None:
    """Score an aggregated table against ground truth."""
    try:
        with open(schema_path, "r", encoding="utf-8") as fh:
            schema = parse_schema(json.load(fh))
        with open(table_path, "r", encoding="utf-8") as fh:
            table_payload = json.load(fh)
        config = MatchConfig(
            numeric_rel_tol=rel_tol,
            numeric_abs_tol=abs_tol,
            candidate_threshold=candidate_threshold,
            string_normalizer=string_normalizer,
        )
        metrics = pipeline.evaluate_table(table_payload, gt_path, schema, config)
    except (*_CONFIG_ERRORS, *_DATA_ERRORS) as exc:
        _fail(exc)
        return
    pipeline.write_json(out_path, metrics.to_dict())
    if text_report:
        click.echo(pipeline.text_report(schema.schema_id, metrics))
    click.echo(
        f"precision {metrics.precision:.3f}, recall {metrics.recall:.3f}, f1 {metrics.f1:.3f}"
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
def run(config_path: str, out_dir: str) -> None:
    """Run every stage per a config file and write all artifacts."""
    try:
        plan = pipeline.load_run_plan(config_path)
        summary = pipeline.run_all(plan, out_dir)
    except (*_CONFIG_ERRORS, *_DATA_ERRORS, GatewayError) as exc:
        _fail(exc)
        return
    if summary.get("integrity_violations"):
        click.echo(f"integrity violations: {summary['integrity_violations']}", err=True)
        sys.exit(2)
    click.echo(
        f"{summary['records']} records, {summary['table_rows']} table rows "
        f"written to {out_dir}"
    )


if __name__ == "__main__":
    main()
