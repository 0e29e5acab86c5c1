"""Stage orchestration: ingest, extract, aggregate, evaluate.

The CLI calls these functions and so does the all-in-one runner, which is
what makes a staged run and a composed run produce identical artifacts.
All JSON artifacts are written with sorted keys and fixed separators, so
reruns over the same inputs are byte-identical.
"""
from __future__ import annotations

import concurrent.futures
import json
import os
from dataclasses import dataclass, field
from typing import Any, Callable

from .aggregate import (
    AggregateResult,
    AggregationConfig,
    CanonMap,
    aggregate,
    table_from_json,
    table_to_json,
)
from .document import Document, validate_document
from .evaluate import MatchConfig, Metrics, evaluate_rows, rows_from_csv, rows_from_table_json
from .gateway import Gateway, HttpBackend, MockBackend
from .rev import RevConfig, record_from_dict, record_to_dict, run as rev_run
from .schema import Schema, parse_schema, serialize_schema
from .store import HashedBagEmbedder, HttpEmbedder, VectorStore
from .units import RuleTable, load_rules


class ConfigError(Exception):
    """The run configuration is unusable; nothing was executed."""


def write_json(path: str, payload: Any) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_jsonl(path: str, items: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_jsonl(path: str) -> list[dict]:
    items = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                items.append(json.loads(line))
    return items


def load_document_file(path: str) -> Document:
    with open(path, "r", encoding="utf-8") as fh:
        return validate_document(json.load(fh))


def discover_corpus(paths: list[str]) -> list[str]:
    """Expand directories into their .json files; keep explicit files."""
    found: list[str] = []
    for path in paths:
        if os.path.isdir(path):
            found.extend(
                os.path.join(path, name)
                for name in sorted(os.listdir(path))
                if name.endswith(".json")
            )
        else:
            found.append(path)
    return found


def make_embedder(kind: str = "hashed", dim: int = 256, **kwargs) -> Any:
    if kind == "hashed":
        return HashedBagEmbedder(dim=dim)
    if kind == "http":
        return HttpEmbedder(dim=dim, **kwargs)
    raise ConfigError(f"unknown embedder kind {kind!r}")


def ingest(doc_paths: list[str], store_path: str, embedder=None) -> dict:
    """Validate and index documents into a fresh persisted store."""
    embedder = embedder or HashedBagEmbedder()
    store = VectorStore(embedder)
    summary: dict[str, Any] = {"documents": [], "entries": 0}
    seen: dict[str, str] = {}
    for path in discover_corpus(doc_paths):
        doc = load_document_file(path)
        if doc.doc_id in seen:
            raise ConfigError(
                f"doc_id {doc.doc_id!r} appears in both {seen[doc.doc_id]} and {path}"
            )
        seen[doc.doc_id] = path
        added = store.index_document(doc)
        summary["documents"].append({"doc_id": doc.doc_id, "entries": added})
        summary["entries"] += added
    summary["documents"].sort(key=lambda d: d["doc_id"])
    store.persist(store_path)
    return summary


def build_gateway(
    profiles_config: dict | None,
    mock_script: str | None = None,
    retries: int = 2,
    backoff_base: float = 0.1,
    sleep_fn: Callable[[float], None] | None = None,
) -> Gateway:
    """Assemble a gateway from config. With only a mock script, every
    referenced profile shares one scripted backend."""
    backends: dict[str, Any] = {}
    shared_mock = MockBackend.from_file(mock_script) if mock_script else None
    for name, cfg in (profiles_config or {}).items():
        kind = cfg.get("kind", "mock")
        if kind == "mock":
            backend = (
                MockBackend.from_file(cfg["script"]) if cfg.get("script") else shared_mock
            )
            if backend is None:
                raise ConfigError(f"profile {name!r} is a mock but no script was given")
            backends[name] = backend
        elif kind == "http":
            api_key = cfg.get("api_key")
            if not api_key and cfg.get("api_key_env"):
                api_key = os.environ.get(cfg["api_key_env"])
            backends[name] = HttpBackend(
                endpoint=cfg["endpoint"], model=cfg.get("model", "default"), api_key=api_key
            )
        else:
            raise ConfigError(f"profile {name!r} has unknown backend kind {kind!r}")
    if not backends:
        if shared_mock is None:
            raise ConfigError("no gateway profiles configured and no mock script given")
        backends["default"] = shared_mock
    kwargs: dict[str, Any] = {"retries": retries, "backoff_base": backoff_base}
    if sleep_fn is not None:
        kwargs["sleep_fn"] = sleep_fn
    return Gateway(backends, **kwargs)


def extract_corpus(
    store: VectorStore,
    schema: Schema,
    gateway_factory: Callable[[], Gateway],
    rev_config: RevConfig | None = None,
    rules: RuleTable | None = None,
    jobs: int = 1,
) -> tuple[list[dict], list[dict], list[dict]]:
    """Run the extraction loop over every document in the store.

    Each document gets its own gateway (and therefore its own mock replay
    state and audit log), so results and logs are deterministic even when
    documents run in parallel. Returns (record dicts, loop audit events,
    gateway audit entries) with documents in sorted doc_id order.
    """
    rev_config = rev_config or RevConfig()
    doc_ids = store.doc_ids()

    def run_one(doc_id: str) -> tuple[str, list, list, list]:
        gateway = gateway_factory()
        audit: list[dict] = []
        records = rev_run(doc_id, schema, store, gateway, rev_config, rules, audit)
        return doc_id, records, audit, gateway.audit.entries

    results: dict[str, tuple] = {}
    if jobs > 1 and len(doc_ids) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            for outcome in pool.map(run_one, doc_ids):
                results[outcome[0]] = outcome
    else:
        for doc_id in doc_ids:
            results[doc_id] = run_one(doc_id)

    record_dicts: list[dict] = []
    loop_audit: list[dict] = []
    gateway_audit: list[dict] = []
    for doc_id in doc_ids:
        _, records, audit, gw_entries = results[doc_id]
        record_dicts.extend(record_to_dict(r) for r in records)
        loop_audit.extend(audit)
        gateway_audit.extend(gw_entries)
    return record_dicts, loop_audit, gateway_audit


def aggregate_records(
    record_dicts: list[dict],
    schema: Schema,
    precision: int = 2,
    canon_map: CanonMap | None = None,
    rules: RuleTable | None = None,
) -> AggregateResult:
    records = [record_from_dict(r) for r in record_dicts]
    config = AggregationConfig(precision=precision, canon_map=canon_map, rules=rules)
    return aggregate(records, schema, config)


def evaluate_table(
    table_payload: Any,
    ground_truth_path: str,
    schema: Schema,
    match_config: MatchConfig | None = None,
) -> Metrics:
    ext_rows = rows_from_table_json(table_payload)
    if ground_truth_path.endswith(".csv"):
        gt_rows = rows_from_csv(ground_truth_path, schema)
    else:
        with open(ground_truth_path, "r", encoding="utf-8") as fh:
            gt_rows = rows_from_table_json(json.load(fh))
    return evaluate_rows(gt_rows, ext_rows, schema, match_config)


def text_report(label: str, metrics: Metrics) -> str:
    """Fixed-width metrics table, one labeled row per dataset."""
    header = f"{'dataset':<16}{'P':>8}{'R':>8}{'F1':>8}{'Acc':>8}"
    row = (
        f"{label:<16}{metrics.precision:>8.3f}{metrics.recall:>8.3f}"
        f"{metrics.f1:>8.3f}{metrics.accuracy:>8.3f}"
    )
    return header + "\n" + row


@dataclass
class RunPlan:
    """Parsed and validated run configuration."""

    corpus_paths: list[str]
    schema: Schema
    rev_config: RevConfig
    precision: int = 2
    canon_map: CanonMap | None = None
    rules: RuleTable | None = None
    match_config: MatchConfig = field(default_factory=MatchConfig)
    ground_truth: str | None = None
    gateway_profiles: dict | None = None
    mock_script: str | None = None
    gateway_retries: int = 2
    embedder_kind: str = "hashed"
    embedder_dim: int = 256
    jobs: int = 1


def load_run_plan(path: str) -> RunPlan:
    """Read a run config JSON file and resolve every referenced file path
    relative to the config's directory."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read run config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("run config must be a JSON object")
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(base, p)

    corpus = raw.get("corpus")
    if isinstance(corpus, dict) and "dir" in corpus:
        corpus_paths = [resolve(corpus["dir"])]
    elif isinstance(corpus, list) and corpus:
        corpus_paths = [resolve(p) for p in corpus]
    else:
        raise ConfigError('run config needs "corpus": a path list or {"dir": ...}')

    schema_ref = raw.get("schema")
    if not isinstance(schema_ref, str):
        raise ConfigError('run config needs "schema": a schema file path')
    try:
        with open(resolve(schema_ref), "r", encoding="utf-8") as fh:
            schema = parse_schema(json.load(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read schema: {exc}") from exc

    rev_raw = raw.get("rev", {})
    try:
        rev_config = RevConfig(
            k=int(rev_raw.get("k", 5)),
            max_rounds=int(rev_raw.get("max_rounds", 3)),
            confidence_threshold=float(rev_raw.get("confidence_threshold", 0.7)),
            model_profile=str(rev_raw.get("model_profile", "default")),
        )
    except ValueError as exc:
        raise ConfigError(f"bad rev settings: {exc}") from exc

    agg_raw = raw.get("aggregation", {})
    canon_map = None
    if agg_raw.get("canon_map"):
        canon_map = CanonMap.from_file(resolve(agg_raw["canon_map"]))
    rules = None
    if agg_raw.get("unit_rules"):
        rules = load_rules(resolve(agg_raw["unit_rules"]))

    eval_raw = raw.get("evaluation", {})
    match_config = MatchConfig(
        numeric_rel_tol=float(eval_raw.get("numeric_rel_tol", 0.05)),
        numeric_abs_tol=float(eval_raw.get("numeric_abs_tol", 1e-6)),
        string_normalizer=str(eval_raw.get("string_normalizer", "casefold_trim")),
        candidate_threshold=float(eval_raw.get("candidate_threshold", 0.5)),
        accuracy_fields=str(eval_raw.get("accuracy_fields", "non_key")),
        canon_map=canon_map,
    )
    ground_truth = eval_raw.get("ground_truth")

    gw_raw = raw.get("gateway", {})
    store_raw = raw.get("store", {})
    return RunPlan(
        corpus_paths=corpus_paths,
        schema=schema,
        rev_config=rev_config,
        precision=int(agg_raw.get("precision", 2)),
        canon_map=canon_map,
        rules=rules,
        match_config=match_config,
        ground_truth=resolve(ground_truth) if ground_truth else None,
        gateway_profiles=gw_raw.get("profiles"),
        mock_script=resolve(gw_raw["mock_script"]) if gw_raw.get("mock_script") else None,
        gateway_retries=int(gw_raw.get("retries", 2)),
        embedder_kind=str(store_raw.get("embedder", "hashed")),
        embedder_dim=int(store_raw.get("dim", 256)),
        jobs=int(raw.get("jobs", 1)),
    )


def run_all(plan: RunPlan, out_dir: str) -> dict:
    """Execute every stage and write all artifacts under out_dir.

    Returns a summary dict (also written as run_summary.json).
    """
    os.makedirs(out_dir, exist_ok=True)
    store_path = os.path.join(out_dir, "store.json")
    summary = {"schema_id": plan.schema.schema_id}

    embedder = make_embedder(plan.embedder_kind, plan.embedder_dim)
    ingest_summary = ingest(plan.corpus_paths, store_path, embedder)
    summary["ingest"] = ingest_summary

    store = VectorStore.load(store_path)

    def gateway_factory() -> Gateway:
        return build_gateway(
            plan.gateway_profiles, plan.mock_script, retries=plan.gateway_retries
        )

    record_dicts, loop_audit, gateway_audit = extract_corpus(
        store, plan.schema, gateway_factory, plan.rev_config, plan.rules, plan.jobs
    )
    write_jsonl(os.path.join(out_dir, "records.jsonl"), record_dicts)
    write_jsonl(os.path.join(out_dir, "rev_audit.jsonl"), loop_audit)
    write_jsonl(os.path.join(out_dir, "gateway_audit.jsonl"), gateway_audit)
    summary["records"] = len(record_dicts)

    result = aggregate_records(
        record_dicts, plan.schema, plan.precision, plan.canon_map, plan.rules
    )
    write_json(os.path.join(out_dir, "table.json"), table_to_json(result.table))
    write_jsonl(os.path.join(out_dir, "conflicts.jsonl"), result.conflict_log)
    summary["table_rows"] = len(result.table)
    summary["conflicts"] = len(result.conflict_log)
    summary["integrity_violations"] = result.violations

    if plan.ground_truth:
        metrics = evaluate_table(
            table_to_json(result.table), plan.ground_truth, plan.schema, plan.match_config
        )
        write_json(os.path.join(out_dir, "metrics.json"), metrics.to_dict())
        summary["metrics"] = metrics.to_dict()

    write_json(os.path.join(out_dir, "run_summary.json"), summary)
    return summary
