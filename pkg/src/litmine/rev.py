"""Closed retrieve, extract, verify loop over one document.

Round 1 retrieves evidence for every schema field and asks the model for
all rows at once. Each later round re-queries only what is still pending
(null or low-confidence fields), anchored on the key values already
accepted for that record, and stops as soon as every record is complete
or the round budget is spent. Every value keeps provenance back to the
store entries it was extracted from and the round that produced it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from .gateway import Gateway, PromptRequest, request_fingerprint
from .schema import CoercionFailure, FieldSpec, Schema, coerce_value
from .store import QueryResult, VectorStore
from . import units as units_mod

NULL_REASONS = ("absent_in_evidence", "coercion_failed", "unresolved_conflict")


@dataclass(frozen=True)
class EvidenceRef:
    """Pointer from a value back to one store entry."""

    entry_id: str
    modality: str
    ref: Any


@dataclass(frozen=True)
class Provenance:
    doc_id: str
    round: int
    evidence: tuple[EvidenceRef, ...]


@dataclass
class ExtractionRecord:
    """One experimental condition extracted from one document.

    values maps every schema field to a typed value or None; confidence
    holds entries only for non-null values; null_reasons explains each
    remaining None.
    """

    record_id: str
    doc_id: str
    values: dict[str, Any] = field(default_factory=dict)
    units: dict[str, str] = field(default_factory=dict)
    confidence: dict[str, float] = field(default_factory=dict)
    provenance: dict[str, Provenance] = field(default_factory=dict)
    null_reasons: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class RevConfig:
    k: int = 5
    max_rounds: int = 3
    confidence_threshold: float = 0.7
    model_profile: str = "default"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError("confidence_threshold must be within [0, 1]")


@dataclass(frozen=True)
class EvidenceItem:
    """A retrieved store entry resolved to its promptable text."""

    entry_id: str
    modality: str
    ref: Any
    text: str


@dataclass
class VerificationReport:
    complete: bool
    pending: dict[str, list[str]]
    low_confidence: list[tuple[str, str]]


def _format_value(value: Any) -> str:
    if isinstance(value, list):
        return "; ".join(str(v) for v in value)
    return str(value)


def _field_descriptor(spec: FieldSpec) -> str:
    dtype = spec.dtype if spec.unit is None else f"{spec.dtype} in {spec.unit}"
    parts = [dtype]
    if spec.is_key:
        parts.append("key")
    if spec.required:
        parts.append("required")
    if spec.range is not None:
        parts.append(f"range {spec.range[0]:g} to {spec.range[1]:g}")
    if spec.vocabulary is not None:
        parts.append("one of " + " | ".join(spec.vocabulary))
    return f"- {spec.name} ({', '.join(parts)}): {spec.description or spec.name}"


def formulate_queries(
    schema: Schema,
    fields: list[str] | None = None,
    prior: ExtractionRecord | None = None,
) -> list[str]:
    """One retrieval query per target field.

    Each query names the field, its dtype and unit, and its description.
    With a prior record, the values of already-filled key fields are
    appended as context anchors so follow-ups land near the right
    experimental condition.
    """
    names = fields if fields is not None else schema.field_names()
    anchor = ""
    if prior is not None:
        known = [
            f"{k}={_format_value(prior.values[k])}"
            for k in schema.key_fields()
            if prior.values.get(k) is not None
        ]
        if known:
            anchor = " [known: " + "; ".join(known) + "]"
    queries = []
    for name in names:
        spec = schema.field(name)
        dtype = spec.dtype if spec.unit is None else f"{spec.dtype}, {spec.unit}"
        queries.append(f"{name} ({dtype}): {spec.description or name}{anchor}")
    return queries


EXTRACT_SYSTEM = (
    "You extract structured experimental records from scientific papers. "
    "Reply with a single JSON object and nothing else. Cite the evidence ids "
    "that support every value you report."
)

_REPLY_SHAPE = (
    'Reply with JSON: {"rows": [{"<field>": {"value": <value or null>, '
    '"confidence": <0 to 1>, "evidence": ["<evidence id>"]}}]}\n'
    "Use null when the evidence does not state a value. "
    "Do not invent fields or evidence ids."
)


def _evidence_block(evidence: list[EvidenceItem]) -> str:
    lines = [f"[{e.entry_id}] ({e.modality}) {e.text}" for e in evidence]
    return "Evidence:\n" + "\n\n".join(lines)


def build_extract_prompt(
    schema: Schema,
    evidence: list[EvidenceItem],
    model_profile: str = "default",
) -> PromptRequest:
    """Round-1 prompt: the whole schema against the whole evidence set."""
    field_lines = "\n".join(_field_descriptor(f) for f in schema.fields)
    user = (
        f"Extraction schema {schema.schema_id!r}. Fields:\n{field_lines}\n\n"
        + _evidence_block(evidence)
        + "\n\nReport every distinct experimental condition as one row.\n"
        + _REPLY_SHAPE
    )
    return PromptRequest(model_profile=model_profile, system=EXTRACT_SYSTEM, user=user)


def build_fill_prompt(
    schema: Schema,
    record: ExtractionRecord,
    fields: list[str],
    evidence: list[EvidenceItem],
    model_profile: str = "default",
) -> PromptRequest:
    """Follow-up prompt: only the pending fields of one record, anchored on
    its accepted values."""
    field_lines = "\n".join(_field_descriptor(schema.field(name)) for name in fields)
    known = [
        f"- {name} = {_format_value(record.values[name])}"
        for name in schema.field_names()
        if name not in fields and record.values.get(name) is not None
    ]
    known_block = ("Known values for this record:\n" + "\n".join(known) + "\n\n") if known else ""
    user = (
        f"Extraction schema {schema.schema_id!r}. Fields:\n{field_lines}\n\n"
        + known_block
        + _evidence_block(evidence)
        + "\n\nFill only the listed fields for this single record.\n"
        + _REPLY_SHAPE
    )
    return PromptRequest(model_profile=model_profile, system=EXTRACT_SYSTEM, user=user)


class RowsShape:
    """Structured-output target for extraction replies.

    Checks structure only: a rows list of objects keyed by known field
    names, each cell an object with a value plus optional confidence and
    evidence list. Value typing happens later, a single bad value should
    null one field, not reject the whole reply.
    """

    def __init__(self, schema: Schema):
        self.schema = schema

    def validate(self, payload: Any) -> list[dict[str, dict]]:
        if not isinstance(payload, dict):
            raise ValueError("expected a JSON object")
        unknown = set(payload) - {"rows"}
        if unknown:
            raise ValueError(f"unknown keys {sorted(unknown)}")
        rows = payload.get("rows")
        if not isinstance(rows, list):
            raise ValueError('missing "rows" list')
        known_fields = set(self.schema.field_names())
        out = []
        for i, row in enumerate(rows):
            if not isinstance(row, dict):
                raise ValueError(f"rows[{i}]: expected object")
            unknown = set(row) - known_fields
            if unknown:
                raise ValueError(f"rows[{i}]: unknown fields {sorted(unknown)}")
            cells = {}
            for name, cell in row.items():
                loc = f"rows[{i}].{name}"
                if not isinstance(cell, dict):
                    raise ValueError(f"{loc}: expected object with a value")
                extra = set(cell) - {"value", "confidence", "evidence"}
                if extra:
                    raise ValueError(f"{loc}: unknown keys {sorted(extra)}")
                if "value" not in cell:
                    raise ValueError(f"{loc}: missing value")
                conf = cell.get("confidence")
                if conf is not None and (
                    isinstance(conf, bool) or not isinstance(conf, (int, float))
                ):
                    raise ValueError(f"{loc}: confidence must be a number")
                ev = cell.get("evidence")
                if ev is not None and (
                    not isinstance(ev, list) or any(not isinstance(x, str) for x in ev)
                ):
                    raise ValueError(f"{loc}: evidence must be a list of ids")
                cells[name] = cell
            out.append(cells)
        return out


def _integrate_cell(
    record: ExtractionRecord,
    spec: FieldSpec,
    cell: dict,
    evidence: list[EvidenceItem],
    round_no: int,
) -> None:
    """Fold one reply cell into a record: coerce, attach provenance, and
    penalize uncited values."""
    name = spec.name
    raw = cell.get("value")
    if raw is None:
        record.values[name] = None
        record.confidence.pop(name, None)
        record.null_reasons[name] = "absent_in_evidence"
        return
    try:
        coerced = coerce_value(spec, raw)
    except CoercionFailure:
        record.values[name] = None
        record.confidence.pop(name, None)
        record.null_reasons[name] = "coercion_failed"
        return
    known_ids = {e.entry_id: e for e in evidence}
    cited = [known_ids[eid] for eid in cell.get("evidence") or [] if eid in known_ids]
    conf = cell.get("confidence")
    conf = 1.0 if conf is None else max(0.0, min(1.0, float(conf)))
    if cited:
        refs = tuple(EvidenceRef(e.entry_id, e.modality, e.ref) for e in cited)
    else:
        # value reported without a usable citation: keep it but charge for it
        refs = tuple(EvidenceRef(e.entry_id, e.modality, e.ref) for e in evidence)
        conf = max(0.0, conf - 0.1)
    record.values[name] = coerced.value
    record.confidence[name] = conf
    if coerced.unit is not None:
        record.units[name] = coerced.unit
    record.provenance[name] = Provenance(doc_id=record.doc_id, round=round_no, evidence=refs)
    record.null_reasons.pop(name, None)


def _new_record(schema: Schema, doc_id: str, index: int) -> ExtractionRecord:
    record = ExtractionRecord(record_id=f"{doc_id}:r{index}", doc_id=doc_id)
    for name in schema.field_names():
        record.values[name] = None
    return record


def extract(
    evidence: list[EvidenceItem],
    schema: Schema,
    gateway: Gateway,
    *,
    doc_id: str,
    model_profile: str = "default",
    round_no: int = 1,
    start_index: int = 0,
) -> tuple[list[ExtractionRecord], str]:
    """One whole-schema extraction call. Returns the new records and the
    request fingerprint (for audit)."""
    request = build_extract_prompt(schema, evidence, model_profile)
    result = gateway.complete_structured(request, RowsShape(schema))
    records = []
    for i, row in enumerate(result.value):
        record = _new_record(schema, doc_id, start_index + i)
        for name, cell in row.items():
            _integrate_cell(record, schema.field(name), cell, evidence, round_no)
        records.append(record)
    return records, request_fingerprint(request)


def verify(
    records: list[ExtractionRecord],
    schema: Schema,
    config: RevConfig,
    rules: units_mod.RuleTable | None = None,
) -> VerificationReport:
    """Deterministic checks plus pending-field bookkeeping.

    A value outside its declared range, or carrying a unit that no rule
    can convert to the field's unit, has its confidence reset to 0 (the
    value is kept for the audit trail). A record is pending on every null
    field and every field below the confidence threshold. The report is
    complete when no record has a null required field and every recorded
    confidence clears the threshold.
    """
    if rules is None:
        rules = units_mod.default_rules()
    pending: dict[str, list[str]] = {}
    low_confidence: list[tuple[str, str]] = []
    complete = True
    for record in records:
        record_pending: list[str] = []
        for spec in schema.fields:
            value = record.values.get(spec.name)
            if value is None:
                record_pending.append(spec.name)
                if spec.required:
                    complete = False
                continue
            failed = not spec.in_range(value)
            unit = record.units.get(spec.name)
            if (
                not failed
                and unit is not None
                and spec.unit is not None
                and not rules.can_convert(unit, spec.unit)
            ):
                failed = True
            if failed:
                record.confidence[spec.name] = 0.0
            if record.confidence.get(spec.name, 1.0) < config.confidence_threshold:
                record_pending.append(spec.name)
                low_confidence.append((record.record_id, spec.name))
                complete = False
        if record_pending:
            pending[record.record_id] = record_pending
    return VerificationReport(complete=complete, pending=pending, low_confidence=low_confidence)


def _dedup_evidence(result_lists: list[list[QueryResult]], store: VectorStore) -> list[EvidenceItem]:
    items: dict[str, EvidenceItem] = {}
    for results in result_lists:
        for r in results:
            if r.entry_id not in items:
                entry = store.get_entry(r.entry_id)
                items[r.entry_id] = EvidenceItem(
                    entry_id=entry.entry_id,
                    modality=entry.modality,
                    ref=entry.ref,
                    text=entry.text_surrogate,
                )
    return list(items.values())


def _key_compatible(schema: Schema, record: ExtractionRecord, row: dict) -> bool:
    """A reply row may attach to a record unless a non-null key value
    contradicts one the record already holds."""
    for name in schema.key_fields():
        if name not in row:
            continue
        raw = row[name].get("value")
        if raw is None or record.values.get(name) is None:
            continue
        try:
            coerced = coerce_value(schema.field(name), raw).value
        except CoercionFailure:
            continue
        if coerced != record.values[name]:
            return False
    return True


def run(
    document_id: str,
    schema: Schema,
    store: VectorStore,
    gateway: Gateway,
    config: RevConfig | None = None,
    rules: units_mod.RuleTable | None = None,
    audit: list[dict] | None = None,
) -> list[ExtractionRecord]:
    """Run the full loop for one already-indexed document.

    Returns the extraction records in creation order. If ``audit`` is a
    list, one event dict per retrieval, extraction and verification step
    is appended to it (JSON-serializable, suitable for a JSON-lines
    trail).
    """
    config = config or RevConfig()
    if not any(e.doc_id == document_id for e in store.entries):
        raise ValueError(f"document {document_id!r} has no entries in the store")
    events = audit if audit is not None else []
    records: list[ExtractionRecord] = []
    doc_filter = {"doc_id": document_id}

    def note(event: dict) -> None:
        events.append(event)

    pending_snapshot: dict[str, list[str]] = {}
    for round_no in range(1, config.max_rounds + 1):
        note({"event": "round", "doc_id": document_id, "round": round_no})
        if round_no == 1:
            queries = formulate_queries(schema)
            result_lists = [store.query(q, config.k, dict(doc_filter)) for q in queries]
            evidence = _dedup_evidence(result_lists, store)
            note(
                {
                    "event": "retrieval",
                    "doc_id": document_id,
                    "round": round_no,
                    "target": None,
                    "queries": queries,
                    "results": [[r.entry_id for r in rl] for rl in result_lists],
                }
            )
            new_records, fingerprint = extract(
                evidence,
                schema,
                gateway,
                doc_id=document_id,
                model_profile=config.model_profile,
                round_no=round_no,
            )
            records.extend(new_records)
            note(
                {
                    "event": "extraction",
                    "doc_id": document_id,
                    "round": round_no,
                    "target": None,
                    "fingerprint": fingerprint,
                    "rows": len(new_records),
                    "new_records": [r.record_id for r in new_records],
                    "filled": {},
                }
            )
        else:
            for record in list(records):
                fields = pending_snapshot.get(record.record_id, [])
                if not fields:
                    continue
                queries = formulate_queries(schema, fields, prior=record)
                result_lists = [store.query(q, config.k, dict(doc_filter)) for q in queries]
                evidence = _dedup_evidence(result_lists, store)
                note(
                    {
                        "event": "retrieval",
                        "doc_id": document_id,
                        "round": round_no,
                        "target": record.record_id,
                        "queries": queries,
                        "results": [[r.entry_id for r in rl] for rl in result_lists],
                    }
                )
                request = build_fill_prompt(schema, record, fields, evidence, config.model_profile)
                result = gateway.complete_structured(request, RowsShape(schema))
                filled: dict[str, list[str]] = {}
                new_ids: list[str] = []
                attached = False
                for row in result.value:
                    if not attached and _key_compatible(schema, record, row):
                        attached = True
                        touched = []
                        for name, cell in row.items():
                            if name in fields:
                                _integrate_cell(
                                    record, schema.field(name), cell, evidence, round_no
                                )
                                touched.append(name)
                        if touched:
                            filled[record.record_id] = touched
                    else:
                        fresh = _new_record(schema, document_id, len(records))
                        for name, cell in row.items():
                            _integrate_cell(fresh, schema.field(name), cell, evidence, round_no)
                        records.append(fresh)
                        new_ids.append(fresh.record_id)
                note(
                    {
                        "event": "extraction",
                        "doc_id": document_id,
                        "round": round_no,
                        "target": record.record_id,
                        "fingerprint": request_fingerprint(request),
                        "rows": len(result.value),
                        "new_records": new_ids,
                        "filled": filled,
                    }
                )
        report = verify(records, schema, config, rules)
        pending_snapshot = {k: list(v) for k, v in report.pending.items()}
        note(
            {
                "event": "verify",
                "doc_id": document_id,
                "round": round_no,
                "pending": report.pending,
                "complete": report.complete,
            }
        )
        if report.complete:
            break

    for record in records:
        for name in schema.field_names():
            if record.values.get(name) is None and name not in record.null_reasons:
                record.null_reasons[name] = "absent_in_evidence"
    return records


def record_to_dict(record: ExtractionRecord) -> dict:
    """JSON wire shape for one record."""
    return {
        "record_id": record.record_id,
        "doc_id": record.doc_id,
        "values": dict(record.values),
        "units": dict(record.units),
        "confidence": dict(record.confidence),
        "provenance": {
            name: {
                "doc_id": p.doc_id,
                "round": p.round,
                "evidence": [
                    {"entry_id": e.entry_id, "modality": e.modality, "ref": e.ref}
                    for e in p.evidence
                ],
            }
            for name, p in record.provenance.items()
        },
        "null_reasons": dict(record.null_reasons),
    }


def record_from_dict(raw: dict) -> ExtractionRecord:
    """Inverse of record_to_dict."""
    provenance = {}
    for name, p in (raw.get("provenance") or {}).items():
        provenance[name] = Provenance(
            doc_id=p["doc_id"],
            round=p["round"],
            evidence=tuple(
                EvidenceRef(e["entry_id"], e["modality"], e.get("ref")) for e in p["evidence"]
            ),
        )
    return ExtractionRecord(
        record_id=raw["record_id"],
        doc_id=raw["doc_id"],
        values=dict(raw.get("values") or {}),
        units=dict(raw.get("units") or {}),
        confidence={k: float(v) for k, v in (raw.get("confidence") or {}).items()},
        provenance=provenance,
        null_reasons=dict(raw.get("null_reasons") or {}),
    )
