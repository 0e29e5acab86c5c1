"""Corpus-level reduce: canonicalize terms, normalize units, group records
by key fields and vote out one value per field.

The whole stage is deterministic: group order, support order and conflict
candidate order are all sorted, so the output table is byte-identical no
matter how the input records were ordered, and feeding a table's own
records back through produces the same table again.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Any, Iterable

from .rev import ExtractionRecord
from .schema import Schema
from .units import NoConversionPath, RuleTable, default_rules


class AggregateError(Exception):
    pass


class CanonMapError(AggregateError):
    pass


@dataclass(frozen=True)
class CanonMap:
    """Variant spelling to canonical term map.

    Every canonical target must be a fixed point (a canonical term that
    appears as a key maps to itself), so applying the map twice equals
    applying it once.
    """

    entries: dict[str, str] = field(default_factory=dict)
    source: str = "static"

    def __post_init__(self):
        for variant, canonical in self.entries.items():
            if self.entries.get(canonical, canonical) != canonical:
                raise CanonMapError(
                    f"canonical term {canonical!r} (for {variant!r}) is itself remapped"
                )

    def apply(self, term: str) -> str:
        return self.entries.get(term, term)

    @classmethod
    def from_file(cls, path: str) -> "CanonMap":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict) or not isinstance(raw.get("entries"), dict):
            raise CanonMapError("canon map file must be an object with an entries map")
        return cls(entries=dict(raw["entries"]), source=str(raw.get("source", "static")))

    def merge_proposals(self, proposals: dict[str, str]) -> tuple["CanonMap", list[str]]:
        """Fold in new variant mappings, refusing any that would break the
        fixed-point invariant. Returns the merged map and the rejected
        variants."""
        merged = dict(self.entries)
        rejected = []
        for variant, canonical in sorted(proposals.items()):
            if variant == canonical:
                continue
            candidate = dict(merged)
            candidate[variant] = canonical
            ok = all(
                candidate.get(c, c) == c for c in candidate.values()
            )
            if ok:
                merged = candidate
            else:
                rejected.append(variant)
        return CanonMap(entries=merged, source=self.source), rejected


def _copy_record(record: ExtractionRecord) -> ExtractionRecord:
    return ExtractionRecord(
        record_id=record.record_id,
        doc_id=record.doc_id,
        values=copy.deepcopy(record.values),
        units=dict(record.units),
        confidence=dict(record.confidence),
        provenance=dict(record.provenance),
        null_reasons=dict(record.null_reasons),
    )


def canonicalize(
    records: list[ExtractionRecord], canon_map: CanonMap
) -> list[ExtractionRecord]:
    """Rewrite field names and string values through the canon map.

    When two field names collapse to the same canonical name, an already
    canonical name wins; otherwise the first in sorted order does.
    Records are copied, inputs are never mutated.
    """
    out = []
    for record in records:
        fresh = _copy_record(record)
        # canonical names first so a variant can never displace one
        order = sorted(fresh.values, key=lambda n: (canon_map.apply(n) != n, n))
        renamed: dict[str, Any] = {}
        for name in order:
            target = canon_map.apply(name)
            value = fresh.values[name]
            if target not in renamed or (renamed[target] is None and value is not None):
                renamed[target] = value
        for mapping in (fresh.units, fresh.confidence, fresh.provenance, fresh.null_reasons):
            for name in sorted(list(mapping), key=lambda n: (canon_map.apply(n) != n, n)):
                target = canon_map.apply(name)
                if target != name and target not in mapping:
                    mapping[target] = mapping.pop(name)
        fresh.values = {
            k: canon_map.apply(v) if isinstance(v, str) else v for k, v in renamed.items()
        }
        out.append(fresh)
    return out


def normalize_units(
    records: list[ExtractionRecord], schema: Schema, rules: RuleTable | None = None
) -> tuple[list[ExtractionRecord], list[dict]]:
    """Convert every valued field to its schema unit via direct rules.

    A value whose detected unit has no rule to the schema unit is nulled
    with reason coercion_failed and reported in the returned conflict
    entries. Values without a detected unit are taken to be canonical
    already.
    """
    rules = rules if rules is not None else default_rules()
    conflicts: list[dict] = []
    out = []
    for record in records:
        fresh = _copy_record(record)
        for spec in schema.fields:
            target_unit = spec.unit
            name = spec.name
            if target_unit is None or name not in fresh.values:
                continue
            value = fresh.values[name]
            if value is None:
                continue
            detected = fresh.units.get(name)
            if detected is None or detected == target_unit:
                if detected is not None:
                    fresh.units[name] = target_unit
                continue
            try:
                if isinstance(value, list):
                    converted: Any = [
                        rules.convert(v, detected, target_unit)
                        if isinstance(v, (int, float)) and not isinstance(v, bool)
                        else v
                        for v in value
                    ]
                elif isinstance(value, (int, float)) and not isinstance(value, bool):
                    converted = rules.convert(value, detected, target_unit)
                else:
                    continue
            except NoConversionPath:
                fresh.values[name] = None
                fresh.confidence.pop(name, None)
                fresh.null_reasons[name] = "coercion_failed"
                conflicts.append(
                    {
                        "kind": "unit_unconvertible",
                        "doc_id": fresh.doc_id,
                        "record_id": fresh.record_id,
                        "field": name,
                        "from_unit": detected,
                        "to_unit": target_unit,
                    }
                )
                continue
            fresh.values[name] = converted
            fresh.units[name] = target_unit
        out.append(fresh)
    return out, conflicts


@dataclass(frozen=True)
class Group:
    key: tuple
    records: tuple[ExtractionRecord, ...]


def _key_component(value: Any, precision: int) -> Any:
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float)):
        return round(float(value), precision)
    return value


def _sortable(value: Any) -> tuple:
    if isinstance(value, bool):
        return (0, int(value))
    if isinstance(value, (int, float)):
        return (1, float(value))
    return (2, str(value))


def group(
    records: list[ExtractionRecord], key_fields: list[str], precision: int = 2
) -> list[Group]:
    """Bucket records by their key-field tuple, numerics compared at the
    given decimal precision. Key values must be non-null; groups come
    back sorted by key."""
    if not key_fields:
        raise AggregateError("at least one key field is required")
    buckets: dict[tuple, list[ExtractionRecord]] = {}
    for record in records:
        parts = []
        for name in key_fields:
            value = record.values.get(name)
            if value is None:
                raise AggregateError(
                    f"record {record.record_id} has null key field {name!r}; "
                    "filter such records before grouping"
                )
            parts.append(_key_component(value, precision))
        buckets.setdefault(tuple(parts), []).append(record)
    ordered = sorted(buckets, key=lambda key: tuple(_sortable(v) for v in key))
    return [Group(key=key, records=tuple(buckets[key])) for key in ordered]


@dataclass(frozen=True)
class Candidate:
    value: Any
    votes: int
    sources: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class ConflictReport:
    field: str
    candidates: tuple[Candidate, ...]
    resolution: str  # majority, deterministic_reject or unresolved_null


@dataclass(frozen=True)
class AggregatedRecord:
    group_key: tuple
    values: dict[str, Any]
    support: dict[str, list[tuple[str, str, Any]]]
    conflicts: tuple[ConflictReport, ...]


def _bucket_key(value: Any, precision: int) -> Any:
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float)):
        return round(float(value), precision)
    if isinstance(value, list):
        return tuple(_bucket_key(v, precision) for v in value)
    return value


def _bucket_value(key: Any) -> Any:
    return list(key) if isinstance(key, tuple) else key


def _candidate_order(candidate: Candidate) -> tuple:
    return (-candidate.votes, json.dumps(candidate.value, sort_keys=True, default=str))


def resolve_conflicts(
    grp: Group, schema: Schema, precision: int = 2
) -> AggregatedRecord:
    """Vote one value per field within a group.

    Votes bucket at the grouping precision; a bucket wins only with a
    strict majority of the eligible votes. Buckets whose representative
    value fails the field's range check are ineligible
    (deterministic_reject); a tie leaves the field null
    (unresolved_null). Every decision that saw more than one bucket, or
    any rejection, is recorded as a conflict.
    """
    key_fields = schema.key_fields()
    values: dict[str, Any] = {}
    support: dict[str, list[tuple[str, str, Any]]] = {}
    conflicts: list[ConflictReport] = []

    for name, key_value in zip(key_fields, grp.key):
        values[name] = key_value
        support[name] = sorted(
            ((r.doc_id, r.record_id, r.values[name]) for r in grp.records),
            key=lambda s: (s[0], s[1]),
        )

    for spec in schema.fields:
        name = spec.name
        if name in values:
            continue
        contributions = [
            (r.doc_id, r.record_id, r.values[name])
            for r in grp.records
            if r.values.get(name) is not None
        ]
        if not contributions:
            values[name] = None
            continue
        buckets: dict[Any, list[tuple[str, str, Any]]] = {}
        for doc_id, record_id, value in contributions:
            buckets.setdefault(_bucket_key(value, precision), []).append(
                (doc_id, record_id, value)
            )
        eligible: dict[Any, list] = {}
        rejected: dict[Any, list] = {}
        for bkey, sources in buckets.items():
            representative = _bucket_value(bkey)
            ok = True
            if isinstance(representative, list):
                ok = all(spec.in_range(v) for v in representative)
            else:
                ok = spec.in_range(representative)
            (eligible if ok else rejected)[bkey] = sources

        all_candidates = tuple(
            sorted(
                (
                    Candidate(
                        value=_bucket_value(bkey),
                        votes=len(sources),
                        sources=tuple(sorted((d, r) for d, r, _ in sources)),
                    )
                    for bkey, sources in buckets.items()
                ),
                key=_candidate_order,
            )
        )
        total = sum(len(s) for s in eligible.values())
        winner = None
        if eligible:
            best = max(eligible, key=lambda k: (len(eligible[k]), ))
            best_votes = len(eligible[best])
            contenders = [k for k, s in eligible.items() if len(s) == best_votes]
            if best_votes * 2 > total:
                # strict majority; with several equally voted buckets none has one
                winner = contenders[0] if len(contenders) == 1 else None

        if winner is not None:
            values[name] = _bucket_value(winner)
            support[name] = sorted(eligible[winner], key=lambda s: (s[0], s[1]))
            if len(buckets) > 1 or rejected:
                conflicts.append(
                    ConflictReport(field=name, candidates=all_candidates, resolution="majority")
                )
        elif not eligible:
            values[name] = None
            conflicts.append(
                ConflictReport(
                    field=name, candidates=all_candidates, resolution="deterministic_reject"
                )
            )
        else:
            values[name] = None
            conflicts.append(
                ConflictReport(
                    field=name, candidates=all_candidates, resolution="unresolved_null"
                )
            )
    return AggregatedRecord(
        group_key=grp.key, values=values, support=support, conflicts=tuple(conflicts)
    )


def integrity_check(
    table: list[AggregatedRecord], known_record_ids: set[str] | None = None
) -> tuple[list[AggregatedRecord], list[dict]]:
    """Verify and repair an aggregated table.

    Checks: no null group-key component, every support source refers to a
    known record (when the id set is given), group keys unique, list
    values free of duplicates. List duplicates are repaired in the
    returned table (first occurrence kept); everything else is reported
    as a violation.
    """
    violations: list[dict] = []
    seen_keys: set[tuple] = set()
    repaired: list[AggregatedRecord] = []
    for row in table:
        if any(v is None for v in row.group_key):
            violations.append(
                {"kind": "null_group_key", "group_key": list(row.group_key)}
            )
        if row.group_key in seen_keys:
            violations.append(
                {"kind": "duplicate_group_key", "group_key": list(row.group_key)}
            )
            continue
        seen_keys.add(row.group_key)
        if known_record_ids is not None:
            for field_name, sources in row.support.items():
                for doc_id, record_id, _ in sources:
                    if record_id not in known_record_ids:
                        violations.append(
                            {
                                "kind": "unknown_source",
                                "group_key": list(row.group_key),
                                "field": field_name,
                                "record_id": record_id,
                            }
                        )
        new_values = dict(row.values)
        for name, value in row.values.items():
            if isinstance(value, list):
                deduped = list(dict.fromkeys(value))
                if len(deduped) != len(value):
                    new_values[name] = deduped
                    violations.append(
                        {
                            "kind": "list_duplicates",
                            "group_key": list(row.group_key),
                            "field": name,
                            "repaired": True,
                        }
                    )
        repaired.append(
            AggregatedRecord(
                group_key=row.group_key,
                values=new_values,
                support=row.support,
                conflicts=row.conflicts,
            )
        )
    return repaired, violations


@dataclass(frozen=True)
class AggregationConfig:
    precision: int = 2
    canon_map: CanonMap | None = None
    rules: RuleTable | None = None


@dataclass(frozen=True)
class AggregateResult:
    table: list[AggregatedRecord]
    conflict_log: list[dict]
    violations: list[dict]


def aggregate(
    records: Iterable[ExtractionRecord],
    schema: Schema,
    config: AggregationConfig | None = None,
) -> AggregateResult:
    """Full reduce: canonicalize, normalize units, drop records that lost a
    key field (logged), group, vote, and integrity-check the result."""
    config = config or AggregationConfig()
    working = list(records)
    if config.canon_map is not None:
        working = canonicalize(working, config.canon_map)
    working, conflict_log = normalize_units(working, schema, config.rules)

    key_fields = schema.key_fields()
    kept: list[ExtractionRecord] = []
    for record in working:
        missing = [k for k in key_fields if record.values.get(k) is None]
        if missing:
            conflict_log.append(
                {
                    "kind": "dropped_record",
                    "doc_id": record.doc_id,
                    "record_id": record.record_id,
                    "null_key_fields": missing,
                }
            )
        else:
            kept.append(record)

    rows = [resolve_conflicts(g, schema, config.precision) for g in group(kept, key_fields, config.precision)] if kept else []
    known_ids = {r.record_id for r in kept}
    table, violations = integrity_check(rows, known_ids)
    for row in table:
        for report in row.conflicts:
            conflict_log.append(
                {
                    "kind": "field_conflict",
                    "group_key": list(row.group_key),
                    "field": report.field,
                    "resolution": report.resolution,
                    "candidates": [
                        {
                            "value": c.value,
                            "votes": c.votes,
                            "sources": [[d, r] for d, r in c.sources],
                        }
                        for c in report.candidates
                    ],
                }
            )
    return AggregateResult(table=table, conflict_log=conflict_log, violations=violations)


def table_to_json(table: list[AggregatedRecord]) -> list[dict]:
    """JSON wire shape of an aggregated table."""
    return [
        {
            "group_key": list(row.group_key),
            "values": dict(row.values),
            "support": {
                name: [[d, r, v] for d, r, v in sources]
                for name, sources in row.support.items()
            },
            "conflicts": [
                {
                    "field": report.field,
                    "resolution": report.resolution,
                    "candidates": [
                        {
                            "value": c.value,
                            "votes": c.votes,
                            "sources": [[d, r] for d, r in c.sources],
                        }
                        for c in report.candidates
                    ],
                }
                for report in row.conflicts
            ],
        }
        for row in table
    ]


def table_from_json(payload: Any) -> list[AggregatedRecord]:
    if isinstance(payload, (str, bytes)):
        payload = json.loads(payload)
    table = []
    for raw in payload:
        table.append(
            AggregatedRecord(
                group_key=tuple(raw["group_key"]),
                values=dict(raw["values"]),
                support={
                    name: [(d, r, v) for d, r, v in sources]
                    for name, sources in raw.get("support", {}).items()
                },
                conflicts=tuple(
                    ConflictReport(
                        field=c["field"],
                        resolution=c["resolution"],
                        candidates=tuple(
                            Candidate(
                                value=cand["value"],
                                votes=cand["votes"],
                                sources=tuple((d, r) for d, r in cand["sources"]),
                            )
                            for cand in c.get("candidates", [])
                        ),
                    )
                    for c in raw.get("conflicts", [])
                ),
            )
        )
    return table


def records_from_table(table: list[AggregatedRecord]) -> list[ExtractionRecord]:
    """Rebuild per-source extraction records from a table's support lists
    and conflict candidates. Feeding them back through aggregate() with
    the same schema and precision reproduces the table."""
    collected: dict[tuple[str, str], dict[str, Any]] = {}

    def slot(doc_id: str, record_id: str) -> dict[str, Any]:
        return collected.setdefault((doc_id, record_id), {})

    for row in table:
        for name, sources in row.support.items():
            for doc_id, record_id, value in sources:
                slot(doc_id, record_id)[name] = value
        for report in row.conflicts:
            for candidate in report.candidates:
                for doc_id, record_id in candidate.sources:
                    slot(doc_id, record_id).setdefault(report.field, candidate.value)

    records = []
    for (doc_id, record_id) in sorted(collected):
        records.append(
            ExtractionRecord(
                record_id=record_id,
                doc_id=doc_id,
                values=collected[(doc_id, record_id)],
            )
        )
    return records
