import json
import random

import pytest

from litmine.aggregate import (
    AggregateError,
    AggregatedRecord,
    AggregationConfig,
    CanonMap,
    CanonMapError,
    aggregate,
    canonicalize,
    group,
    integrity_check,
    normalize_units,
    records_from_table,
    resolve_conflicts,
    table_from_json,
    table_to_json,
)
from litmine.rev import ExtractionRecord


def rec(record_id, doc_id, values, units=None):
    return ExtractionRecord(
        record_id=record_id,
        doc_id=doc_id,
        values=dict(values),
        units=dict(units or {}),
    )


def golden_records():
    """Three records of the same condition; one reports temperature in F."""
    return [
        rec(
            "doc1:r0",
            "doc1",
            {"virus": "MS2", "temperature": 77.0, "humidity": 50.0, "survival_hours": 5.0},
            units={"temperature": "F"},
        ),
        rec(
            "doc2:r0",
            "doc2",
            {"virus": "MS2", "temperature": 25.0, "humidity": 50.0, "survival_hours": 5.0},
        ),
        rec(
            "doc3:r0",
            "doc3",
            {"virus": "MS2", "temperature": 25.0, "humidity": 50.0, "survival_hours": 4.0},
        ),
    ]


class TestCanonMap:
    def test_apply(self):
        cm = CanonMap({"temp.": "temperature", "influenza a virus": "Influenza A"})
        assert cm.apply("temp.") == "temperature"
        assert cm.apply("unmapped") == "unmapped"

    def test_fixed_point_invariant(self):
        with pytest.raises(CanonMapError):
            CanonMap({"a": "b", "b": "c"})
        # self-consistent chain where the target is a fixed point is fine
        CanonMap({"a": "c", "b": "c"})

    def test_idempotent(self):
        cm = CanonMap({"a": "c", "b": "c", "c": "c"})
        for term in ("a", "b", "c", "x"):
            assert cm.apply(cm.apply(term)) == cm.apply(term)

    def test_merge_proposals(self):
        cm = CanonMap({"temp.": "temperature"})
        merged, rejected = cm.merge_proposals(
            {"temp": "temperature", "temperature": "temp"}
        )
        assert merged.apply("temp") == "temperature"
        assert rejected == ["temperature"]
        # original is untouched
        assert cm.apply("temp") == "temp"

    def test_from_file(self, tmp_path):
        path = tmp_path / "canon.json"
        path.write_text(json.dumps({"entries": {"temp.": "temperature"}, "source": "curated"}))
        cm = CanonMap.from_file(str(path))
        assert cm.apply("temp.") == "temperature"
        assert cm.source == "curated"
        path.write_text(json.dumps(["wrong shape"]))
        with pytest.raises(CanonMapError):
            CanonMap.from_file(str(path))


class TestCanonicalize:
    def test_renames_fields_and_values(self):
        cm = CanonMap({"temp.": "temperature", "ms2 phage": "MS2"})
        records = [
            rec("d:r0", "d", {"virus": "ms2 phage", "temp.": 25.0}, units={"temp.": "C"})
        ]
        out = canonicalize(records, cm)
        assert out[0].values == {"virus": "MS2", "temperature": 25.0}
        assert out[0].units == {"temperature": "C"}
        # inputs are never mutated
        assert records[0].values == {"virus": "ms2 phage", "temp.": 25.0}

    def test_variant_cannot_displace_canonical_value(self):
        cm = CanonMap({"temp.": "temperature"})
        records = [rec("d:r0", "d", {"temperature": 25.0, "temp.": 99.0})]
        out = canonicalize(records, cm)
        assert out[0].values == {"temperature": 25.0}

    def test_variant_fills_null_canonical(self):
        cm = CanonMap({"temp.": "temperature"})
        records = [rec("d:r0", "d", {"temperature": None, "temp.": 25.0})]
        out = canonicalize(records, cm)
        assert out[0].values == {"temperature": 25.0}


class TestNormalizeUnits:
    def test_converts_to_schema_unit(self, virus_schema):
        records = [
            rec("d:r0", "d", {"virus": "MS2", "temperature": 77.0}, units={"temperature": "F"})
        ]
        out, conflicts = normalize_units(records, virus_schema)
        assert out[0].values["temperature"] == pytest.approx(25.0, abs=1e-9)
        assert out[0].units["temperature"] == "C"
        assert conflicts == []

    def test_unitless_value_taken_as_canonical(self, virus_schema):
        records = [rec("d:r0", "d", {"temperature": 25.0})]
        out, conflicts = normalize_units(records, virus_schema)
        assert out[0].values["temperature"] == 25.0
        assert conflicts == []

    def test_unconvertible_unit_nulls_and_reports(self, virus_schema):
        records = [
            rec("d:r0", "d", {"temperature": 300.0}, units={"temperature": "PFU"})
        ]
        out, conflicts = normalize_units(records, virus_schema)
        assert out[0].values["temperature"] is None
        assert out[0].null_reasons["temperature"] == "coercion_failed"
        assert conflicts == [
            {
                "kind": "unit_unconvertible",
                "doc_id": "d",
                "record_id": "d:r0",
                "field": "temperature",
                "from_unit": "PFU",
                "to_unit": "C",
            }
        ]

    def test_list_values_convert_elementwise(self, virus_schema):
        # survival_hours has schema unit h
        records = [
            rec("d:r0", "d", {"survival_hours": 120.0}, units={"survival_hours": "min"})
        ]
        out, _ = normalize_units(records, virus_schema)
        assert out[0].values["survival_hours"] == pytest.approx(2.0)

    def test_inputs_not_mutated(self, virus_schema):
        records = [
            rec("d:r0", "d", {"temperature": 77.0}, units={"temperature": "F"})
        ]
        normalize_units(records, virus_schema)
        assert records[0].values["temperature"] == 77.0
        assert records[0].units["temperature"] == "F"


class TestGroup:
    def test_groups_by_rounded_numeric_key(self):
        records = [
            rec("a:r0", "a", {"virus": "MS2", "temperature": 25.001}),
            rec("b:r0", "b", {"virus": "MS2", "temperature": 25.004}),
            rec("c:r0", "c", {"virus": "MS2", "temperature": 25.2}),
        ]
        groups = group(records, ["virus", "temperature"], precision=2)
        assert [g.key for g in groups] == [("MS2", 25.0), ("MS2", 25.2)]
        assert len(groups[0].records) == 2

    def test_groups_sorted_by_key(self):
        records = [
            rec("a:r0", "a", {"virus": "Zika", "temperature": 30.0}),
            rec("b:r0", "b", {"virus": "MS2", "temperature": 30.0}),
            rec("c:r0", "c", {"virus": "MS2", "temperature": 4.0}),
        ]
        groups = group(records, ["virus", "temperature"])
        assert [g.key for g in groups] == [
            ("MS2", 4.0),
            ("MS2", 30.0),
            ("Zika", 30.0),
        ]

    def test_null_key_raises(self):
        records = [rec("a:r0", "a", {"virus": None, "temperature": 25.0})]
        with pytest.raises(AggregateError):
            group(records, ["virus", "temperature"])

    def test_empty_key_fields_rejected(self):
        with pytest.raises(AggregateError):
            group([], [])


class TestResolveConflicts:
    def make_group(self, virus_schema, value_sets):
        records = [
            rec(f"d{i}:r0", f"d{i}", {"virus": "MS2", "temperature": 25.0, **vals})
            for i, vals in enumerate(value_sets)
        ]
        groups = group(records, virus_schema.key_fields())
        assert len(groups) == 1
        return groups[0]

    def test_strict_majority_wins(self, virus_schema):
        grp = self.make_group(
            virus_schema,
            [{"humidity": 50.0}, {"humidity": 50.0}, {"humidity": 40.0}],
        )
        row = resolve_conflicts(grp, virus_schema)
        assert row.values["humidity"] == 50.0
        assert [s[:2] for s in row.support["humidity"]] == [("d0", "d0:r0"), ("d1", "d1:r0")]
        conflict = [c for c in row.conflicts if c.field == "humidity"][0]
        assert conflict.resolution == "majority"
        assert [c.votes for c in conflict.candidates] == [2, 1]

    def test_plurality_without_majority_unresolved(self, virus_schema):
        grp = self.make_group(
            virus_schema,
            [{"humidity": 50.0}, {"humidity": 40.0}],
        )
        row = resolve_conflicts(grp, virus_schema)
        assert row.values["humidity"] is None
        conflict = [c for c in row.conflicts if c.field == "humidity"][0]
        assert conflict.resolution == "unresolved_null"

    def test_out_of_range_bucket_ineligible(self, virus_schema):
        # humidity range is 0..100; 150 is rejected so 50 has 2 of 2 votes
        grp = self.make_group(
            virus_schema,
            [{"humidity": 50.0}, {"humidity": 50.0}, {"humidity": 150.0}],
        )
        row = resolve_conflicts(grp, virus_schema)
        assert row.values["humidity"] == 50.0
        conflict = [c for c in row.conflicts if c.field == "humidity"][0]
        assert conflict.resolution == "majority"
        # the rejected bucket still shows up among candidates
        assert {c.value for c in conflict.candidates} == {50.0, 150.0}

    def test_all_buckets_rejected(self, virus_schema):
        grp = self.make_group(virus_schema, [{"humidity": 150.0}, {"humidity": 200.0}])
        row = resolve_conflicts(grp, virus_schema)
        assert row.values["humidity"] is None
        conflict = [c for c in row.conflicts if c.field == "humidity"][0]
        assert conflict.resolution == "deterministic_reject"

    def test_votes_bucket_at_precision(self, virus_schema):
        grp = self.make_group(
            virus_schema,
            [{"humidity": 50.001}, {"humidity": 50.004}, {"humidity": 40.0}],
        )
        row = resolve_conflicts(grp, virus_schema)
        assert row.values["humidity"] == 50.0

    def test_unanimous_field_has_no_conflict_entry(self, virus_schema):
        grp = self.make_group(virus_schema, [{"humidity": 50.0}, {"humidity": 50.0}])
        row = resolve_conflicts(grp, virus_schema)
        assert row.values["humidity"] == 50.0
        assert row.conflicts == ()

    def test_key_fields_supported_by_all_members(self, virus_schema):
        grp = self.make_group(virus_schema, [{"humidity": 50.0}, {"humidity": 50.0}])
        row = resolve_conflicts(grp, virus_schema)
        assert len(row.support["virus"]) == 2
        assert row.values["virus"] == "MS2"
        assert row.values["temperature"] == 25.0

    def test_field_with_no_contributions_null(self, virus_schema):
        grp = self.make_group(virus_schema, [{}, {}])
        row = resolve_conflicts(grp, virus_schema)
        assert row.values["humidity"] is None
        assert "humidity" not in row.support


class TestIntegrityCheck:
    def row(self, key=("MS2", 25.0), values=None, support=None):
        return AggregatedRecord(
            group_key=key,
            values=values if values is not None else {"virus": "MS2", "temperature": 25.0},
            support=support or {},
            conflicts=(),
        )

    def test_clean_table(self):
        table, violations = integrity_check([self.row()])
        assert violations == []
        assert len(table) == 1

    def test_null_group_key(self):
        _, violations = integrity_check([self.row(key=("MS2", None))])
        assert violations[0]["kind"] == "null_group_key"

    def test_duplicate_group_key_dropped(self):
        table, violations = integrity_check([self.row(), self.row()])
        assert len(table) == 1
        assert violations[0]["kind"] == "duplicate_group_key"

    def test_unknown_source(self):
        row = self.row(support={"virus": [("d", "d:r9", "MS2")]})
        _, violations = integrity_check([row], known_record_ids={"d:r0"})
        assert violations[0]["kind"] == "unknown_source"
        assert violations[0]["record_id"] == "d:r9"

    def test_list_duplicates_repaired(self):
        row = self.row(values={"virus": "MS2", "tags": ["a", "b", "a"]})
        table, violations = integrity_check([row])
        assert table[0].values["tags"] == ["a", "b"]
        assert violations[0]["kind"] == "list_duplicates"


class TestAggregateEndToEnd:
    def test_golden_cross_unit_merge(self, virus_schema):
        result = aggregate(golden_records(), virus_schema)
        assert result.violations == []
        assert len(result.table) == 1
        row = result.table[0]
        assert row.group_key == ("MS2", 25.0)
        assert row.values["temperature"] == pytest.approx(25.0, abs=1e-9)
        assert row.values["humidity"] == 50.0
        # all three records back the key fields
        assert [s[:2] for s in row.support["temperature"]] == [
            ("doc1", "doc1:r0"),
            ("doc2", "doc2:r0"),
            ("doc3", "doc3:r0"),
        ]
        # survival hours split 2 to 1
        assert row.values["survival_hours"] == 5.0
        assert [s[:2] for s in row.support["survival_hours"]] == [
            ("doc1", "doc1:r0"),
            ("doc2", "doc2:r0"),
        ]
        kinds = [c["kind"] for c in result.conflict_log]
        assert "field_conflict" in kinds

    def test_null_key_records_dropped_and_logged(self, virus_schema):
        records = golden_records() + [
            rec("doc4:r0", "doc4", {"virus": None, "temperature": 25.0, "humidity": 50.0})
        ]
        result = aggregate(records, virus_schema)
        assert len(result.table) == 1
        drops = [c for c in result.conflict_log if c["kind"] == "dropped_record"]
        assert drops == [
            {
                "kind": "dropped_record",
                "doc_id": "doc4",
                "record_id": "doc4:r0",
                "null_key_fields": ["virus"],
            }
        ]

    def test_permutation_invariance(self, virus_schema):
        records = golden_records() + [
            rec("doc1:r1", "doc1", {"virus": "MS2", "temperature": 4.0, "humidity": 20.0}),
            rec("doc2:r1", "doc2", {"virus": "Zika", "temperature": 25.0, "humidity": 50.0}),
        ]
        baseline = json.dumps(
            table_to_json(aggregate(records, virus_schema).table), sort_keys=True
        )
        rng = random.Random(7)
        for _ in range(20):
            shuffled = records[:]
            rng.shuffle(shuffled)
            got = json.dumps(
                table_to_json(aggregate(shuffled, virus_schema).table), sort_keys=True
            )
            assert got == baseline

    def test_idempotence_via_records_from_table(self, virus_schema):
        result = aggregate(golden_records(), virus_schema)
        replay = records_from_table(result.table)
        again = aggregate(replay, virus_schema)
        first = json.dumps(table_to_json(result.table), sort_keys=True)
        second = json.dumps(table_to_json(again.table), sort_keys=True)
        assert first == second

    def test_canon_map_applied(self, virus_schema):
        cm = CanonMap({"ms2 phage": "MS2"})
        records = [
            rec("d1:r0", "d1", {"virus": "ms2 phage", "temperature": 25.0, "humidity": 50.0}),
            rec("d2:r0", "d2", {"virus": "MS2", "temperature": 25.0, "humidity": 50.0}),
        ]
        result = aggregate(records, virus_schema, AggregationConfig(canon_map=cm))
        assert len(result.table) == 1
        assert result.table[0].values["virus"] == "MS2"

    def test_empty_input(self, virus_schema):
        result = aggregate([], virus_schema)
        assert result.table == []
        assert result.conflict_log == []


class TestTableJson:
    def test_round_trip(self, virus_schema):
        table = aggregate(golden_records(), virus_schema).table
        payload = table_to_json(table)
        again = table_from_json(payload)
        assert table_to_json(again) == payload
        # serialized form survives an actual JSON encode/decode
        assert table_to_json(table_from_json(json.dumps(payload))) == payload
