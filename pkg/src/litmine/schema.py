"""Extraction schemas: what fields a record has, their types, units and
which of them identify an experimental condition.

A schema comes from a JSON file or is generated from a plain-language
instruction through the gateway and then validated through the exact same
parser, so generated and hand-written schemas obey identical rules.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any

from . import units as units_mod


class SchemaError(Exception):
    pass


class InvalidSchema(SchemaError):
    """Structural problem not covered by a more specific error."""


class UnknownDtype(SchemaError):
    pass


class MissingVocabulary(SchemaError):
    """A categorical field declared no vocabulary."""


class NoKeyField(SchemaError):
    """A schema must mark at least one field as part of the record key."""


class DuplicateFieldName(SchemaError):
    pass


class CoercionFailure(SchemaError, ValueError):
    """A raw value could not be converted to the field's dtype.

    Also a ValueError so structured-output targets can surface it to the
    gateway's repair loop without importing this module.
    """

    def __init__(self, field_name: str, reason: str):
        self.field_name = field_name
        self.reason = reason
        super().__init__(f"{field_name}: {reason}")


SCALAR_DTYPES = ("string", "float", "integer", "boolean", "categorical")
_LIST_RE = re.compile(r"^list_of\((\w+)\)$")


def parse_dtype(raw: str) -> tuple[str, str | None]:
    """Split a dtype spelling into (base, element). Scalars return
    (dtype, None); ``list_of(x)`` returns ("list", x)."""
    if raw in SCALAR_DTYPES:
        return raw, None
    m = _LIST_RE.match(raw or "")
    if m and m.group(1) in SCALAR_DTYPES:
        return "list", m.group(1)
    raise UnknownDtype(f"unknown dtype {raw!r}")


@dataclass(frozen=True)
class FieldSpec:
    """One extraction target within a record."""

    name: str
    dtype: str
    unit: str | None = None
    vocabulary: tuple[str, ...] | None = None
    required: bool = False
    is_key: bool = False
    range: tuple[float, float] | None = None
    description: str = ""

    def __post_init__(self):
        parse_dtype(self.dtype)

    @property
    def base_dtype(self) -> str:
        return parse_dtype(self.dtype)[0]

    @property
    def element_dtype(self) -> str | None:
        return parse_dtype(self.dtype)[1]

    def in_range(self, value: Any) -> bool:
        if self.range is None or not isinstance(value, (int, float)) or isinstance(value, bool):
            return True
        lo, hi = self.range
        return lo <= float(value) <= hi


@dataclass(frozen=True)
class Schema:
    schema_id: str
    fields: tuple[FieldSpec, ...]

    def field(self, name: str) -> FieldSpec:
        for spec in self.fields:
            if spec.name == name:
                return spec
        raise KeyError(f"schema {self.schema_id!r} has no field {name!r}")

    def field_names(self) -> list[str]:
        return [f.name for f in self.fields]

    def key_fields(self) -> list[str]:
        return [f.name for f in self.fields if f.is_key]

    def has_field(self, name: str) -> bool:
        return any(f.name == name for f in self.fields)


_FIELD_KEYS = {
    "name",
    "dtype",
    "unit",
    "vocabulary",
    "required",
    "is_key",
    "range",
    "description",
}
_SCHEMA_KEYS = {"schema_id", "fields"}


def _parse_field(raw: Any, i: int) -> FieldSpec:
    loc = f"fields[{i}]"
    if not isinstance(raw, dict):
        raise InvalidSchema(f"{loc}: expected object")
    unknown = set(raw) - _FIELD_KEYS
    if unknown:
        raise InvalidSchema(f"{loc}: unknown keys {sorted(unknown)}")
    name = raw.get("name")
    if not isinstance(name, str) or not name.strip():
        raise InvalidSchema(f"{loc}: field name must be a non-empty string")
    name = name.strip()
    dtype_raw = raw.get("dtype")
    if not isinstance(dtype_raw, str):
        raise UnknownDtype(f"{loc}: dtype must be a string, got {type(dtype_raw).__name__}")
    base, element = parse_dtype(dtype_raw)

    vocabulary = raw.get("vocabulary")
    if vocabulary is not None:
        if not isinstance(vocabulary, list) or any(not isinstance(v, str) for v in vocabulary):
            raise InvalidSchema(f"{loc}.vocabulary: expected list of strings")
        vocabulary = tuple(vocabulary)
    needs_vocab = base == "categorical" or element == "categorical"
    if needs_vocab and not vocabulary:
        raise MissingVocabulary(f"{loc}: categorical field {name!r} has no vocabulary")

    rng = raw.get("range")
    if rng is not None:
        if (
            not isinstance(rng, list)
            or len(rng) != 2
            or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in rng)
        ):
            raise InvalidSchema(f"{loc}.range: expected [min, max]")
        if rng[0] > rng[1]:
            raise InvalidSchema(f"{loc}.range: min exceeds max")
        rng = (float(rng[0]), float(rng[1]))

    unit = raw.get("unit")
    if unit is not None and not isinstance(unit, str):
        raise InvalidSchema(f"{loc}.unit: expected string")
    description = raw.get("description", "")
    if not isinstance(description, str):
        raise InvalidSchema(f"{loc}.description: expected string")
    required = raw.get("required", False)
    is_key = raw.get("is_key", False)
    if not isinstance(required, bool) or not isinstance(is_key, bool):
        raise InvalidSchema(f"{loc}: required and is_key must be booleans")

    return FieldSpec(
        name=name,
        dtype=dtype_raw,
        unit=units_mod.normalize_symbol(unit),
        vocabulary=vocabulary,
        required=required,
        is_key=is_key,
        range=rng,
        description=description,
    )


def parse_schema(raw: dict | str | bytes) -> Schema:
    """Validate schema JSON. Unknown keys are rejected rather than ignored,
    a misspelled option should fail loudly, not silently change meaning."""
    if isinstance(raw, (str, bytes)):
        raw = json.loads(raw)
    if not isinstance(raw, dict):
        raise InvalidSchema("schema must be a JSON object")
    unknown = set(raw) - _SCHEMA_KEYS
    if unknown:
        raise InvalidSchema(f"unknown keys {sorted(unknown)}")
    schema_id = raw.get("schema_id")
    if not isinstance(schema_id, str) or not schema_id.strip():
        raise InvalidSchema("schema_id must be a non-empty string")
    fields_raw = raw.get("fields")
    if not isinstance(fields_raw, list) or not fields_raw:
        raise InvalidSchema("fields must be a non-empty list")
    fields = [_parse_field(f, i) for i, f in enumerate(fields_raw)]
    seen: set[str] = set()
    for spec in fields:
        if spec.name in seen:
            raise DuplicateFieldName(spec.name)
        seen.add(spec.name)
    if not any(f.is_key for f in fields):
        raise NoKeyField(f"schema {schema_id!r} marks no key fields")
    return Schema(schema_id=schema_id.strip(), fields=tuple(fields))


def serialize_schema(schema: Schema) -> dict:
    out: dict[str, Any] = {"schema_id": schema.schema_id, "fields": []}
    for f in schema.fields:
        item: dict[str, Any] = {"name": f.name, "dtype": f.dtype}
        if f.unit is not None:
            item["unit"] = f.unit
        if f.vocabulary is not None:
            item["vocabulary"] = list(f.vocabulary)
        if f.required:
            item["required"] = True
        if f.is_key:
            item["is_key"] = True
        if f.range is not None:
            item["range"] = [f.range[0], f.range[1]]
        if f.description:
            item["description"] = f.description
        out["fields"].append(item)
    return out


@dataclass(frozen=True)
class Coerced:
    """Typed value plus the unit detected in the raw text, if any."""

    value: Any
    unit: str | None = None


_NUMBER_RE = re.compile(r"^\s*([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)\s*(.*?)\s*$")
_TRUE_WORDS = {"true", "yes", "y", "1"}
_FALSE_WORDS = {"false", "no", "n", "0"}


def _coerce_number(spec: FieldSpec, raw: Any, want_int: bool) -> Coerced:
    unit = None
    if isinstance(raw, str):
        m = _NUMBER_RE.match(raw)
        if not m:
            raise CoercionFailure(spec.name, f"cannot parse number from {raw!r}")
        value = float(m.group(1))
        tail = m.group(2)
        if tail:
            unit = units_mod.normalize_symbol(tail)
            if unit is not None and re.search(r"\d", unit):
                raise CoercionFailure(spec.name, f"unexpected trailing text in {raw!r}")
    elif isinstance(raw, bool):
        raise CoercionFailure(spec.name, "boolean is not a number")
    elif isinstance(raw, (int, float)):
        value = float(raw)
    else:
        raise CoercionFailure(spec.name, f"expected number, got {type(raw).__name__}")
    if value != value or value in (float("inf"), float("-inf")):
        raise CoercionFailure(spec.name, "number is not finite")
    if want_int:
        if value != int(value):
            raise CoercionFailure(spec.name, f"{value} is not an integer")
        return Coerced(int(value), unit)
    return Coerced(value, unit)


def _coerce_scalar(spec: FieldSpec, dtype: str, raw: Any) -> Coerced:
    if dtype == "string":
        if isinstance(raw, str):
            return Coerced(raw.strip())
        if isinstance(raw, (int, float, bool)):
            return Coerced(str(raw))
        raise CoercionFailure(spec.name, f"cannot make a string of {type(raw).__name__}")
    if dtype == "float":
        return _coerce_number(spec, raw, want_int=False)
    if dtype == "integer":
        return _coerce_number(spec, raw, want_int=True)
    if dtype == "boolean":
        if isinstance(raw, bool):
            return Coerced(raw)
        if isinstance(raw, str):
            word = raw.strip().lower()
            if word in _TRUE_WORDS:
                return Coerced(True)
            if word in _FALSE_WORDS:
                return Coerced(False)
        raise CoercionFailure(spec.name, f"cannot read {raw!r} as boolean")
    if dtype == "categorical":
        if not isinstance(raw, str):
            raise CoercionFailure(spec.name, "categorical values must be strings")
        cleaned = raw.strip()
        assert spec.vocabulary is not None
        for entry in spec.vocabulary:
            if entry.casefold() == cleaned.casefold():
                return Coerced(entry)
        raise CoercionFailure(
            spec.name, f"{cleaned!r} is not in vocabulary {list(spec.vocabulary)}"
        )
    raise UnknownDtype(dtype)


def coerce_value(spec: FieldSpec, raw: Any) -> Coerced:
    """Convert a raw extracted value to the field's dtype.

    Numeric strings may carry a trailing unit ("25 C" gives value 25.0,
    unit "C"). None passes through as a null. Failure raises
    CoercionFailure, the caller decides whether that nulls the field or
    invalidates the payload.
    """
    if raw is None:
        return Coerced(None)
    base, element = parse_dtype(spec.dtype)
    if base != "list":
        return _coerce_scalar(spec, base, raw)
    if isinstance(raw, str):
        items: list[Any] = [p.strip() for p in raw.split(";") if p.strip()]
    elif isinstance(raw, list):
        items = raw
    else:
        raise CoercionFailure(spec.name, f"expected list, got {type(raw).__name__}")
    coerced = [_coerce_scalar(spec, element, item) for item in items]
    item_units = {c.unit for c in coerced if c.unit is not None}
    unit = item_units.pop() if len(item_units) == 1 else None
    return Coerced([c.value for c in coerced], unit)


def value_to_string(spec: FieldSpec, value: Any) -> str:
    """Canonical string form of a coerced value, the inverse direction of
    coerce_value for round-trip checks."""
    if value is None:
        return ""
    if isinstance(value, list):
        return "; ".join(str(v) for v in value)
    return str(value)


class RecordShape:
    """Structured-output target for a flat record keyed by schema fields.

    validate() raises ValueError on structural problems (non-object,
    unknown field names) and CoercionFailure when a present value cannot
    be typed. Both invalidate the payload, the gateway may then attempt a
    repair round.
    """

    def __init__(self, schema: Schema):
        self.schema = schema

    def validate(self, payload: Any) -> dict[str, Any]:
        if not isinstance(payload, dict):
            raise ValueError("expected a JSON object")
        unknown = set(payload) - set(self.schema.field_names())
        if unknown:
            raise ValueError(f"unknown fields {sorted(unknown)}")
        out: dict[str, Any] = {}
        for name, raw in payload.items():
            out[name] = coerce_value(self.schema.field(name), raw).value
        return out


_GENERATE_SYSTEM = (
    "You design extraction schemas for structured scientific data. "
    "Reply with a single JSON object and nothing else."
)

_GENERATE_TEMPLATE = """Design an extraction schema for this instruction:

{instruction}

Reply with JSON of this exact shape:
{{"schema_id": "<snake_case_id>", "fields": [{{"name": "<snake_case>", "dtype": "string|float|integer|boolean|categorical|list_of(<scalar>)", "unit": "<optional canonical unit>", "vocabulary": ["<required for categorical>"], "required": true, "is_key": true, "range": [<min>, <max>], "description": "<one line>"}}]}}

Omit optional keys you do not need. Mark the fields that jointly identify one
experimental condition with "is_key": true; at least one field must be a key.
"""


@dataclass(frozen=True)
class GeneratedSchema:
    schema: Schema
    raw_text: str
    repairs: int


class SchemaInvalidAfterRepair(SchemaError):
    def __init__(self, last_error: Exception, raw_text: str):
        self.last_error = last_error
        self.raw_text = raw_text
        super().__init__(f"generated schema still invalid after repair: {last_error}")


def generate_schema(instruction: str, gateway, model_profile: str = "default") -> GeneratedSchema:
    """Ask the gateway to draft a schema for a plain-language instruction,
    then validate it with parse_schema. One repair round quoting the
    validation error is attempted before giving up."""
    from .gateway import PromptRequest, extract_json_payload

    if not instruction or not instruction.strip():
        raise InvalidSchema("instruction must be non-empty")

    request = PromptRequest(
        model_profile=model_profile,
        system=_GENERATE_SYSTEM,
        user=_GENERATE_TEMPLATE.format(instruction=instruction.strip()),
    )
    response = gateway.complete(request)
    repairs = 0
    text = response.text
    while True:
        try:
            payload = extract_json_payload(text)
            schema = parse_schema(payload)
            return GeneratedSchema(schema=schema, raw_text=text, repairs=repairs)
        except (SchemaError, ValueError) as exc:
            if repairs >= 1:
                raise SchemaInvalidAfterRepair(exc, text) from exc
            repairs += 1
            repair_request = PromptRequest(
                model_profile=model_profile,
                system=_GENERATE_SYSTEM,
                user=(
                    request.user
                    + "\n\nYour previous reply was rejected: "
                    + str(exc)
                    + "\nReply again with only the corrected JSON object."
                ),
            )
            text = gateway.complete(repair_request).text
