"""Unit symbols and affine unit conversion.

A conversion rule maps a raw value to canonical units via
``canonical = raw * scale + offset``. Rules are single hop: if no direct
rule exists for a (from, to) pair the conversion fails, values are never
chained through an intermediate unit.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction


class UnitError(Exception):
    pass


class NoConversionPath(UnitError):
    """No direct rule converts between the two units."""


# Lowercased spellings mapped to the canonical symbol. Degree signs and
# long forms collapse to the short symbol the schemas use.
_SYMBOLS = {
    "c": "C",
    "°c": "C",
    "deg c": "C",
    "degc": "C",
    "celsius": "C",
    "f": "F",
    "°f": "F",
    "deg f": "F",
    "degf": "F",
    "fahrenheit": "F",
    "k": "K",
    "kelvin": "K",
    "%": "%",
    "percent": "%",
    "pct": "%",
    "s": "s",
    "sec": "s",
    "secs": "s",
    "second": "s",
    "seconds": "s",
    "min": "min",
    "mins": "min",
    "minute": "min",
    "minutes": "min",
    "h": "h",
    "hr": "h",
    "hrs": "h",
    "hour": "h",
    "hours": "h",
    "d": "d",
    "day": "d",
    "days": "d",
    "ml": "mL",
    "milliliter": "mL",
    "milliliters": "mL",
    "millilitre": "mL",
    "millilitres": "mL",
    "l": "L",
    "liter": "L",
    "liters": "L",
    "litre": "L",
    "litres": "L",
    "g": "g",
    "gram": "g",
    "grams": "g",
    "mg": "mg",
    "milligram": "mg",
    "milligrams": "mg",
    "kg": "kg",
    "kilogram": "kg",
    "kilograms": "kg",
    "m": "m",
    "meter": "m",
    "meters": "m",
    "metre": "m",
    "metres": "m",
    "cm": "cm",
    "mm": "mm",
    "um": "um",
    "µm": "um",
    "nm": "nm",
}


def normalize_symbol(unit: str | None) -> str | None:
    """Collapse a unit spelling to its canonical symbol.

    Unknown spellings pass through stripped, so user-defined units keep
    working as long as rules reference them consistently.
    """
    if unit is None:
        return None
    cleaned = unit.strip()
    if not cleaned:
        return None
    return _SYMBOLS.get(cleaned.lower(), cleaned)


@dataclass(frozen=True)
class UnitRule:
    """Affine conversion: canonical = raw * scale + offset."""

    from_unit: str
    to_unit: str
    scale: float
    offset: float = 0.0

    def __post_init__(self):
        if self.scale == 0:
            raise UnitError(f"rule {self.from_unit}->{self.to_unit} has zero scale")

    def apply(self, value: float) -> float:
        return value * self.scale + self.offset


def _builtin_rules() -> list[UnitRule]:
    f2c_scale = float(Fraction(5, 9))
    f2c_offset = float(Fraction(-160, 9))
    return [
        UnitRule("F", "C", f2c_scale, f2c_offset),
        UnitRule("C", "F", 1.8, 32.0),
        UnitRule("K", "C", 1.0, -273.15),
        UnitRule("C", "K", 1.0, 273.15),
        UnitRule("min", "h", float(Fraction(1, 60))),
        UnitRule("h", "min", 60.0),
        UnitRule("s", "min", float(Fraction(1, 60))),
        UnitRule("min", "s", 60.0),
        UnitRule("s", "h", float(Fraction(1, 3600))),
        UnitRule("h", "s", 3600.0),
        UnitRule("h", "d", float(Fraction(1, 24))),
        UnitRule("d", "h", 24.0),
        UnitRule("mL", "L", 0.001),
        UnitRule("L", "mL", 1000.0),
        UnitRule("mg", "g", 0.001),
        UnitRule("g", "mg", 1000.0),
        UnitRule("g", "kg", 0.001),
        UnitRule("kg", "g", 1000.0),
        UnitRule("mm", "cm", 0.1),
        UnitRule("cm", "mm", 10.0),
        UnitRule("cm", "m", 0.01),
        UnitRule("m", "cm", 100.0),
        UnitRule("mm", "m", 0.001),
        UnitRule("m", "mm", 1000.0),
    ]


class RuleTable:
    """Lookup of direct conversion rules, at most one per (from, to) pair."""

    def __init__(self, rules: list[UnitRule] | None = None):
        self._rules: dict[tuple[str, str], UnitRule] = {}
        for rule in rules or []:
            self.add(rule)

    def add(self, rule: UnitRule) -> None:
        key = (rule.from_unit, rule.to_unit)
        if key in self._rules and self._rules[key] != rule:
            raise UnitError(f"conflicting rules for {key[0]}->{key[1]}")
        self._rules[key] = rule

    def rule_for(self, from_unit: str, to_unit: str) -> UnitRule | None:
        return self._rules.get((from_unit, to_unit))

    def can_convert(self, from_unit: str, to_unit: str) -> bool:
        return from_unit == to_unit or (from_unit, to_unit) in self._rules

    def convert(self, value: float, from_unit: str, to_unit: str) -> float:
        """Single-hop conversion of a raw value into target units."""
        if from_unit == to_unit:
            return float(value)
        rule = self._rules.get((from_unit, to_unit))
        if rule is None:
            raise NoConversionPath(f"no rule converts {from_unit!r} to {to_unit!r}")
        return rule.apply(float(value))

    def rules(self) -> list[UnitRule]:
        return [self._rules[k] for k in sorted(self._rules)]


def default_rules() -> RuleTable:
    return RuleTable(_builtin_rules())


def load_rules(path: str, include_builtin: bool = True) -> RuleTable:
    """Read extra rules from a JSON file: a list of objects with from_unit,
    to_unit, scale and optional offset. Symbols are normalized on load."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise UnitError("rule file must be a JSON list")
    table = default_rules() if include_builtin else RuleTable()
    for i, item in enumerate(raw):
        if not isinstance(item, dict):
            raise UnitError(f"rule {i}: expected object")
        try:
            rule = UnitRule(
                from_unit=normalize_symbol(str(item["from_unit"])),
                to_unit=normalize_symbol(str(item["to_unit"])),
                scale=float(item["scale"]),
                offset=float(item.get("offset", 0.0)),
            )
        except KeyError as exc:
            raise UnitError(f"rule {i}: missing {exc.args[0]}") from None
        table.add(rule)
    return table
