"""Scoring extracted tables against ground truth.

Rows are matched one-to-one by key-field similarity using an optimal
assignment (rows may stay unmatched), then precision, recall, F1 and
field accuracy are computed over the matched pairs. Ties between
equally good assignments break to the lexicographically smallest pair
list so runs are comparable byte for byte.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.optimize import linear_sum_assignment

from .aggregate import CanonMap
from .schema import CoercionFailure, FieldSpec, Schema, coerce_value

STRING_NORMALIZERS = ("exact", "casefold_trim", "canonicalized")
ACCURACY_SCOPES = ("non_key", "all")


@dataclass(frozen=True)
class MatchConfig:
    numeric_rel_tol: float = 0.05
    numeric_abs_tol: float = 1e-6
    string_normalizer: str = "casefold_trim"
    candidate_threshold: float = 0.5
    accuracy_fields: str = "non_key"
    canon_map: CanonMap | None = None

    def __post_init__(self):
        if self.string_normalizer not in STRING_NORMALIZERS:
            raise ValueError(f"string_normalizer must be one of {STRING_NORMALIZERS}")
        if self.accuracy_fields not in ACCURACY_SCOPES:
            raise ValueError(f"accuracy_fields must be one of {ACCURACY_SCOPES}")
        if not 0.0 <= self.candidate_threshold <= 1.0:
            raise ValueError("candidate_threshold must be within [0, 1]")


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int, float], ...]
    unmatched_gt: tuple[int, ...]
    unmatched_ext: tuple[int, ...]

    @property
    def n_matched(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    accuracy: float
    per_field_accuracy: dict[str, float]
    n_gt: int
    n_ext: int
    n_matched: int

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "accuracy": self.accuracy,
            "per_field_accuracy": dict(self.per_field_accuracy),
            "counts": {"n_gt": self.n_gt, "n_ext": self.n_ext, "n_matched": self.n_matched},
        }


def _normalize_string(value: str, config: MatchConfig) -> str:
    if config.string_normalizer == "exact":
        return value
    if config.string_normalizer == "canonicalized" and config.canon_map is not None:
        value = config.canon_map.apply(value.strip())
    return value.strip().casefold()


def _scalar_similarity(spec: FieldSpec, dtype: str, a: Any, b: Any, config: MatchConfig) -> float:
    if dtype in ("float", "integer"):
        try:
            fa, fb = float(a), float(b)
        except (TypeError, ValueError):
            return 0.0
        tol = max(config.numeric_abs_tol, config.numeric_rel_tol * max(abs(fa), abs(fb)))
        return 1.0 if abs(fa - fb) <= tol else 0.0
    if dtype == "boolean":
        return 1.0 if bool(a) == bool(b) else 0.0
    # string and categorical compare as normalized text
    return 1.0 if _normalize_string(str(a), config) == _normalize_string(str(b), config) else 0.0


def field_similarity(spec: FieldSpec, a: Any, b: Any, config: MatchConfig | None = None) -> float:
    """Similarity of two values of one field, always 0.0 or 1.0.

    Two nulls agree; a null against a value does not. Numbers agree
    within max(abs_tol, rel_tol * max(|a|, |b|)), symmetric in its
    arguments so swapping extraction and truth swaps precision and
    recall exactly. Lists agree when their elements can be paired off.
    """
    config = config or MatchConfig()
    if a is None and b is None:
        return 1.0
    if a is None or b is None:
        return 0.0
    base, element = spec.base_dtype, spec.element_dtype
    if base != "list":
        return _scalar_similarity(spec, base, a, b, config)
    if not isinstance(a, list) or not isinstance(b, list) or len(a) != len(b):
        return 0.0
    sa = sorted(a, key=lambda v: (str(type(v).__name__), str(v)))
    sb = sorted(b, key=lambda v: (str(type(v).__name__), str(v)))
    return (
        1.0
        if all(_scalar_similarity(spec, element, x, y, config) == 1.0 for x, y in zip(sa, sb))
        else 0.0
    )


def key_similarity(
    gt_row: dict, ext_row: dict, schema: Schema, config: MatchConfig | None = None
) -> float:
    """Mean field similarity over the schema's key fields."""
    config = config or MatchConfig()
    keys = schema.key_fields()
    if not keys:
        return 0.0
    total = sum(
        field_similarity(schema.field(k), gt_row.get(k), ext_row.get(k), config) for k in keys
    )
    return total / len(keys)


def _optimal_total(weights: np.ndarray) -> float:
    """Maximum total weight of a partial matching on ``weights``.
    Forbidden pairs are -inf. Rows and columns may stay unmatched."""
    n, m = weights.shape
    if n == 0 or m == 0:
        return 0.0
    finite = np.isfinite(weights)
    if not finite.any():
        return 0.0
    large = float(np.abs(weights[finite]).sum()) + 1.0
    cost = np.zeros((n + m, n + m))
    cost[:n, :m] = np.where(finite, -weights, large)
    cost[:n, m:] = large
    np.fill_diagonal(cost[:n, m:], 0.0)
    cost[n:, :m] = large
    np.fill_diagonal(cost[n:, :m], 0.0)
    rows, cols = linear_sum_assignment(cost)
    total = 0.0
    for r, c in zip(rows, cols):
        if r < n and c < m and finite[r, c]:
            total += float(weights[r, c])
    return total


def max_weight_assignment(
    weights: np.ndarray, tol: float = 1e-9
) -> tuple[list[tuple[int, int]], float]:
    """Optimal partial matching with a pinned tie-break.

    ``weights[i, j]`` is the gain for pairing row i with column j;
    ``-inf`` forbids a pair; anything may stay unmatched. Among all
    matchings of maximum total weight, returns the one whose sorted pair
    list is lexicographically smallest (a shorter list beats any
    extension of it). Pairs are fixed greedily in lexicographic order,
    each acceptance justified by re-solving the remaining subproblem.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2:
        raise ValueError("weights must be a 2D array")
    total_opt = _optimal_total(weights)
    n, m = weights.shape
    candidates = [(i, j) for i in range(n) for j in range(m) if np.isfinite(weights[i, j])]
    chosen: list[tuple[int, int]] = []
    used_rows: set[int] = set()
    used_cols: set[int] = set()
    fixed = 0.0
    for i, j in candidates:
        if fixed >= total_opt - tol:
            break
        if i in used_rows or j in used_cols:
            continue
        rest_rows = [r for r in range(n) if r not in used_rows and r != i]
        rest_cols = [c for c in range(m) if c not in used_cols and c != j]
        if rest_rows and rest_cols:
            rest_total = _optimal_total(weights[np.ix_(rest_rows, rest_cols)])
        else:
            rest_total = 0.0
        if fixed + float(weights[i, j]) + rest_total >= total_opt - tol:
            chosen.append((i, j))
            fixed += float(weights[i, j])
            used_rows.add(i)
            used_cols.add(j)
    return chosen, total_opt


def bipartite_match(
    gt_rows: list[dict], ext_rows: list[dict], schema: Schema, config: MatchConfig | None = None
) -> MatchResult:
    """Pair ground-truth rows with extracted rows by key similarity.

    Pairs below the candidate threshold are excluded outright; the rest
    enter an optimal assignment (threshold boundary is inclusive).
    """
    config = config or MatchConfig()
    n, m = len(gt_rows), len(ext_rows)
    weights = np.full((n, m), -np.inf)
    for i, gt in enumerate(gt_rows):
        for j, ext in enumerate(ext_rows):
            sim = key_similarity(gt, ext, schema, config)
            if sim >= config.candidate_threshold:
                weights[i, j] = sim
    pairs, _ = max_weight_assignment(weights)
    matched_gt = {i for i, _ in pairs}
    matched_ext = {j for _, j in pairs}
    return MatchResult(
        pairs=tuple((i, j, float(weights[i, j])) for i, j in pairs),
        unmatched_gt=tuple(i for i in range(n) if i not in matched_gt),
        unmatched_ext=tuple(j for j in range(m) if j not in matched_ext),
    )


def compute_metrics(
    match: MatchResult,
    gt_rows: list[dict],
    ext_rows: list[dict],
    schema: Schema,
    config: MatchConfig | None = None,
) -> Metrics:
    """Precision, recall, F1 over row matching, plus value accuracy over
    matched pairs. Zero denominators yield 0.0 rather than an error."""
    config = config or MatchConfig()
    n_gt, n_ext, n_matched = len(gt_rows), len(ext_rows), match.n_matched
    precision = n_matched / n_ext if n_ext else 0.0
    recall = n_matched / n_gt if n_gt else 0.0
    f1 = (2 * precision * recall / (precision + recall)) if (precision + recall) else 0.0

    per_field: dict[str, float] = {}
    for spec in schema.fields:
        if n_matched:
            hits = sum(
                field_similarity(
                    spec, gt_rows[i].get(spec.name), ext_rows[j].get(spec.name), config
                )
                for i, j, _ in match.pairs
            )
            per_field[spec.name] = hits / n_matched
        else:
            per_field[spec.name] = 0.0

    if config.accuracy_fields == "all":
        scored = [f.name for f in schema.fields]
    else:
        scored = [f.name for f in schema.fields if not f.is_key]
    cells = n_matched * len(scored)
    if cells:
        accuracy = sum(per_field[name] for name in scored) * n_matched / cells
    else:
        accuracy = 0.0
    return Metrics(
        precision=precision,
        recall=recall,
        f1=f1,
        accuracy=accuracy,
        per_field_accuracy=per_field,
        n_gt=n_gt,
        n_ext=n_ext,
        n_matched=n_matched,
    )


def evaluate_rows(
    gt_rows: list[dict], ext_rows: list[dict], schema: Schema, config: MatchConfig | None = None
) -> Metrics:
    """Match then score in one call."""
    config = config or MatchConfig()
    return compute_metrics(bipartite_match(gt_rows, ext_rows, schema, config), gt_rows, ext_rows, schema, config)


def rows_from_csv(path: str, schema: Schema) -> list[dict]:
    """Ground-truth rows from CSV. The header row names schema fields
    (unknown columns rejected); empty cells are nulls; values go through
    schema coercion so "25 C" compares as 25.0."""
    rows: list[dict] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        unknown = [c for c in reader.fieldnames if c and not schema.has_field(c) and c != "doc_id"]
        if unknown:
            raise ValueError(f"csv columns not in schema: {unknown}")
        for line in reader:
            row: dict[str, Any] = {}
            for name, raw in line.items():
                if name is None or not name:
                    continue
                if raw is None or raw == "":
                    row[name] = None
                elif name == "doc_id":
                    row[name] = raw
                else:
                    try:
                        row[name] = coerce_value(schema.field(name), raw).value
                    except CoercionFailure as exc:
                        raise ValueError(f"{path}: {exc}") from exc
            rows.append(row)
    return rows


def rows_from_table_json(payload: Any) -> list[dict]:
    """Extraction rows from an aggregated table JSON payload (the list of
    row objects with a values map) or from a bare list of value dicts."""
    if isinstance(payload, (str, bytes)):
        payload = json.loads(payload)
    if not isinstance(payload, list):
        raise ValueError("table payload must be a JSON list")
    rows = []
    for item in payload:
        if not isinstance(item, dict):
            raise ValueError("table rows must be objects")
        rows.append(dict(item["values"]) if "values" in item else dict(item))
    return rows
