"""Histogram + independence baseline with Selinger-style PK-FK join selectivity.

Estimate = product of table cardinalities x product of per-predicate
selectivities (equi-depth histogram interpolation for ranges, 1/distinct
for equality) x one 1/(PK-side row count) factor per join, clamped to >= 1.
By that last factor the baseline satisfies the predicate-free PK-FK join
equality exactly, which makes it the constraint-respecting foil for the
learned model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, FormatError
from .queries import Query, validate_query
from .schema import FACT_HOLDS_PK, SchemaDef


@dataclass
class ColumnHistogram:
    boundaries: np.ndarray  # n_buckets + 1, nondecreasing ints
    counts: np.ndarray  # n_buckets, sums to the table row count
    distinct: int
    row_count: int


@dataclass
class Stats:
    buckets: int
    histograms: dict  # (table, column) -> ColumnHistogram


def _build_histogram(values: np.ndarray, buckets: int) -> ColumnHistogram:
    n = len(values)
    ordered = np.sort(values)
    positions = [(i * n) // buckets for i in range(buckets + 1)]
    bounds = []
    counts = []
    for k in range(buckets):
        lo_pos, hi_pos = positions[k], positions[k + 1]
        if hi_pos == lo_pos:
            continue
        lo = int(ordered[lo_pos])
        hi = int(ordered[hi_pos - 1])
        if bounds and bounds[-1][1] == hi and bounds[-1][0] == lo:
            counts[-1] += hi_pos - lo_pos  # merge zero-width duplicates
        else:
            bounds.append((lo, hi))
            counts.append(hi_pos - lo_pos)
    boundaries = np.array([b[0] for b in bounds] + [bounds[-1][1]], dtype=np.int64)
    return ColumnHistogram(
        boundaries=boundaries,
        counts=np.array(counts, dtype=np.int64),
        distinct=int(len(np.unique(ordered))),
        row_count=n,
    )


def build_stats(ds: Dataset, buckets: int = 32) -> Stats:
    """Exact equi-depth histograms for every column, by full scan."""
    if buckets < 1:
        raise ConfigError("histogram bucket count must be >= 1")
    histograms = {}
    for t in ds.schema.tables:
        for c in t.columns:
            histograms[(t.name, c.name)] = _build_histogram(ds.values(t.name, c.name), buckets)
    return Stats(buckets=buckets, histograms=histograms)


def _frac_le(h: ColumnHistogram, v: int) -> float:
    """Estimated fraction of values <= v under within-bucket uniformity."""
    if v < h.boundaries[0]:
        return 0.0
    if v >= h.boundaries[-1]:
        return 1.0
    total = float(h.row_count)
    acc = 0.0
    for k in range(len(h.counts)):
        lo = int(h.boundaries[k])
        hi = int(h.boundaries[k + 1])
        if v >= hi:
            acc += float(h.counts[k])
            continue
        if v >= lo:
            width = hi - lo + 1
            acc += float(h.counts[k]) * (v - lo + 1) / width
        break
    return min(1.0, acc / total)


def predicate_selectivity(h: ColumnHistogram, op: str, value: int) -> float:
    if op == "=":
        return 1.0 / max(1, h.distinct)
    if op == "<":
        sel = _frac_le(h, value - 1)
    elif op == "<=":
        sel = _frac_le(h, value)
    elif op == ">":
        sel = 1.0 - _frac_le(h, value)
    elif op == ">=":
        sel = 1.0 - _frac_le(h, value - 1)
    else:
        raise ConfigError(f"unknown operator '{op}'")
    return min(1.0, max(0.0, sel))


def baseline_estimate(stats: Stats, schema: SchemaDef, q: Query) -> float:
    """Independence-assumption estimate, always >= 1 and deterministic."""
    validate_query(schema, q)
    est = 1.0
    for t in q.tables:
        est *= float(schema.table(t).row_count)
    for p in q.predicates:
        key = (p.table, p.column)
        if key not in stats.histograms:
            raise ConfigError(f"statistics missing for column '{p.table}.{p.column}'")
        est *= predicate_selectivity(stats.histograms[key], p.op, p.value)

    n_joins = len(q.tables) - 1
    covered = schema.covered_edges(q.tables)
    for e in covered:
        est /= float(schema.table(e.pk_table).row_count)
    # FK-FK joins (shared-key orientation without the fact table) have no
    # covered edge; each one still contracts the cross product by the size
    # of the shared key domain.
    uncovered = n_joins - len(covered)
    if uncovered > 0:
        if schema.orientation != FACT_HOLDS_PK:
            raise ConfigError("disconnected join graph in baseline estimate")
        est /= float(schema.fact_table().row_count) ** uncovered
    return max(1.0, est)


def baseline_estimator(stats: Stats, schema: SchemaDef):
    def estimate(q: Query) -> float:
        return baseline_estimate(stats, schema, q)

    return estimate


def save_stats(stats: Stats, path) -> None:
    doc = {
        "buckets": stats.buckets,
        "columns": {
            f"{t}.{c}": {
                "boundaries": h.boundaries.tolist(),
                "counts": h.counts.tolist(),
                "distinct": h.distinct,
                "row_count": h.row_count,
            }
            for (t, c), h in stats.histograms.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_stats(path) -> Stats:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"statistics file '{path}' is not valid JSON: {exc}") from exc
    try:
        histograms = {}
        for key, h in doc["columns"].items():
            t, c = key.split(".", 1)
            histograms[(t, c)] = ColumnHistogram(
                boundaries=np.array(h["boundaries"], dtype=np.int64),
                counts=np.array(h["counts"], dtype=np.int64),
                distinct=int(h["distinct"]),
                row_count=int(h["row_count"]),
            )
        return Stats(buckets=int(doc["buckets"]), histograms=histograms)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"statistics file '{path}' is malformed: {exc}") from exc
