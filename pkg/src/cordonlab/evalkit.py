"""Evaluation: q-error summaries, violation probes, and the DKS finder.

Violation probes turn held-out queries into constraint instances and count
how often an estimator's predictions break them: the two equality-like
kinds flag a violation when the ratio between the constraint's sides leaves
the [1/2, 2] band, the inequality kind whenever the joined query is
predicted strictly larger than its dropped super-set query.

The DKS (domain-knowledge-sensitive) finder ranks candidate queries by the
largest predicted underestimation degree among their subqueries, calling
only estimators and never the execution oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintKind
from .dataset import Dataset
from .errors import ConfigError, NumericError
from .metrics import qerror, summarize_qerrors
from .queries import LabeledQuery, Query, canonical_key, query_from_dict, query_to_dict
from .schema import SchemaDef
from .workload import (
    EQUALITY,
    INEQUALITY,
    add_pk_table,
    addable_pk_tables,
    drop_pk_table,
    droppable_pk_tables,
    enumerate_subqueries,
    numeric_split_columns,
    sample_split,
    split_query,
)


# ---------------------------------------------------------------------------
# q-error evaluation


def evaluate(estimator, queries: list[LabeledQuery]) -> tuple[dict, np.ndarray]:
    """Per-query q-errors against the stored labels plus a percentile summary."""
    errs = np.array([qerror(float(estimator(lq.query)), float(lq.cardinality)) for lq in queries])
    return summarize_qerrors(errs), errs


@dataclass
class EvalReport:
    """Accumulates summaries across estimators, query sets, and probe kinds."""

    qerror_rows: list = field(default_factory=list)  # (estimator, query_set, summary dict)
    violation_rows: list = field(default_factory=list)  # (estimator, kind value, ratio, n_probes)

    def add_qerrors(self, estimator: str, query_set: str, summary: dict) -> None:
        self.qerror_rows.append((estimator, query_set, summary))

    def add_violations(self, estimator: str, kind: ConstraintKind, ratio: float, n: int) -> None:
        self.violation_rows.append((estimator, kind.value, ratio, n))

    def to_dict(self) -> dict:
        return {
            "qerrors": [
                {"estimator": e, "query_set": s, **summary} for e, s, summary in self.qerror_rows
            ],
            "violations": [
                {"estimator": e, "kind": k, "ratio": r, "probes": n}
                for e, k, r, n in self.violation_rows
            ],
        }


# ---------------------------------------------------------------------------
# violation probes


@dataclass(frozen=True)
class Probe:
    kind: ConstraintKind
    queries: tuple[Query, ...]  # consistency: (q, q1, q2); otherwise: (q, transformed)


def violation_probes(
    schema: SchemaDef,
    ds: Dataset,
    queries: list[Query],
    kind: ConstraintKind,
    seed: int,
    per_query: int = 1,
) -> list[Probe]:
    """Constraint instances derived from the given queries; inapplicable ones are skipped.

    `per_query` bounds how many probes one query contributes (consistency
    re-splits with fresh columns/points; the PK-FK kinds enumerate distinct
    transform targets). The dataset is accepted for interface symmetry; probe
    construction itself needs only the schema.
    """
    del ds
    rng = np.random.default_rng(seed)
    probes: list[Probe] = []
    for q in queries:
        if kind is ConstraintKind.CONSISTENCY:
            if not numeric_split_columns(schema, q):
                continue
            for _ in range(per_query):
                spec = sample_split(schema, q, rng)
                q1, q2 = split_query(schema, q, spec)
                probes.append(Probe(kind, (q, q1, q2)))
        elif kind is ConstraintKind.PKFK_EQUALITY:
            options = [("add", t) for t in addable_pk_tables(schema, q)]
            options += [
                ("drop", t) for t, rel in droppable_pk_tables(schema, q) if rel == EQUALITY
            ]
            for action, table in _draw(options, per_query, rng):
                if action == "add":
                    other = add_pk_table(schema, q, table)
                else:
                    other, _ = drop_pk_table(schema, q, table)
                probes.append(Probe(kind, (q, other)))
        elif kind is ConstraintKind.PKFK_INEQUALITY:
            options = [
                ("drop", t) for t, rel in droppable_pk_tables(schema, q) if rel == INEQUALITY
            ]
            for _, table in _draw(options, per_query, rng):
                dropped, _ = drop_pk_table(schema, q, table)
                probes.append(Probe(kind, (q, dropped)))
        else:
            raise ConfigError(f"unknown probe kind {kind!r}")
    return probes


def _draw(options: list, k: int, rng: np.random.Generator) -> list:
    if not options:
        return []
    if len(options) <= k:
        return options
    picked = rng.choice(len(options), size=k, replace=False)
    return [options[i] for i in sorted(picked)]


def violation_ratio(estimator, probes: list[Probe], kind: ConstraintKind) -> float:
    """Fraction of probes whose predictions significantly break the constraint."""
    if not probes:
        raise NumericError("violation ratio is undefined for an empty probe list")
    violations = 0
    for probe in probes:
        if probe.kind is not kind:
            raise ConfigError(f"probe of kind {probe.kind} passed to a {kind} ratio")
        if kind is ConstraintKind.CONSISTENCY:
            q, q1, q2 = probe.queries
            r = float(estimator(q)) / (float(estimator(q1)) + float(estimator(q2)))
            if r > 2.0 or r < 0.5:
                violations += 1
        elif kind is ConstraintKind.PKFK_EQUALITY:
            q, other = probe.queries
            r = float(estimator(q)) / float(estimator(other))
            if r > 2.0 or r < 0.5:
                violations += 1
        else:
            q, dropped = probe.queries
            if float(estimator(q)) / float(estimator(dropped)) > 1.0:
                violations += 1
    return violations / len(probes)


# ---------------------------------------------------------------------------
# DKS finder


DKS_CONSISTENCY = "consistency"
DKS_PKFK_EQUALITY = "pkfk_equality"
PICK_ALL = "all_subqueries"
PICK_LARGEST = "largest_only"


@dataclass(frozen=True)
class DksEntry:
    query: Query
    degree: float
    witness: Query | None
    witness_kind: str


@dataclass
class DksRanking:
    entries: list[DksEntry]

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                doc = {
                    "query": query_to_dict(e.query),
                    "degree": e.degree,
                    "witness": query_to_dict(e.witness) if e.witness is not None else None,
                    "kind": e.witness_kind,
                }
                fh.write(json.dumps(doc, separators=(",", ":")))
                fh.write("\n")

    @staticmethod
    def from_jsonl(path) -> "DksRanking":
        entries = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                doc = json.loads(line)
                entries.append(
                    DksEntry(
                        query=query_from_dict(doc["query"]),
                        degree=float(doc["degree"]),
                        witness=query_from_dict(doc["witness"]) if doc["witness"] else None,
                        witness_kind=doc["kind"],
                    )
                )
        return DksRanking(entries)


def _subquery_degree(estimator, schema, sub: Query, kind: str, rng, splits_per_subquery: int):
    """Predicted underestimation degree of one subquery, or None if inapplicable."""
    if kind == DKS_CONSISTENCY:
        if not numeric_split_columns(schema, sub):
            return None
        degrees = []
        for _ in range(splits_per_subquery):
            spec = sample_split(schema, sub, rng)
            s1, s2 = split_query(schema, sub, spec)
            degrees.append(
                (float(estimator(s1)) + float(estimator(s2))) / float(estimator(sub))
            )
        return sum(degrees) / len(degrees)
    eq_drops = sorted(t for t, rel in droppable_pk_tables(schema, sub) if rel == EQUALITY)
    if not eq_drops:
        return None
    dropped, _ = drop_pk_table(schema, sub, eq_drops[0])
    return float(estimator(dropped)) / float(estimator(sub))


def find_dks(
    estimator,
    schema: SchemaDef,
    candidates: list[Query],
    k: int,
    kind: str = DKS_CONSISTENCY,
    pick_mode: str = PICK_ALL,
    cheap_estimator=None,
    seed: int = 0,
    max_joins: int = 4,
    splits_per_subquery: int = 1,
) -> DksRanking:
    """Rank candidates by the largest predicted underestimation degree over
    their subqueries and return the top k.

    Degrees come purely from estimator predictions: the consistency kind
    compares a fresh split-pair sum against the subquery's own estimate; the
    PK-FK equality kind compares the predicate-free-drop estimate against the
    subquery's. ``pick_mode="largest_only"`` scores only the subquery the
    cheap estimator considers largest. Candidates with more than `max_joins`
    joins are excluded up front; no query is ever executed.
    """
    if kind not in (DKS_CONSISTENCY, DKS_PKFK_EQUALITY):
        raise ConfigError(f"unknown DKS kind '{kind}'")
    if pick_mode not in (PICK_ALL, PICK_LARGEST):
        raise ConfigError(f"unknown pick mode '{pick_mode}'")
    if pick_mode == PICK_LARGEST and cheap_estimator is None:
        raise ConfigError("largest_only pick mode needs a cheap estimator")
    if splits_per_subquery < 1:
        raise ConfigError("splits_per_subquery must be >= 1")

    rng = np.random.default_rng(seed)
    scored: list[DksEntry] = []
    for cand in candidates:
        if cand.n_joins() > max_joins:
            continue
        subs = enumerate_subqueries(schema, cand)
        if pick_mode == PICK_LARGEST:
            best = max(subs, key=lambda s: (float(cheap_estimator(s)), canonical_key(s)))
            subs = [best]
        degree = 0.0
        witness = None
        for sub in subs:
            d = _subquery_degree(estimator, schema, sub, kind, rng, splits_per_subquery)
            if d is not None and d > degree:
                degree = d
                witness = sub
        scored.append(DksEntry(cand, degree, witness, kind))

    scored.sort(key=lambda e: (-e.degree, canonical_key(e.query)))
    return DksRanking(scored[: max(0, k)])


# ---------------------------------------------------------------------------
# CSV export helpers


def qerrors_long_csv(path, rows: list[tuple[str, str, np.ndarray]]) -> None:
    """Plot-ready long format: one (estimator, query_set, qerror) line per query."""
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimator", "query_set", "qerror"])
        for estimator, query_set, errs in rows:
            for v in errs:
                writer.writerow([estimator, query_set, f"{float(v):.6g}"])
