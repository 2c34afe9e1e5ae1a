"""Exact cardinality evaluation: the ground-truth labeler for everything else.

Joins are evaluated by keyed counting on the star edges (the vectorized
equivalent of a hash join): in the fact-holds-FK orientation each dimension
reduces to a boolean lookup indexed by its primary key; in the fact-holds-PK
orientation every table reduces to a per-key count vector and the join count
is the sum over keys of the product of counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import ValidationError
from .queries import Query, validate_query
from .schema import FACT_HOLDS_FK
from .util import derive_seed

_EXECUTE_CALLS = 0


def execute_call_count() -> int:
    """How many times execute_count has run; used to assert estimators never touch the oracle."""
    return _EXECUTE_CALLS


def _apply_op(arr: np.ndarray, op: str, value: int) -> np.ndarray:
    if op == "<":
        return arr < value
    if op == "<=":
        return arr <= value
    if op == "=":
        return arr == value
    if op == ">=":
        return arr >= value
    if op == ">":
        return arr > value
    raise ValidationError(f"unknown operator '{op}'")


def local_mask(ds: Dataset, q: Query, table: str) -> np.ndarray:
    """Boolean mask over `table`'s rows for the predicates of q local to it."""
    mask = np.ones(ds.row_count(table), dtype=bool)
    for p in q.preds_on(table):
        mask &= _apply_op(ds.values(p.table, p.column), p.op, p.value)
    return mask


def _count_fact_holds_fk(ds: Dataset, q: Query) -> int:
    schema = ds.schema
    fact = schema.fact_table().name
    mask = local_mask(ds, q, fact)
    for t in q.tables:
        if t == fact:
            continue
        edge = schema.edge_for_dimension(t)
        passing = local_mask(ds, q, t)  # indexed by PK value, PKs are 0..n-1
        mask = mask & passing[ds.values(fact, edge.fk_column)]
    return int(np.count_nonzero(mask))


def _count_fact_holds_pk(ds: Dataset, q: Query) -> int:
    schema = ds.schema
    fact = schema.fact_table().name
    n_keys = schema.fact_table().row_count
    per_table = []
    for t in q.tables:
        passing = local_mask(ds, q, t)
        if t == fact:
            counts = passing.astype(np.int64)
        else:
            edge = schema.edge_for_dimension(t)
            fk = ds.values(t, edge.fk_column)
            counts = np.bincount(fk[passing], minlength=n_keys)
        per_table.append(counts)

    # Keep exact arithmetic: fall back to Python ints if int64 could overflow.
    bound = 1
    for c in per_table:
        bound *= int(c.max(initial=0))
    if bound * n_keys < 2**62:
        prod = per_table[0].copy()
        for c in per_table[1:]:
            prod *= c
        return int(prod.sum())
    nz = per_table[0] > 0
    for c in per_table[1:]:
        nz &= c > 0
    total = 0
    for idx in np.flatnonzero(nz):
        term = 1
        for c in per_table:
            term *= int(c[idx])
        total += term
    return total


def execute_count(ds: Dataset, q: Query) -> int:
    """Exact result-row count of the star join of q's tables under q's predicates."""
    global _EXECUTE_CALLS
    _EXECUTE_CALLS += 1
    validate_query(ds.schema, q)
    if len(q.tables) == 1:
        return int(np.count_nonzero(local_mask(ds, q, q.tables[0])))
    if ds.schema.orientation == FACT_HOLDS_FK:
        return _count_fact_holds_fk(ds, q)
    return _count_fact_holds_pk(ds, q)


def counting_estimator(ds: Dataset):
    """The oracle wrapped as an estimator callable (raw exact counts as floats)."""

    def estimate(q: Query) -> float:
        return float(execute_count(ds, q))

    return estimate


def sample_rows(ds: Dataset, table: str, s: int, seed: int) -> np.ndarray:
    """Fixed sample row indices for (dataset, table, seed); s clamps to the row count."""
    n = ds.row_count(table)
    eff = min(s, n)
    rng = np.random.default_rng(derive_seed(seed, "sample", table))
    idx = rng.choice(n, size=eff, replace=False)
    idx.sort()
    return idx


@dataclass
class SampleBitmaps:
    s: int  # requested sample size
    bits: dict  # table -> np.ndarray[bool] of length effective s for that table

    def effective_s(self, table: str) -> int:
        return len(self.bits[table])


def sample_bitmaps(ds: Dataset, q: Query, s: int, seed: int) -> SampleBitmaps:
    """Per-table bitmaps over the fixed sample rows marking rows passing q's local predicates."""
    if s < 1:
        raise ValidationError("bitmap sample size must be >= 1")
    validate_query(ds.schema, q)
    bits = {}
    for t in q.tables:
        idx = sample_rows(ds, t, s, seed)
        mask = np.ones(len(idx), dtype=bool)
        for p in q.preds_on(t):
            mask &= _apply_op(ds.values(p.table, p.column)[idx], p.op, p.value)
        bits[t] = mask
    return SampleBitmaps(s=s, bits=bits)
