"""Workload synthesis and the constraint-guided query transforms.

Generation follows two principles: cover every reachable join-graph size in
the configured range, and diversify predicate counts, operators, and values
(values are drawn from each column's active domain). Queries whose true
cardinality is zero are rejected and resampled.

The transforms defined here carry exact cardinality relations on any
dataset of the schema:

* ``split_query``     - the two halves partition the parent: counts add up.
* ``drop_pk_table``   - dropping a PK-side table preserves the count when
                        that table carried no predicate, and can only grow
                        it otherwise.
* ``add_pk_table``    - joining a predicate-free PK-side table preserves
                        the count.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

from .dataset import Dataset
from .errors import ApplicabilityError, ConfigError, GenerationError
from .oracle import execute_count
from .queries import (
    OPS,
    LabeledQuery,
    Predicate,
    Query,
    SplitSpec,
    canonical_key,
    query,
    validate_query,
)
from .schema import FACT_HOLDS_FK, FACT_HOLDS_PK, NUMERIC, SchemaDef


def numeric_split_columns(schema: SchemaDef, q: Query) -> list[tuple[str, str]]:
    """Numeric non-key columns on q's tables that q does not already reference."""
    referenced = q.referenced_columns()
    out = []
    for t in q.tables:
        tbl = schema.table(t)
        keys = schema.key_columns(t)
        for c in tbl.columns:
            if c.kind != NUMERIC or c.name in keys or c.domain_size < 2:
                continue
            if (t, c.name) not in referenced:
                out.append((t, c.name))
    return out


def sample_split(schema: SchemaDef, q: Query, rng: np.random.Generator) -> SplitSpec:
    candidates = numeric_split_columns(schema, q)
    if not candidates:
        raise ApplicabilityError("query has no unreferenced numeric column to split on")
    t, c = candidates[int(rng.integers(0, len(candidates)))]
    domain = schema.table(t).column(c).domain_size
    point = int(rng.integers(1, domain))
    return SplitSpec(t, c, point)


def split_query(schema: SchemaDef, q: Query, spec: SplitSpec) -> tuple[Query, Query]:
    """Partition q on an unreferenced numeric column: below the point vs at-or-above."""
    if spec.table not in q.tables:
        raise ApplicabilityError(f"split column table '{spec.table}' is not in the query")
    col = schema.table(spec.table).column(spec.column)
    if col.kind != NUMERIC:
        raise ApplicabilityError(f"split column '{spec.table}.{spec.column}' is not numeric")
    if schema.is_key_column(spec.table, spec.column):
        raise ApplicabilityError(f"cannot split on key column '{spec.table}.{spec.column}'")
    if (spec.table, spec.column) in q.referenced_columns():
        raise ApplicabilityError(f"query already references '{spec.table}.{spec.column}'")
    if not 0 < spec.point < col.domain_size:
        raise ApplicabilityError(f"split point {spec.point} outside (0, {col.domain_size})")
    q1 = query(q.tables, q.predicates + (Predicate(spec.table, spec.column, "<", spec.point),))
    q2 = query(q.tables, q.predicates + (Predicate(spec.table, spec.column, ">=", spec.point),))
    return q1, q2


EQUALITY = "equality"
INEQUALITY = "inequality"


def droppable_pk_tables(schema: SchemaDef, q: Query) -> list[tuple[str, str]]:
    """(table, relation) pairs for every PK-side table whose drop leaves a valid query."""
    if len(q.tables) < 2:
        return []
    fact = schema.fact_table().name
    out = []
    if schema.orientation == FACT_HOLDS_PK:
        if fact in q.tables:
            rel = EQUALITY if not q.preds_on(fact) else INEQUALITY
            out.append((fact, rel))
    else:
        if fact in q.tables:
            for t in q.tables:
                if t == fact:
                    continue
                rel = EQUALITY if not q.preds_on(t) else INEQUALITY
                out.append((t, rel))
    return out


def drop_pk_table(schema: SchemaDef, q: Query, table: str | None = None) -> tuple[Query, str]:
    """Remove a PK-side table (and its predicates); returns the relation that held.

    relation == "equality" means the dropped table carried no predicate so the
    count is unchanged; "inequality" means the original count can only be lower.
    """
    options = droppable_pk_tables(schema, q)
    if not options:
        raise ApplicabilityError("query has no droppable PK-side table")
    if table is None:
        table, relation = sorted(options)[0]
    else:
        match = [rel for t, rel in options if t == table]
        if not match:
            raise ApplicabilityError(f"table '{table}' is not droppable from this query")
        relation = match[0]
    rest = tuple(t for t in q.tables if t != table)
    preds = tuple(p for p in q.predicates if p.table != table)
    out = query(rest, preds)
    validate_query(schema, out)
    return out, relation


def addable_pk_tables(schema: SchemaDef, q: Query) -> list[str]:
    fact = schema.fact_table().name
    if schema.orientation == FACT_HOLDS_PK:
        return [fact] if fact not in q.tables else []
    if fact not in q.tables:
        return []
    return sorted(t.name for t in schema.dimensions() if t.name not in q.tables)


def add_pk_table(
    schema: SchemaDef, q: Query, table: str | None = None, rng: np.random.Generator | None = None
) -> Query:
    """Join a predicate-free PK-side table; the count is provably unchanged."""
    options = addable_pk_tables(schema, q)
    if not options:
        raise ApplicabilityError("no predicate-free PK-side table can be added to this query")
    if table is None:
        table = options[int(rng.integers(0, len(options)))] if rng is not None else options[0]
    elif table not in options:
        raise ApplicabilityError(f"table '{table}' cannot be added to this query")
    out = query(q.tables + (table,), q.predicates)
    validate_query(schema, out)
    return out


def enumerate_subqueries(schema: SchemaDef, q: Query) -> list[Query]:
    """All connected sub-join-graphs of q, each keeping the predicates on its tables."""
    validate_query(schema, q)
    fact = schema.fact_table().name
    tables = list(q.tables)
    subsets: list[tuple[str, ...]] = []
    if schema.orientation == FACT_HOLDS_PK:
        for size in range(1, len(tables) + 1):
            subsets.extend(combinations(tables, size))
    else:
        subsets.extend((t,) for t in tables)
        if fact in tables:
            dims = [t for t in tables if t != fact]
            for size in range(1, len(dims) + 1):
                subsets.extend((fact, *combo) for combo in combinations(dims, size))
    out = []
    for subset in subsets:
        keep = set(subset)
        preds = tuple(p for p in q.predicates if p.table in keep)
        out.append(query(subset, preds))
    out.sort(key=lambda s: (len(s.tables), canonical_key(s)))
    return out


class _ActiveDomains:
    """Per-column distinct values actually present in the dataset."""

    def __init__(self, ds: Dataset):
        self.ds = ds
        self._cache: dict = {}

    def get(self, table: str, column: str) -> np.ndarray:
        key = (table, column)
        if key not in self._cache:
            self._cache[key] = np.unique(self.ds.values(table, column))
        return self._cache[key]


def _predicate_columns(schema: SchemaDef, tables) -> list[tuple[str, str]]:
    out = []
    for t in tables:
        keys = schema.key_columns(t)
        for c in schema.table(t).columns:
            if c.name not in keys:
                out.append((t, c.name))
    return out


def generate_workload(
    schema: SchemaDef,
    ds: Dataset,
    n: int,
    join_range: tuple[int, int],
    pred_range: tuple[int, int],
    seed: int,
    exclude: frozenset | set = frozenset(),
) -> list[LabeledQuery]:
    """n labeled queries, deterministic given the seed, none with cardinality zero.

    The join count is uniform over join_range and the join graph uniform over
    the connected graphs of that size; the predicate count is uniform over
    pred_range capped by the available (non-key) columns. Queries whose
    canonical form appears in `exclude` (or earlier in this run) are rejected.
    """
    jlo, jhi = join_range
    plo, phi = pred_range
    max_joins = len(schema.dimensions())
    if not (0 <= jlo <= jhi <= max_joins):
        raise ConfigError(f"join range [{jlo},{jhi}] invalid for a schema with {max_joins} dimensions")
    if not (0 <= plo <= phi):
        raise ConfigError(f"predicate range [{plo},{phi}] invalid")
    if n < 0:
        raise ConfigError("workload size must be non-negative")

    rng = np.random.default_rng(seed)
    fact = schema.fact_table().name
    dim_names = sorted(t.name for t in schema.dimensions())
    all_tables = sorted(t.name for t in schema.tables)
    domains = _ActiveDomains(ds)

    seen = set(exclude)
    out: list[LabeledQuery] = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 1000 and len(out) < attempts / 100:
            raise GenerationError(
                f"rejection rate above 99% after {attempts} attempts "
                f"(n={n}, join_range={join_range}, pred_range={pred_range}); "
                f"the schema/data cannot support this configuration"
            )
        joins = int(rng.integers(jlo, jhi + 1))
        if schema.orientation == FACT_HOLDS_PK:
            pick = rng.choice(len(all_tables), size=joins + 1, replace=False)
            tables = tuple(all_tables[i] for i in pick)
        else:
            if joins == 0:
                tables = (all_tables[int(rng.integers(0, len(all_tables)))],)
            else:
                pick = rng.choice(len(dim_names), size=joins, replace=False)
                tables = (fact, *(dim_names[i] for i in pick))

        avail = _predicate_columns(schema, tables)
        hi = min(phi, len(avail))
        lo = min(plo, hi)
        n_preds = int(rng.integers(lo, hi + 1))
        cols = [avail[i] for i in rng.choice(len(avail), size=n_preds, replace=False)]
        preds = []
        for t, c in cols:
            col = schema.table(t).column(c)
            active = domains.get(t, c)
            value = int(active[int(rng.integers(0, len(active)))])
            op = "=" if col.kind != NUMERIC else OPS[int(rng.integers(0, len(OPS)))]
            preds.append(Predicate(t, c, op, value))

        q = query(tables, preds)
        key = canonical_key(q)
        if key in seen:
            continue
        card = execute_count(ds, q)
        if card == 0:
            continue
        seen.add(key)
        out.append(LabeledQuery(q, card))
    return out


def subquery_closure(
    schema: SchemaDef, ds: Dataset, parents: list[LabeledQuery], exclude: frozenset | set = frozenset()
) -> list[LabeledQuery]:
    """All labeled subqueries of the parents, deduplicated on canonical form.

    Subqueries of a nonzero-cardinality parent are themselves nonzero, so the
    result is a valid evaluation workload.
    """
    seen = set(exclude)
    out = []
    for parent in parents:
        for sub in enumerate_subqueries(schema, parent.query):
            key = canonical_key(sub)
            if key in seen:
                continue
            seen.add(key)
            out.append(LabeledQuery(sub, execute_count(ds, sub)))
    return out


def touches_range(q: Query, table: str, column: str, lo: int, hi: int) -> bool:
    """Whether any predicate of q on the given column admits values in [lo, hi)."""
    for p in q.predicates:
        if (p.table, p.column) != (table, column):
            continue
        if p.op == "=":
            if lo <= p.value < hi:
                return True
        elif p.op == "<":
            if p.value > lo:
                return True
        elif p.op == "<=":
            if p.value >= lo:
                return True
        elif p.op == ">":
            if p.value < hi - 1:
                return True
        elif p.op == ">=":
            if p.value < hi:
                return True
    return False
