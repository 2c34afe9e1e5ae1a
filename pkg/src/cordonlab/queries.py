"""Queries, predicates, and the canonical JSONL workload format.

A query is a set of tables plus conjunctive predicates, at most one per
column. Construction canonicalizes order (tables and predicates sorted
lexicographically), so equal queries compare and hash equal and serialize
to identical lines.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import FormatError, ValidationError
from .schema import CATEGORICAL, FACT_HOLDS_FK, SchemaDef
from .util import stable_json

OPS = ("<", "<=", "=", ">=", ">")


@dataclass(frozen=True, order=True)
class Predicate:
    table: str
    column: str
    op: str
    value: int


@dataclass(frozen=True)
class Query:
    tables: tuple[str, ...]
    predicates: tuple[Predicate, ...]

    def preds_on(self, table: str) -> tuple[Predicate, ...]:
        return tuple(p for p in self.predicates if p.table == table)

    def referenced_columns(self) -> set[tuple[str, str]]:
        return {(p.table, p.column) for p in self.predicates}

    def n_joins(self) -> int:
        return len(self.tables) - 1


def query(tables, predicates=()) -> Query:
    norm = []
    for p in predicates:
        if not isinstance(p, Predicate):
            p = Predicate(p[0], p[1], p[2], int(p[3]))
        norm.append(p)
    return Query(tuple(sorted(set(tables))), tuple(sorted(norm)))


@dataclass(frozen=True)
class LabeledQuery:
    query: Query
    cardinality: int


@dataclass(frozen=True)
class SplitSpec:
    table: str
    column: str
    point: int


def query_to_dict(q: Query) -> dict:
    return {
        "tables": list(q.tables),
        "predicates": [[p.table, p.column, p.op, p.value] for p in q.predicates],
    }


def query_from_dict(d: dict) -> Query:
    try:
        return query(d["tables"], [tuple(p) for p in d["predicates"]])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed query document: {exc}") from exc


def canonical_key(q: Query) -> str:
    """The canonical serialized form; equality of keys is equality of queries."""
    return stable_json(query_to_dict(q))


def validate_query(schema: SchemaDef, q: Query) -> None:
    if not q.tables:
        raise ValidationError("query must reference at least one table")
    for t in q.tables:
        if not schema.has_table(t):
            raise ValidationError(f"query references unknown table '{t}'")
    seen_cols = set()
    for p in q.predicates:
        if p.table not in q.tables:
            raise ValidationError(f"predicate on '{p.table}' but that table is not in the query")
        tbl = schema.table(p.table)
        if not tbl.has_column(p.column):
            raise ValidationError(f"predicate references unknown column '{p.table}.{p.column}'")
        if p.op not in OPS:
            raise ValidationError(f"unknown predicate operator '{p.op}'")
        col = tbl.column(p.column)
        if col.kind == CATEGORICAL and p.op != "=":
            raise ValidationError(
                f"categorical column '{p.table}.{p.column}' only supports '=', got '{p.op}'"
            )
        key = (p.table, p.column)
        if key in seen_cols:
            raise ValidationError(f"more than one predicate on column '{p.table}.{p.column}'")
        seen_cols.add(key)
    if len(q.tables) > 1:
        fact = schema.fact_table().name
        if schema.orientation == FACT_HOLDS_FK and fact not in q.tables:
            raise ValidationError("multi-table queries must include the fact table in this orientation")
        # fact_holds_pk: any table subset is connected through the shared key.


def write_workload(path, labeled: list[LabeledQuery]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lq in labeled:
            doc = query_to_dict(lq.query)
            doc["cardinality"] = int(lq.cardinality)
            fh.write(stable_json(doc))
            fh.write("\n")


def read_workload(path) -> list[LabeledQuery]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
            if "cardinality" not in doc:
                raise FormatError(f"{path}:{lineno}: missing cardinality field")
            out.append(LabeledQuery(query_from_dict(doc), int(doc["cardinality"])))
    return out
