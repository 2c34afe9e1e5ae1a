"""Star schema definitions: tables, columns, PK-FK edges, and validation.

Two orientations are supported. In ``fact_holds_pk`` the fact table owns a
single primary key and every dimension carries a foreign key to it, so
dimensions can also join each other directly on that shared key. In
``fact_holds_fk`` each dimension owns its primary key and the fact table
carries one foreign key per dimension, so multi-table queries must include
the fact table.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError
from .util import sha256_hex, stable_json

NUMERIC = "numeric"
CATEGORICAL = "categorical"

FACT = "fact"
DIMENSION = "dimension"

FACT_HOLDS_PK = "fact_holds_pk"
FACT_HOLDS_FK = "fact_holds_fk"
ORIENTATIONS = (FACT_HOLDS_PK, FACT_HOLDS_FK)


@dataclass(frozen=True)
class ColumnDef:
    name: str
    kind: str  # numeric | categorical
    domain_size: int
    skew: float = 0.0  # Zipf exponent; 0 means uniform


@dataclass(frozen=True)
class TableDef:
    name: str
    role: str  # fact | dimension
    row_count: int
    columns: tuple[ColumnDef, ...]

    def column(self, name: str) -> ColumnDef:
        for col in self.columns:
            if col.name == name:
                return col
        raise ConfigError(f"table '{self.name}' has no column '{name}'")

    def has_column(self, name: str) -> bool:
        return any(col.name == name for col in self.columns)


@dataclass(frozen=True)
class Edge:
    pk_table: str
    pk_column: str
    fk_table: str
    fk_column: str


@dataclass(frozen=True)
class Correlation:
    """Column B is regenerated as a noisy function of column A.

    With probability ``strength`` a row of B takes a fixed pseudo-random
    mapping of the corresponding A value; otherwise it keeps an independent
    draw. Cross-table pairs are allowed when A sits on the PK side and B on
    the FK side of one schema edge (values propagate through the join).
    """

    table_a: str
    column_a: str
    table_b: str
    column_b: str
    strength: float


@dataclass(frozen=True)
class SchemaDef:
    tables: tuple[TableDef, ...]
    edges: tuple[Edge, ...]
    orientation: str
    correlations: tuple[Correlation, ...] = field(default=())

    def table(self, name: str) -> TableDef:
        for t in self.tables:
            if t.name == name:
                return t
        raise ConfigError(f"schema has no table '{name}'")

    def has_table(self, name: str) -> bool:
        return any(t.name == name for t in self.tables)

    def fact_table(self) -> TableDef:
        facts = [t for t in self.tables if t.role == FACT]
        if len(facts) != 1:
            raise ConfigError(f"schema must have exactly one fact table, found {len(facts)}")
        return facts[0]

    def dimensions(self) -> tuple[TableDef, ...]:
        return tuple(t for t in self.tables if t.role == DIMENSION)

    def key_columns(self, table: str) -> set[str]:
        keys = set()
        for e in self.edges:
            if e.pk_table == table:
                keys.add(e.pk_column)
            if e.fk_table == table:
                keys.add(e.fk_column)
        return keys

    def is_key_column(self, table: str, column: str) -> bool:
        return column in self.key_columns(table)

    def edge_for_dimension(self, dim: str) -> Edge:
        for e in self.edges:
            if dim in (e.pk_table, e.fk_table) and dim != self.fact_table().name:
                return e
        raise ConfigError(f"no edge touches dimension '{dim}'")

    def covered_edges(self, tables) -> tuple[Edge, ...]:
        """Edges whose both endpoints are present in the given table set."""
        present = set(tables)
        return tuple(e for e in self.edges if e.pk_table in present and e.fk_table in present)

    def to_dict(self) -> dict:
        return {
            "tables": [
                {
                    "name": t.name,
                    "role": t.role,
                    "row_count": t.row_count,
                    "columns": [
                        {"name": c.name, "kind": c.kind, "domain_size": c.domain_size, "skew": c.skew}
                        for c in t.columns
                    ],
                }
                for t in self.tables
            ],
            "edges": [[e.pk_table, e.pk_column, e.fk_table, e.fk_column] for e in self.edges],
            "orientation": self.orientation,
            "correlations": [
                [[c.table_a, c.column_a], [c.table_b, c.column_b], c.strength] for c in self.correlations
            ],
        }

    @staticmethod
    def from_dict(d: dict) -> "SchemaDef":
        try:
            tables = tuple(
                TableDef(
                    name=t["name"],
                    role=t["role"],
                    row_count=int(t["row_count"]),
                    columns=tuple(
                        ColumnDef(
                            name=c["name"],
                            kind=c["kind"],
                            domain_size=int(c["domain_size"]),
                            skew=float(c.get("skew", 0.0)),
                        )
                        for c in t["columns"]
                    ),
                )
                for t in d["tables"]
            )
            edges = tuple(Edge(*e) for e in d["edges"])
            correlations = tuple(
                Correlation(a[0], a[1], b[0], b[1], float(s)) for a, b, s in d.get("correlations", [])
            )
            schema = SchemaDef(tables, edges, d["orientation"], correlations)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed schema document: {exc}") from exc
        validate_schema(schema)
        return schema

    def fingerprint(self) -> str:
        return sha256_hex(stable_json(self.to_dict()))


def validate_schema(schema: SchemaDef) -> None:
    """Check all structural invariants, raising ConfigError on the first hole."""
    if schema.orientation not in ORIENTATIONS:
        raise ConfigError(f"unknown orientation '{schema.orientation}'")

    names = [t.name for t in schema.tables]
    if len(set(names)) != len(names):
        raise ConfigError("table names must be unique")

    fact = schema.fact_table()  # raises unless exactly one
    dims = {t.name for t in schema.dimensions()}

    for t in schema.tables:
        if t.role not in (FACT, DIMENSION):
            raise ConfigError(f"table '{t.name}' has unknown role '{t.role}'")
        if t.row_count <= 0:
            raise ConfigError(f"table '{t.name}' must have a positive row count")
        col_names = [c.name for c in t.columns]
        if len(set(col_names)) != len(col_names):
            raise ConfigError(f"column names within table '{t.name}' must be unique")
        for c in t.columns:
            if c.kind not in (NUMERIC, CATEGORICAL):
                raise ConfigError(f"column '{t.name}.{c.name}' has unknown kind '{c.kind}'")
            if c.domain_size < 1:
                raise ConfigError(f"column '{t.name}.{c.name}' needs domain_size >= 1")
            if c.skew < 0:
                raise ConfigError(f"column '{t.name}.{c.name}' needs skew >= 0")

    linked_dims = []
    for e in schema.edges:
        for side, tbl, col in (("pk", e.pk_table, e.pk_column), ("fk", e.fk_table, e.fk_column)):
            if not schema.has_table(tbl):
                raise ConfigError(f"edge references unknown table '{tbl}'")
            if not schema.table(tbl).has_column(col):
                raise ConfigError(f"edge references unknown column '{tbl}.{col}'")
        endpoints = {e.pk_table, e.fk_table}
        if fact.name not in endpoints or not (endpoints - {fact.name}) <= dims:
            raise ConfigError(f"edge {e} must link the fact table to a dimension")
        dim = (endpoints - {fact.name}).pop()
        linked_dims.append(dim)

    if sorted(linked_dims) != sorted(dims):
        raise ConfigError("every dimension must be linked to the fact table by exactly one edge")

    if schema.orientation == FACT_HOLDS_PK:
        pk_cols = {(e.pk_table, e.pk_column) for e in schema.edges}
        if schema.edges and (len(pk_cols) != 1 or next(iter(pk_cols))[0] != fact.name):
            raise ConfigError("fact_holds_pk requires all edges to share the fact table's PK column")
    else:
        for e in schema.edges:
            if e.pk_table not in dims or e.fk_table != fact.name:
                raise ConfigError("fact_holds_fk requires dimension-held PKs referenced by fact FKs")
        fk_cols = [e.fk_column for e in schema.edges]
        if len(set(fk_cols)) != len(fk_cols):
            raise ConfigError("fact_holds_fk requires a distinct fact FK column per dimension")

    for e in schema.edges:
        pk_tbl = schema.table(e.pk_table)
        if pk_tbl.column(e.pk_column).domain_size != pk_tbl.row_count:
            raise ConfigError(
                f"PK column '{e.pk_table}.{e.pk_column}' must have domain_size equal to its row count"
            )
        if schema.table(e.fk_table).column(e.fk_column).domain_size != pk_tbl.row_count:
            raise ConfigError(
                f"FK column '{e.fk_table}.{e.fk_column}' must have domain_size equal to "
                f"the referenced table's row count"
            )

    for c in schema.correlations:
        for tbl, col in ((c.table_a, c.column_a), (c.table_b, c.column_b)):
            if not schema.has_table(tbl) or not schema.table(tbl).has_column(col):
                raise ConfigError(f"correlation references unknown column '{tbl}.{col}'")
            if schema.is_key_column(tbl, col):
                raise ConfigError(f"correlation may not involve key column '{tbl}.{col}'")
        if not 0.0 <= c.strength <= 1.0:
            raise ConfigError("correlation strength must lie in [0, 1]")
        if c.table_a != c.table_b:
            ok = any(e.pk_table == c.table_a and e.fk_table == c.table_b for e in schema.edges)
            if not ok:
                raise ConfigError(
                    f"cross-table correlation needs '{c.table_a}' on the PK side of an edge "
                    f"into '{c.table_b}'"
                )


def lab_schema(
    orientation: str = FACT_HOLDS_FK,
    fact_rows: int = 50_000,
    dim_rows: int = 1_000,
    n_dims: int = 4,
    correlation: float = 0.8,
) -> SchemaDef:
    """The stock laboratory star schema used by the CLI and the test runs.

    Carries two correlated column pairs (one inside the fact table, one
    crossing a dimension edge) so that independence-based estimation has
    something to get wrong.
    """
    if n_dims < 1:
        raise ConfigError("lab schema needs at least one dimension")
    dim_payload = [
        (("seg", NUMERIC, 20, 0.9), ("region", CATEGORICAL, 12, 0.4)),
        (("size", NUMERIC, 30, 0.0), ("area", CATEGORICAL, 10, 0.6)),
        (("price", NUMERIC, 60, 0.7), ("brand", CATEGORICAL, 25, 1.0)),
        (("month", NUMERIC, 12, 0.0), ("dow", CATEGORICAL, 7, 0.0)),
    ]
    dim_names = ["cust", "store", "item", "date", "promo", "ship", "geo", "chan"]
    if n_dims > len(dim_names):
        raise ConfigError(f"lab schema supports at most {len(dim_names)} dimensions")

    fact_payload = (
        ColumnDef("qty", NUMERIC, 100, 0.0),
        ColumnDef("amt", NUMERIC, 100, 0.0),
        ColumnDef("tier", NUMERIC, 40, 0.0),
        ColumnDef("mode", CATEGORICAL, 8, 0.8),
    )

    dims = []
    edges = []
    fact_keys = []
    for i in range(n_dims):
        dname = dim_names[i]
        payload = dim_payload[i % len(dim_payload)]
        cols = [ColumnDef(n, k, d, s) for (n, k, d, s) in payload]
        fk_skew = 1.0 if i < 2 else 0.3
        if orientation == FACT_HOLDS_FK:
            key = ColumnDef(f"{dname}_id", CATEGORICAL, dim_rows, 0.0)
            dims.append(TableDef(dname, DIMENSION, dim_rows, (key, *cols)))
            fact_keys.append(ColumnDef(f"{dname}_fk", CATEGORICAL, dim_rows, fk_skew))
            edges.append(Edge(dname, f"{dname}_id", "sales", f"{dname}_fk"))
        else:
            fk = ColumnDef("m_id", CATEGORICAL, fact_rows, fk_skew)
            dims.append(TableDef(dname, DIMENSION, dim_rows, (fk, *cols)))
            edges.append(Edge("sales", "sales_id", dname, "m_id"))

    if orientation == FACT_HOLDS_FK:
        fact_cols = (*fact_keys, *fact_payload)
    else:
        fact_cols = (ColumnDef("sales_id", CATEGORICAL, fact_rows, 0.0), *fact_payload)
    fact = TableDef("sales", FACT, fact_rows, fact_cols)

    correlations = (
        Correlation("sales", "qty", "sales", "amt", correlation),
        Correlation(dims[0].name, dims[0].columns[1].name, "sales", "tier", correlation)
        if orientation == FACT_HOLDS_FK
        else Correlation("sales", "qty", dims[0].name, dims[0].columns[1].name, correlation),
    )
    schema = SchemaDef((fact, *dims), tuple(edges), orientation, correlations)
    validate_schema(schema)
    return schema


def save_schema(schema: SchemaDef, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(stable_json(schema.to_dict()))
        fh.write("\n")


def load_schema(path) -> SchemaDef:
    import json

    from .errors import FormatError

    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"schema file '{path}' is not valid JSON: {exc}") from exc
    return SchemaDef.from_dict(doc)
