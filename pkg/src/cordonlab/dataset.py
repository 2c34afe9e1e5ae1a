"""Deterministic synthetic data generation and the columnar dataset file.

All values are small non-negative integers. PK columns hold 0..row_count-1
in order, FK columns hold indices into the referenced table, so referential
integrity and PK uniqueness hold by construction.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError
from .schema import CATEGORICAL, Correlation, SchemaDef, validate_schema
from .util import derive_seed, stable_json

FILE_FORMAT = "cordonlab-ds"
FILE_VERSION = 1


@dataclass
class Dataset:
    schema: SchemaDef
    seed: int
    columns: dict = field(repr=False)  # (table, column) -> np.ndarray[int64], read-only

    def values(self, table: str, column: str) -> np.ndarray:
        try:
            return self.columns[(table, column)]
        except KeyError:
            raise ConfigError(f"dataset has no column '{table}.{column}'") from None

    def row_count(self, table: str) -> int:
        return self.schema.table(table).row_count

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.schema != other.schema or self.seed != other.seed:
            return False
        if set(self.columns) != set(other.columns):
            return False
        return all(np.array_equal(self.columns[k], other.columns[k]) for k in self.columns)


def zipf_weights(domain_size: int, skew: float) -> np.ndarray:
    ranks = np.arange(1, domain_size + 1, dtype=np.float64)
    w = ranks ** (-skew)
    return w / w.sum()


def sample_zipf(rng: np.random.Generator, domain_size: int, skew: float, n: int) -> np.ndarray:
    """Draw n values from [0, domain_size) with Zipf exponent `skew` (0 = uniform)."""
    if skew == 0.0:
        return rng.integers(0, domain_size, size=n, dtype=np.int64)
    cdf = np.cumsum(zipf_weights(domain_size, skew))
    cdf[-1] = 1.0  # guard against rounding
    return np.searchsorted(cdf, rng.random(n), side="right").astype(np.int64)


def _normalize_correlations(schema: SchemaDef, correlation_spec) -> tuple[Correlation, ...]:
    if correlation_spec is None:
        return schema.correlations
    out = []
    for entry in correlation_spec:
        if isinstance(entry, Correlation):
            out.append(entry)
        else:
            (ta, ca), (tb, cb), strength = entry
            out.append(Correlation(ta, ca, tb, cb, float(strength)))
    return tuple(out)


def generate_dataset(schema: SchemaDef, seed: int, correlation_spec=None) -> Dataset:
    """Generate all column stores for `schema`, bit-identical for equal inputs.

    `correlation_spec` overrides the schema's embedded correlation list when
    given; each entry makes column B a noisy function of column A with mixing
    weight equal to the stated strength.
    """
    validate_schema(schema)
    correlations = _normalize_correlations(schema, correlation_spec)
    probe = SchemaDef(schema.tables, schema.edges, schema.orientation, correlations)
    validate_schema(probe)  # correlation entries checked against this schema

    pk_cols = {(e.pk_table, e.pk_column) for e in schema.edges}
    fk_refs = {(e.fk_table, e.fk_column): e.pk_table for e in schema.edges}

    columns: dict = {}
    for t in schema.tables:
        for c in t.columns:
            key = (t.name, c.name)
            rng = np.random.default_rng(derive_seed(seed, "col", t.name, c.name))
            if key in pk_cols:
                vals = np.arange(t.row_count, dtype=np.int64)
            elif key in fk_refs:
                ref_rows = schema.table(fk_refs[key]).row_count
                vals = sample_zipf(rng, ref_rows, c.skew, t.row_count)
            else:
                vals = sample_zipf(rng, c.domain_size, c.skew, t.row_count)
            columns[key] = vals

    for corr in correlations:
        dom_a = schema.table(corr.table_a).column(corr.column_a).domain_size
        dom_b = schema.table(corr.table_b).column(corr.column_b).domain_size
        map_rng = np.random.default_rng(
            derive_seed(seed, "corr-map", corr.table_a, corr.column_a, corr.table_b, corr.column_b)
        )
        mapping = map_rng.integers(0, dom_b, size=dom_a, dtype=np.int64)
        a_vals = columns[(corr.table_a, corr.column_a)]
        if corr.table_a != corr.table_b:
            edge = next(
                e for e in schema.edges if e.pk_table == corr.table_a and e.fk_table == corr.table_b
            )
            a_vals = a_vals[columns[(corr.table_b, edge.fk_column)]]
        mask_rng = np.random.default_rng(
            derive_seed(seed, "corr-mask", corr.table_a, corr.column_a, corr.table_b, corr.column_b)
        )
        b_vals = columns[(corr.table_b, corr.column_b)]
        take = mask_rng.random(len(b_vals)) < corr.strength
        columns[(corr.table_b, corr.column_b)] = np.where(take, mapping[a_vals], b_vals)

    for arr in columns.values():
        arr.flags.writeable = False
    return Dataset(schema=probe, seed=int(seed), columns=columns)


def save_dataset(ds: Dataset, path) -> None:
    header = {
        "format": FILE_FORMAT,
        "version": FILE_VERSION,
        "schema": ds.schema.to_dict(),
        "seed": ds.seed,
    }
    with open(path, "wb") as fh:
        fh.write(stable_json(header).encode("utf-8"))
        fh.write(b"\n")
        for t in ds.schema.tables:
            for c in t.columns:
                arr = ds.columns[(t.name, c.name)]
                fh.write(struct.pack("<q", len(arr)))
                fh.write(arr.astype("<i8").tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        if not header_line.endswith(b"\n"):
            raise FormatError(f"dataset file '{path}' is truncated before the header ends")
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"dataset file '{path}' has a malformed header: {exc}") from exc
        if header.get("format") != FILE_FORMAT:
            raise FormatError(f"'{path}' is not a {FILE_FORMAT} file (format={header.get('format')!r})")
        version = header.get("version")
        if version != FILE_VERSION:
            raise FormatError(
                f"dataset file '{path}' has version {version}; this build reads version {FILE_VERSION}"
            )
        schema = SchemaDef.from_dict(header["schema"])
        seed = int(header["seed"])

        columns: dict = {}
        for t in schema.tables:
            for c in t.columns:
                raw_len = fh.read(8)
                if len(raw_len) != 8:
                    raise FormatError(f"dataset file '{path}' is truncated at '{t.name}.{c.name}'")
                (n,) = struct.unpack("<q", raw_len)
                if n != t.row_count:
                    raise FormatError(
                        f"column '{t.name}.{c.name}' holds {n} values but the schema "
                        f"declares {t.row_count} rows"
                    )
                raw = fh.read(8 * n)
                if len(raw) != 8 * n:
                    raise FormatError(f"dataset file '{path}' is truncated inside '{t.name}.{c.name}'")
                arr = np.frombuffer(raw, dtype="<i8").astype(np.int64)
                arr.flags.writeable = False
                columns[(t.name, c.name)] = arr
        if fh.read(1):
            raise FormatError(f"dataset file '{path}' has trailing bytes after the last column")
    return Dataset(schema=schema, seed=seed, columns=columns)
