import numpy as np
import pytest

from cordonlab.dataset import Dataset, generate_dataset
from cordonlab.schema import (
    CATEGORICAL,
    DIMENSION,
    FACT,
    FACT_HOLDS_FK,
    FACT_HOLDS_PK,
    NUMERIC,
    ColumnDef,
    Edge,
    SchemaDef,
    TableDef,
    lab_schema,
    validate_schema,
)
from cordonlab.workload import generate_workload


def make_dataset(schema: SchemaDef, columns: dict) -> Dataset:
    """Hand-built dataset; PK columns must hold 0..row_count-1 in order."""
    validate_schema(schema)
    arrays = {}
    for (t, c), vals in columns.items():
        arr = np.array(vals, dtype=np.int64)
        arr.flags.writeable = False
        arrays[(t, c)] = arr
    return Dataset(schema=schema, seed=0, columns=arrays)


def micro_pk_schema(fact_rows=3, dim_rows=3, fact_domain=3) -> SchemaDef:
    """Two-table star, fact holds the PK, one payload column each."""
    fact = TableDef(
        "f",
        FACT,
        fact_rows,
        (
            ColumnDef("id", CATEGORICAL, fact_rows),
            ColumnDef("a", NUMERIC, fact_domain),
        ),
    )
    dim = TableDef(
        "d",
        DIMENSION,
        dim_rows,
        (
            ColumnDef("fid", CATEGORICAL, fact_rows),
            ColumnDef("b", NUMERIC, 10),
        ),
    )
    return SchemaDef((fact, dim), (Edge("f", "id", "d", "fid"),), FACT_HOLDS_PK)


@pytest.fixture
def micro_pk():
    """The hand-enumerable join: fact a=[1,1,2], dim fk=[0,0,2]."""
    schema = micro_pk_schema()
    ds = make_dataset(
        schema,
        {
            ("f", "id"): [0, 1, 2],
            ("f", "a"): [1, 1, 2],
            ("d", "fid"): [0, 0, 2],
            ("d", "b"): [5, 6, 7],
        },
    )
    return schema, ds


@pytest.fixture(scope="session")
def small_fk():
    schema = lab_schema(orientation=FACT_HOLDS_FK, fact_rows=2000, dim_rows=120)
    return schema, generate_dataset(schema, seed=7)


@pytest.fixture(scope="session")
def small_pk():
    schema = lab_schema(orientation=FACT_HOLDS_PK, fact_rows=2000, dim_rows=150)
    return schema, generate_dataset(schema, seed=9)


@pytest.fixture(scope="session")
def small_fk_workload(small_fk):
    schema, ds = small_fk
    return generate_workload(schema, ds, 150, (0, 4), (1, 4), seed=13)


@pytest.fixture(scope="session")
def small_pk_workload(small_pk):
    schema, ds = small_pk
    return generate_workload(schema, ds, 150, (0, 4), (1, 4), seed=17)
