import math

import numpy as np
import pytest

from cordonlab.constraints import (
    HINGE_LOWER_BOUND,
    PSEUDO_LABEL,
    SUM_EQUALITY,
    ConstraintApplication,
    ConstraintKind,
    applicable,
    applicable_constraints,
    augment_consistency,
    augment_pkfk_equality,
    augment_pkfk_inequality,
    loss_term_value,
    pseudo_label,
)
from cordonlab.errors import ApplicabilityError, ConfigError
from cordonlab.oracle import counting_estimator, execute_count
from cordonlab.queries import canonical_key, query
from cordonlab.schema import (
    CATEGORICAL,
    DIMENSION,
    FACT,
    FACT_HOLDS_FK,
    NUMERIC,
    ColumnDef,
    Edge,
    SchemaDef,
    TableDef,
)

from conftest import make_dataset


def rng():
    return np.random.default_rng(5)


# -- applicability -----------------------------------------------------------


def minimal_fk_schema():
    """Fact with key+categorical only; dim with key + numeric + categorical."""
    fact = TableDef(
        "f",
        FACT,
        50,
        (ColumnDef("d_fk", CATEGORICAL, 10), ColumnDef("mode", CATEGORICAL, 4)),
    )
    dim = TableDef(
        "d",
        DIMENSION,
        10,
        (
            ColumnDef("d_id", CATEGORICAL, 10),
            ColumnDef("x", NUMERIC, 8),
            ColumnDef("c", CATEGORICAL, 3),
        ),
    )
    return SchemaDef((fact, dim), (Edge("d", "d_id", "f", "d_fk"),), FACT_HOLDS_FK)


def test_consistency_needs_a_spare_numeric_column():
    schema = minimal_fk_schema()
    q = query(["f"], [("f", "mode", "=", 1)])  # fact has no numeric non-key column
    assert not applicable(ConstraintKind.CONSISTENCY, schema, q)
    q2 = query(["d"])
    assert applicable(ConstraintKind.CONSISTENCY, schema, q2)
    q3 = query(["d"], [("d", "x", "<", 4)])  # the only numeric column is referenced
    assert not applicable(ConstraintKind.CONSISTENCY, schema, q3)


def test_pkfk_equality_applies_to_fact_free_query(small_pk):
    schema, _ = small_pk
    q = query(["cust"], [("cust", "seg", "<", 9)])
    assert applicable(ConstraintKind.PKFK_EQUALITY, schema, q)


def test_pkfk_inequality_applies_to_predicated_pk_side_join(small_fk):
    schema, _ = small_fk
    q = query(["sales", "store", "date"], [("date", "month", "=", 3)])
    assert applicable(ConstraintKind.PKFK_INEQUALITY, schema, q)
    q2 = query(["sales", "store"])
    assert not applicable(ConstraintKind.PKFK_INEQUALITY, schema, q2)


def test_no_pattern_matches_yields_empty_list():
    schema = minimal_fk_schema()
    # single dimension table, its only numeric column referenced, fact absent
    q = query(["d"], [("d", "x", "<", 3), ("d", "c", "=", 1)])
    assert applicable_constraints(schema, q) == []


def test_applicable_constraints_order_is_declaration_order(small_fk):
    schema, _ = small_fk
    q = query(["sales", "cust", "store"], [("cust", "seg", "<", 9)])
    kinds = applicable_constraints(schema, q)
    assert kinds == [
        ConstraintKind.CONSISTENCY,
        ConstraintKind.PKFK_EQUALITY,
        ConstraintKind.PKFK_INEQUALITY,
    ]


# -- consistency -------------------------------------------------------------


def fake_estimator(mapping, default=None):
    def estimate(q):
        key = canonical_key(q)
        if key in mapping:
            return mapping[key]
        if default is not None:
            return default(q)
        raise KeyError(key)

    return estimate


def test_consistency_loss_is_one_for_the_oracle(small_fk, small_fk_workload):
    schema, ds = small_fk
    est = counting_estimator(ds)
    checked = 0
    r = rng()
    for lq in small_fk_workload[:40]:
        if not applicable(ConstraintKind.CONSISTENCY, schema, lq.query):
            continue
        app = augment_consistency(schema, lq.query, lq.cardinality, r)
        assert app.extra_samples == ()
        assert len(app.loss_terms) == 1
        assert loss_term_value(app.loss_terms[0], est) == 1.0
        checked += 1
    assert checked > 20


def test_consistency_loss_worked_numbers(small_fk):
    schema, _ = small_fk
    q = query(["sales"], [("sales", "mode", "=", 1)])
    app = augment_consistency(schema, q, 100, rng())
    term = app.loss_terms[0]
    assert term.form == SUM_EQUALITY
    _, q1, q2 = term.queries

    est = fake_estimator({canonical_key(q1): 300.0, canonical_key(q2): 700.0})
    assert loss_term_value(term, est) == pytest.approx(10.0)

    est2 = fake_estimator({canonical_key(q1): 20.0, canonical_key(q2): 30.0})
    assert loss_term_value(term, est2) == pytest.approx(2.0)


def test_consistency_label_free_variant_uses_parent_estimate(small_fk):
    schema, _ = small_fk
    q = query(["sales"], [("sales", "mode", "=", 1)])
    app = augment_consistency(schema, q, 100, rng())
    parent, q1, q2 = app.loss_terms[0].queries
    est = fake_estimator(
        {canonical_key(parent): 500.0, canonical_key(q1): 300.0, canonical_key(q2): 700.0}
    )
    assert loss_term_value(app.loss_terms[0], est, use_parent_label=False) == pytest.approx(2.0)


# -- PK-FK equality ----------------------------------------------------------


def test_equality_transports_the_label(small_pk):
    schema, ds = small_pk
    q = query(["cust"], [("cust", "seg", "<", 9)])
    app = augment_pkfk_equality(schema, q, 42)
    assert app.loss_terms == ()
    (extra,) = app.extra_samples
    assert extra.cardinality == 42
    assert set(extra.query.tables) == {"cust", "sales"}


def test_equality_extra_samples_are_oracle_exact(small_fk, small_fk_workload):
    schema, ds = small_fk
    checked = 0
    for lq in small_fk_workload:
        if not applicable(ConstraintKind.PKFK_EQUALITY, schema, lq.query):
            continue
        app = augment_pkfk_equality(schema, lq.query, lq.cardinality, rng())
        (extra,) = app.extra_samples
        assert execute_count(ds, extra.query) == extra.cardinality == lq.cardinality
        checked += 1
    assert checked > 30


def test_equality_drop_form(small_fk):
    schema, ds = small_fk
    q = query(["sales", "cust", "store", "item", "date"], [("sales", "qty", "<", 70)])
    app = augment_pkfk_equality(schema, q, 7)
    (extra,) = app.extra_samples
    assert len(extra.query.tables) == 4  # one predicate-free dimension dropped
    assert execute_count(ds, extra.query) == execute_count(ds, q)


# -- PK-FK inequality --------------------------------------------------------


def test_hinge_values(small_fk):
    schema, _ = small_fk
    q = query(["sales", "store"], [("store", "size", "<", 10)])
    app = augment_pkfk_inequality(schema, q, 5, mode="bound", rng=rng())
    term = app.loss_terms[0]
    assert term.form == HINGE_LOWER_BOUND
    joined, dropped = term.queries
    est_ok = fake_estimator({canonical_key(joined): 5.0, canonical_key(dropped): 10.0})
    assert loss_term_value(term, est_ok) == 0.0
    est_bad = fake_estimator({canonical_key(joined): 10.0, canonical_key(dropped): 5.0})
    assert loss_term_value(term, est_bad) == pytest.approx(math.log(2.0))
    assert loss_term_value(term, est_bad, hinge_space="linear") == pytest.approx(5.0)


def test_pseudo_label_with_oracle_is_exact(small_fk):
    schema, ds = small_fk
    est = counting_estimator(ds)
    q = query(["sales", "store"], [("store", "size", "<", 10)])
    for k in (1, 5, 10):
        app = augment_pkfk_inequality(schema, q, 5, mode="pseudo", k=k, model=est, rng=rng())
        term = app.loss_terms[0]
        assert term.form == PSEUDO_LABEL
        (dropped,) = term.queries
        assert term.label == pytest.approx(float(execute_count(ds, dropped)))
        assert loss_term_value(term, est) == 1.0


def test_pseudo_falls_back_to_bound_without_split_columns():
    schema = minimal_fk_schema()
    ds = make_dataset(
        schema,
        {
            ("f", "d_fk"): np.arange(50) % 10,
            ("f", "mode"): np.arange(50) % 4,
            ("d", "d_id"): np.arange(10),
            ("d", "x"): np.arange(10) % 8,
            ("d", "c"): np.arange(10) % 3,
        },
    )
    est = counting_estimator(ds)
    # dropping d leaves only the fact table, which has no numeric column
    q = query(["f", "d"], [("d", "x", "<", 4), ("f", "mode", "=", 1)])
    app = augment_pkfk_inequality(schema, q, 3, mode="pseudo", k=3, model=est, rng=rng())
    term = app.loss_terms[0]
    assert term.form == HINGE_LOWER_BOUND
    assert term.fallback_from_pseudo


def test_pseudo_mode_requires_model_and_rng(small_fk):
    schema, _ = small_fk
    q = query(["sales", "store"], [("store", "size", "<", 10)])
    with pytest.raises(ConfigError):
        augment_pkfk_inequality(schema, q, 5, mode="pseudo", rng=rng())
    with pytest.raises(ConfigError):
        augment_pkfk_inequality(schema, q, 5, mode="pseudo", model=lambda q: 1.0)


def test_augment_raises_on_inapplicable_queries(small_fk):
    schema, _ = small_fk
    lone = query(["sales"])
    with pytest.raises(ApplicabilityError):
        augment_pkfk_inequality(schema, lone, 1, rng=rng())
    no_split = query(["sales", "cust"])
    with pytest.raises(ApplicabilityError):
        augment_pkfk_inequality(schema, no_split, 1, rng=rng())


def test_loss_terms_nonnegative_under_arbitrary_estimators(small_fk, small_fk_workload):
    schema, ds = small_fk
    r = rng()
    value_rng = np.random.default_rng(99)

    def random_estimator(q):
        return float(value_rng.uniform(1.0, 1e6))

    checked = 0
    for lq in small_fk_workload[:50]:
        for kind in applicable_constraints(schema, lq.query):
            if kind is ConstraintKind.CONSISTENCY:
                app = augment_consistency(schema, lq.query, lq.cardinality, r)
            elif kind is ConstraintKind.PKFK_EQUALITY:
                continue  # no loss terms by construction
            else:
                app = augment_pkfk_inequality(schema, lq.query, lq.cardinality, mode="bound", rng=r)
            for term in app.loss_terms:
                v = loss_term_value(term, random_estimator)
                assert v >= 0.0
                if term.form == SUM_EQUALITY:
                    assert v >= 1.0
                checked += 1
    assert checked > 30


def test_application_must_produce_something():
    with pytest.raises(ConfigError):
        ConstraintApplication()
