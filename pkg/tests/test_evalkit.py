import numpy as np
import pytest

from cordonlab import oracle
from cordonlab.constraints import ConstraintKind
from cordonlab.errors import ConfigError, NumericError
from cordonlab.evalkit import (
    DKS_CONSISTENCY,
    DKS_PKFK_EQUALITY,
    PICK_ALL,
    PICK_LARGEST,
    DksRanking,
    evaluate,
    find_dks,
    violation_probes,
    violation_ratio,
)
from cordonlab.metrics import nearest_rank
from cordonlab.oracle import counting_estimator, execute_count
from cordonlab.queries import canonical_key, query
from cordonlab.workload import enumerate_subqueries


def test_nearest_rank_percentiles():
    vals = list(range(1, 101))
    assert nearest_rank(vals, 50) == 50
    assert nearest_rank(vals, 95) == 95
    assert nearest_rank(vals, 99) == 99
    assert nearest_rank([7.0], 95) == 7.0


def test_oracle_estimator_scores_one_everywhere(small_fk, small_fk_workload):
    _, ds = small_fk
    summary, errs = evaluate(counting_estimator(ds), small_fk_workload)
    assert summary["median"] == summary["p95"] == summary["max"] == 1.0
    assert (errs == 1.0).all()


def test_constant_ratio_estimator(small_fk, small_fk_workload):
    _, ds = small_fk
    est = counting_estimator(ds)
    summary, _ = evaluate(lambda q: 10.0 * est(q), small_fk_workload)
    assert summary["median"] == pytest.approx(10.0)
    assert summary["p95"] == pytest.approx(10.0)
    assert summary["max"] == pytest.approx(10.0)


def test_percentiles_are_permutation_invariant(small_fk, small_fk_workload):
    _, ds = small_fk
    rng = np.random.default_rng(0)
    noisy = lambda q: float(execute_count(ds, q)) * float(rng.uniform(0.2, 5.0))
    s1, _ = evaluate(noisy, small_fk_workload)
    rng = np.random.default_rng(0)
    order = np.random.default_rng(1).permutation(len(small_fk_workload))
    s2, _ = evaluate(noisy, [small_fk_workload[i] for i in order])
    assert s1 == s2


def probes_for(schema, ds, workload, kind, seed=5, per_query=1):
    return violation_probes(schema, ds, [lq.query for lq in workload], kind, seed, per_query)


def test_probes_deterministic_and_oracle_clean(small_fk, small_fk_workload):
    schema, ds = small_fk
    est = counting_estimator(ds)
    for kind in ConstraintKind:
        a = probes_for(schema, ds, small_fk_workload, kind)
        b = probes_for(schema, ds, small_fk_workload, kind)
        assert a == b
        assert len(a) > 20
        assert violation_ratio(est, a, kind) == 0.0


def test_consistency_probe_sums_exact(small_fk, small_fk_workload):
    schema, ds = small_fk
    for probe in probes_for(schema, ds, small_fk_workload, ConstraintKind.CONSISTENCY)[:30]:
        q, q1, q2 = probe.queries
        assert execute_count(ds, q1) + execute_count(ds, q2) == execute_count(ds, q)


def test_inequality_probe_order(small_fk, small_fk_workload):
    schema, ds = small_fk
    for probe in probes_for(schema, ds, small_fk_workload, ConstraintKind.PKFK_INEQUALITY)[:30]:
        q, dropped = probe.queries
        assert execute_count(ds, q) <= execute_count(ds, dropped)


def test_violation_thresholds(small_fk, small_fk_workload):
    schema, ds = small_fk
    probes = probes_for(schema, ds, small_fk_workload, ConstraintKind.CONSISTENCY)[:1]
    (probe,) = probes
    q, q1, q2 = probe.queries

    def make_est(vq, v1, v2):
        table = {canonical_key(q): vq, canonical_key(q1): v1, canonical_key(q2): v2}
        return lambda qq: table[canonical_key(qq)]

    assert violation_ratio(make_est(300, 50, 50), probes, ConstraintKind.CONSISTENCY) == 1.0
    assert violation_ratio(make_est(190, 50, 50), probes, ConstraintKind.CONSISTENCY) == 0.0
    assert violation_ratio(make_est(200, 50, 50), probes, ConstraintKind.CONSISTENCY) == 0.0
    assert violation_ratio(make_est(49, 50, 50), probes, ConstraintKind.CONSISTENCY) == 1.0

    ineq = probes_for(schema, ds, small_fk_workload, ConstraintKind.PKFK_INEQUALITY)[:1]
    qi, dropped = ineq[0].queries

    def make_pair(vq, vd):
        table = {canonical_key(qi): vq, canonical_key(dropped): vd}
        return lambda qq: table[canonical_key(qq)]

    assert violation_ratio(make_pair(100.0, 100.0), ineq, ConstraintKind.PKFK_INEQUALITY) == 0.0
    assert violation_ratio(make_pair(100.01, 100.0), ineq, ConstraintKind.PKFK_INEQUALITY) == 1.0


def test_empty_probe_list_is_an_error(small_fk):
    _, ds = small_fk
    with pytest.raises(NumericError):
        violation_ratio(counting_estimator(ds), [], ConstraintKind.CONSISTENCY)


def test_per_query_multiplies_probe_counts(small_fk, small_fk_workload):
    schema, ds = small_fk
    single = probes_for(schema, ds, small_fk_workload, ConstraintKind.CONSISTENCY, per_query=1)
    triple = probes_for(schema, ds, small_fk_workload, ConstraintKind.CONSISTENCY, per_query=3)
    assert len(triple) == 3 * len(single)


# -- DKS finder ---------------------------------------------------------------


def test_dks_consistency_worked_degree(small_fk):
    schema, _ = small_fk
    cand = query(["cust"], [("cust", "region", "=", 3)])

    def est(q):
        ops = {p.op for p in q.predicates if (p.table, p.column) != ("cust", "region")}
        if "<" in ops:
            return 300.0
        if ">=" in ops:
            return 700.0
        return 100.0

    ranking = find_dks(est, schema, [cand], k=5, kind=DKS_CONSISTENCY, seed=3)
    (entry,) = ranking.entries
    assert entry.degree == pytest.approx(10.0)
    assert entry.witness == cand


def test_dks_pkfk_worked_degree(small_fk):
    schema, _ = small_fk
    cand = query(["sales", "cust"], [("sales", "qty", "<", 40)])
    dropped = query(["sales"], [("sales", "qty", "<", 40)])

    def est(q):
        if canonical_key(q) == canonical_key(cand):
            return 100.0
        if canonical_key(q) == canonical_key(dropped):
            return 700.0
        return 100.0

    ranking = find_dks(est, schema, [cand], k=5, kind=DKS_PKFK_EQUALITY, seed=3)
    (entry,) = ranking.entries
    assert entry.degree == pytest.approx(7.0)
    assert entry.witness == cand


def test_dks_oracle_degenerates_to_tiebreak_order(small_fk, small_fk_workload):
    schema, ds = small_fk
    est = counting_estimator(ds)
    candidates = [lq.query for lq in small_fk_workload[:25]]
    ranking = find_dks(est, schema, candidates, k=10, kind=DKS_CONSISTENCY, seed=3)
    degrees = [e.degree for e in ranking.entries]
    assert all(d == pytest.approx(1.0) for d in degrees)
    keys = [canonical_key(e.query) for e in ranking.entries]
    assert keys == sorted(keys)

    ranking_eq = find_dks(est, schema, candidates, k=10, kind=DKS_PKFK_EQUALITY, seed=3)
    for e in ranking_eq.entries:
        assert e.degree in (pytest.approx(1.0), 0.0)


def test_dks_never_executes_queries(small_fk, small_fk_workload):
    schema, ds = small_fk
    candidates = [lq.query for lq in small_fk_workload[:20]]
    rng = np.random.default_rng(1)
    fake = lambda q: float(rng.uniform(1, 1e5))
    before = oracle.execute_call_count()
    find_dks(fake, schema, candidates, k=5, kind=DKS_CONSISTENCY, seed=3)
    assert oracle.execute_call_count() == before


def test_dks_ranking_invariants(small_fk, small_fk_workload):
    schema, ds = small_fk
    rng = np.random.default_rng(2)
    noisy = lambda q: float(execute_count(ds, q)) * float(rng.uniform(0.1, 10.0))
    candidates = [lq.query for lq in small_fk_workload[:40]]
    ranking = find_dks(noisy, schema, candidates, k=15, kind=DKS_CONSISTENCY, seed=3)
    degrees = [e.degree for e in ranking.entries]
    assert degrees == sorted(degrees, reverse=True)
    assert len(ranking.entries) == 15
    for e in ranking.entries:
        if e.witness is not None:
            subs = {canonical_key(s) for s in enumerate_subqueries(schema, e.query)}
            assert canonical_key(e.witness) in subs


def test_dks_excludes_many_join_candidates():
    from cordonlab.dataset import generate_dataset
    from cordonlab.schema import lab_schema

    schema = lab_schema(n_dims=5, fact_rows=1000, dim_rows=50)
    ds = generate_dataset(schema, seed=1)
    big = query([t.name for t in schema.tables])  # 5 joins
    ranking = find_dks(counting_estimator(ds), schema, [big], k=5, seed=1)
    assert ranking.entries == []


def test_dks_pick_largest_uses_cheap_estimator(small_fk, small_fk_workload):
    schema, ds = small_fk
    with pytest.raises(ConfigError):
        find_dks(counting_estimator(ds), schema, [small_fk_workload[0].query], k=1,
                 pick_mode=PICK_LARGEST)
    est = counting_estimator(ds)
    cand = [lq.query for lq in small_fk_workload[:10] if lq.query.n_joins() >= 1][:5]
    ranking = find_dks(est, schema, cand, k=5, pick_mode=PICK_LARGEST, cheap_estimator=est, seed=3)
    for e in ranking.entries:
        if e.witness is None:
            continue
        subs = enumerate_subqueries(schema, e.query)
        largest = max(subs, key=lambda s: (execute_count(ds, s), canonical_key(s)))
        assert canonical_key(e.witness) == canonical_key(largest)


def test_dks_jsonl_roundtrip(tmp_path, small_fk, small_fk_workload):
    schema, ds = small_fk
    candidates = [lq.query for lq in small_fk_workload[:10]]
    ranking = find_dks(counting_estimator(ds), schema, candidates, k=5, seed=3)
    path = tmp_path / "dks.jsonl"
    ranking.to_jsonl(path)
    loaded = DksRanking.from_jsonl(path)
    assert loaded == ranking
