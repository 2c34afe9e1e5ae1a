"""The constraint library: applicability tests plus augmentation.

Each constraint follows one interface: ``applicable`` decides whether a
query admits it, and an augment function turns an applicable (query, label)
pair into extra provably-labeled training samples and/or differentiable
loss terms.

Three constraint classes are implemented:

* Consistency: splitting a query on an unreferenced numeric column makes
  the two halves' cardinalities sum to the parent's. Emits one sum-equality
  loss term per application and no extra samples.
* PK-FK equality: joining (or dropping) a predicate-free PK-side table
  preserves cardinality exactly, so the label transports to the transformed
  query. Emits one extra sample and no loss terms.
* PK-FK inequality: a PK-side table carrying a predicate can only shrink
  the join, so dropping it bounds the original from above. Emits either a
  hinge loss on the bound or, in pseudo-label mode, a pseudo-labeled
  regression term on the dropped query (the label being the mean split-pair
  prediction sum over k fresh splits).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ApplicabilityError, ConfigError
from .metrics import qerror
from .queries import LabeledQuery, Query, SplitSpec
from .schema import SchemaDef
from .workload import (
    EQUALITY,
    INEQUALITY,
    add_pk_table,
    addable_pk_tables,
    drop_pk_table,
    droppable_pk_tables,
    numeric_split_columns,
    sample_split,
    split_query,
)


class ConstraintKind(enum.Enum):
    CONSISTENCY = "consistency"
    PKFK_EQUALITY = "pkfk_equality"
    PKFK_INEQUALITY = "pkfk_inequality"


SUM_EQUALITY = "sum_equality"
HINGE_LOWER_BOUND = "hinge_lower_bound"
PSEUDO_LABEL = "pseudo_label"


@dataclass(frozen=True)
class LossTerm:
    """A differentiable penalty that is minimal iff the constraint holds.

    queries by form:
      sum_equality      -> (parent, below_half, at_or_above_half)
      hinge_lower_bound -> (joined_query, dropped_query)
      pseudo_label      -> (dropped_query,)
    """

    kind: ConstraintKind
    form: str
    queries: tuple[Query, ...]
    label: float | None = None
    split: SplitSpec | None = None
    fallback_from_pseudo: bool = False


@dataclass(frozen=True)
class ConstraintApplication:
    extra_samples: tuple[LabeledQuery, ...] = ()
    loss_terms: tuple[LossTerm, ...] = ()

    def __post_init__(self):
        if not self.extra_samples and not self.loss_terms:
            raise ConfigError("a constraint application must produce samples or loss terms")


def applicable(kind: ConstraintKind, schema: SchemaDef, q: Query) -> bool:
    if kind is ConstraintKind.CONSISTENCY:
        return bool(numeric_split_columns(schema, q))
    if kind is ConstraintKind.PKFK_EQUALITY:
        if addable_pk_tables(schema, q):
            return True
        return any(rel == EQUALITY for _, rel in droppable_pk_tables(schema, q))
    if kind is ConstraintKind.PKFK_INEQUALITY:
        return any(rel == INEQUALITY for _, rel in droppable_pk_tables(schema, q))
    raise ConfigError(f"unknown constraint kind {kind!r}")


def applicable_constraints(schema: SchemaDef, q: Query) -> list[ConstraintKind]:
    """Applicable kinds in declaration order."""
    return [k for k in ConstraintKind if applicable(k, schema, q)]


def augment_consistency(
    schema: SchemaDef, q: Query, label: int, rng: np.random.Generator
) -> ConstraintApplication:
    if not applicable(ConstraintKind.CONSISTENCY, schema, q):
        raise ApplicabilityError("consistency constraint does not apply to this query")
    spec = sample_split(schema, q, rng)
    q1, q2 = split_query(schema, q, spec)
    term = LossTerm(
        kind=ConstraintKind.CONSISTENCY,
        form=SUM_EQUALITY,
        queries=(q, q1, q2),
        label=float(label),
        split=spec,
    )
    return ConstraintApplication(loss_terms=(term,))


def augment_pkfk_equality(
    schema: SchemaDef, q: Query, label: int, rng: np.random.Generator | None = None
) -> ConstraintApplication:
    """Transport the known label to an add- or drop-transformed query."""
    adds = addable_pk_tables(schema, q)
    if adds:
        table = adds[int(rng.integers(0, len(adds)))] if rng is not None else adds[0]
        new_q = add_pk_table(schema, q, table)
    else:
        eq_drops = sorted(t for t, rel in droppable_pk_tables(schema, q) if rel == EQUALITY)
        if not eq_drops:
            raise ApplicabilityError("PK-FK equality constraint does not apply to this query")
        table = eq_drops[int(rng.integers(0, len(eq_drops)))] if rng is not None else eq_drops[0]
        new_q, rel = drop_pk_table(schema, q, table)
        assert rel == EQUALITY
    return ConstraintApplication(extra_samples=(LabeledQuery(new_q, int(label)),))


def pseudo_label(
    schema: SchemaDef, q: Query, model, k: int, rng: np.random.Generator
) -> float:
    """The mean over k fresh splits of the predicted split-pair sums for q."""
    if k < 1:
        raise ConfigError("pseudo-labeling needs k >= 1")
    if not numeric_split_columns(schema, q):
        raise ApplicabilityError("no numeric column available to split for pseudo-labeling")
    halves = []
    for _ in range(k):
        spec = sample_split(schema, q, rng)
        halves.extend(split_query(schema, q, spec))
    estimates = _estimate_all(model, halves)
    total = 0.0
    for i in range(k):
        total += estimates[2 * i] + estimates[2 * i + 1]
    return total / k


def _estimate_all(model, queries) -> list[float]:
    many = getattr(model, "many", None)
    if many is not None:
        return [float(v) for v in many(queries)]
    return [float(model(q)) for q in queries]


def augment_pkfk_inequality(
    schema: SchemaDef,
    q: Query,
    label: int,
    mode: str = "bound",
    k: int = 5,
    model=None,
    rng: np.random.Generator | None = None,
) -> ConstraintApplication:
    if mode not in ("bound", "pseudo"):
        raise ConfigError(f"unknown inequality mode '{mode}'")
    options = sorted(t for t, rel in droppable_pk_tables(schema, q) if rel == INEQUALITY)
    if not options:
        raise ApplicabilityError("PK-FK inequality constraint does not apply to this query")
    table = options[int(rng.integers(0, len(options)))] if rng is not None else options[0]
    dropped, _ = drop_pk_table(schema, q, table)

    if mode == "pseudo":
        if model is None:
            raise ConfigError("pseudo-label mode needs the current model")
        if rng is None:
            raise ConfigError("pseudo-label mode needs an RNG for the splits")
        try:
            lab = pseudo_label(schema, dropped, model, k, rng)
        except ApplicabilityError:
            term = LossTerm(
                kind=ConstraintKind.PKFK_INEQUALITY,
                form=HINGE_LOWER_BOUND,
                queries=(q, dropped),
                fallback_from_pseudo=True,
            )
            return ConstraintApplication(loss_terms=(term,))
        term = LossTerm(
            kind=ConstraintKind.PKFK_INEQUALITY,
            form=PSEUDO_LABEL,
            queries=(dropped,),
            label=lab,
        )
        return ConstraintApplication(loss_terms=(term,))

    term = LossTerm(
        kind=ConstraintKind.PKFK_INEQUALITY,
        form=HINGE_LOWER_BOUND,
        queries=(q, dropped),
    )
    return ConstraintApplication(loss_terms=(term,))


def loss_term_value(
    term: LossTerm,
    estimate,
    hinge_space: str = "log",
    use_parent_label: bool = True,
) -> float:
    """Evaluate a loss term against any estimator.

    Sum-equality and pseudo-label forms report the q-error between the two
    sides (minimum 1 when the constraint holds); the hinge form reports the
    violation magnitude (0 when the bound holds).
    """
    if term.form == SUM_EQUALITY:
        parent, q1, q2 = term.queries
        target = float(term.label) if use_parent_label else float(estimate(parent))
        total = float(estimate(q1)) + float(estimate(q2))
        return qerror(target, total)
    if term.form == HINGE_LOWER_BOUND:
        joined, dropped = term.queries
        c_joined = float(estimate(joined))
        c_dropped = float(estimate(dropped))
        if c_joined <= c_dropped:
            return 0.0
        if hinge_space == "log":
            return math.log(c_joined / c_dropped)
        return c_joined - c_dropped
    if term.form == PSEUDO_LABEL:
        (dropped,) = term.queries
        return qerror(float(term.label), float(estimate(dropped)))
    raise ConfigError(f"unknown loss term form '{term.form}'")
