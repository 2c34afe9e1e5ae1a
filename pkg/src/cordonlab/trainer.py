"""The training loop: minibatched optimization of the combined loss.

Per epoch the (possibly label-subsampled) workload is shuffled and consumed
in minibatches without replacement. For every (query, label) pair the
configured constraint mode picks zero, one (uniformly random), or all
applicable constraints; extra provably-labeled samples join the same
minibatch's empirical term, while loss terms join the logic term weighted
by omega. One optimizer step runs per minibatch.

All loss surfaces are computed in log space: the empirical term is
|log c_hat - log c| (the monotone equivalent of q-error), the sum-equality
and pseudo-label terms are the |log| gap between their two sides, and the
hinge is relu on the log (or, behind the config switch, linear) gap.
Reported metrics always use q-error itself.

Three independent seeded streams drive initialization, shuffling, and
constraint sampling, so a run with omega = 0 and augmentation disabled is
bit-identical to constraint_mode = "off" under the same seed.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .constraints import (
    HINGE_LOWER_BOUND,
    PSEUDO_LABEL,
    SUM_EQUALITY,
    ConstraintKind,
    applicable_constraints,
    augment_consistency,
    augment_pkfk_equality,
    augment_pkfk_inequality,
)
from .dataset import Dataset
from .errors import ConfigError, NumericError
from .metrics import qerror  # noqa: F401  (re-exported: q-error is defined with the trainer)
from .mscn import Featurizer, MscnModel, forward_batch, mscn_estimator, stack_features
from .queries import LabeledQuery, query_to_dict
from .schema import SchemaDef
from .util import derive_seed, stable_json

CONSTRAINT_MODES = ("off", "random", "all")
INEQUALITY_MODES = ("bound", "pseudo")
HINGE_SPACES = ("log", "linear")

_LINEAR_HINGE_CAP = 690.0  # exp() of a log-estimate stays finite below this


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 128
    lr: float = 1e-3
    omega: float = 1.0
    constraint_mode: str = "random"
    inequality_mode: str = "bound"
    pseudo_k: int = 5
    label_fraction: float = 1.0
    seed: int = 0
    clamp_floor: float = 1.0
    hinge_space: str = "log"
    use_parent_label: bool = True
    augmentation: bool = True
    hidden: int = 128
    bitmap_s: int = 64
    optimizer: str = "adam"

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.omega < 0:
            raise ConfigError("omega must be >= 0")
        if self.constraint_mode not in CONSTRAINT_MODES:
            raise ConfigError(f"constraint_mode must be one of {CONSTRAINT_MODES}")
        if self.inequality_mode not in INEQUALITY_MODES:
            raise ConfigError(f"inequality_mode must be one of {INEQUALITY_MODES}")
        if self.hinge_space not in HINGE_SPACES:
            raise ConfigError(f"hinge_space must be one of {HINGE_SPACES}")
        if not 0 < self.label_fraction <= 1:
            raise ConfigError("label_fraction must lie in (0, 1]")
        if self.pseudo_k < 1:
            raise ConfigError("pseudo_k must be >= 1")
        if self.clamp_floor <= 0:
            raise ConfigError("clamp_floor must be positive")


@dataclass
class EpochStats:
    epoch: int
    emp_loss: float
    logic_loss: float
    seconds: float
    n_consistency: int
    n_pkfk_eq: int
    n_pkfk_ineq: int


@dataclass
class TrainLog:
    epochs: list[EpochStats] = field(default_factory=list)

    def counts_by_kind(self) -> dict:
        return {
            ConstraintKind.CONSISTENCY: sum(e.n_consistency for e in self.epochs),
            ConstraintKind.PKFK_EQUALITY: sum(e.n_pkfk_eq for e in self.epochs),
            ConstraintKind.PKFK_INEQUALITY: sum(e.n_pkfk_ineq for e in self.epochs),
        }

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["epoch", "emp_loss", "logic_loss", "seconds", "n_consistency", "n_pkfk_eq", "n_pkfk_ineq"]
            )
            for e in self.epochs:
                writer.writerow(
                    [e.epoch, f"{e.emp_loss:.6f}", f"{e.logic_loss:.6f}", f"{e.seconds:.3f}",
                     e.n_consistency, e.n_pkfk_eq, e.n_pkfk_ineq]
                )


def subsample_labels(workload: list[LabeledQuery], fraction: float, seed: int) -> list[LabeledQuery]:
    """Seeded uniform subsample of exactly round(fraction * n) queries."""
    if not 0 < fraction <= 1:
        raise ConfigError("label fraction must lie in (0, 1]")
    n = len(workload)
    size = max(1, int(round(fraction * n)))
    if size >= n:
        return list(workload)
    idx = np.random.default_rng(seed).choice(n, size=size, replace=False)
    idx.sort()
    return [workload[i] for i in idx]


@dataclass
class _Batch:
    """Everything one optimizer step needs, in index form."""

    fs: list = field(default_factory=list)
    queries: list = field(default_factory=list)
    emp_idx: list = field(default_factory=list)
    emp_logc: list = field(default_factory=list)
    sum_terms: list = field(default_factory=list)  # (parent_idx|None, i1, i2, log_label|None)
    hinge_terms: list = field(default_factory=list)  # (i_joined, i_dropped)
    pseudo_terms: list = field(default_factory=list)  # (i_dropped, log_label)

    def add_query(self, fs, q) -> int:
        self.fs.append(fs)
        self.queries.append(q)
        return len(self.fs) - 1


def _build_loss(model: MscnModel, batch: _Batch, cfg: TrainConfig):
    """Assemble the combined scalar loss graph; returns (loss, emp_sum, logic_sum).

    The loss reads the raw log-output, not the floor-clamped estimate: a
    clamp inside the graph would zero every gradient once the model under-
    shoots the floor, which is an absorbing state. Clamping stays a
    prediction-time concern.
    """
    raw = forward_batch(model, stack_features(batch.fs))
    lg = raw

    emp = nn.sum_all(
        nn.absolute(nn.sub(nn.gather(lg, batch.emp_idx), nn.constant(np.array(batch.emp_logc))))
    )

    logic_parts = []
    if batch.sum_terms:
        p_idx = [t[0] for t in batch.sum_terms]
        i1 = [t[1] for t in batch.sum_terms]
        i2 = [t[2] for t in batch.sum_terms]
        side = nn.logaddexp(nn.gather(lg, i1), nn.gather(lg, i2))
        if all(i is None for i in p_idx):
            target = nn.constant(np.array([t[3] for t in batch.sum_terms]))
        else:
            target = nn.gather(lg, [i for i in p_idx])
        logic_parts.append(nn.sum_all(nn.absolute(nn.sub(target, side))))
    if batch.hinge_terms:
        iq = [t[0] for t in batch.hinge_terms]
        idr = [t[1] for t in batch.hinge_terms]
        if cfg.hinge_space == "log":
            gap = nn.sub(nn.gather(lg, iq), nn.gather(lg, idr))
        else:
            cj = nn.exp(nn.clamp_max(nn.gather(lg, iq), _LINEAR_HINGE_CAP))
            cd = nn.exp(nn.clamp_max(nn.gather(lg, idr), _LINEAR_HINGE_CAP))
            gap = nn.sub(cj, cd)
        logic_parts.append(nn.sum_all(nn.relu(gap)))
    if batch.pseudo_terms:
        idr = [t[0] for t in batch.pseudo_terms]
        target = nn.constant(np.array([t[1] for t in batch.pseudo_terms]))
        logic_parts.append(nn.sum_all(nn.absolute(nn.sub(nn.gather(lg, idr), target))))

    logic = None
    for part in logic_parts:
        logic = part if logic is None else nn.add(logic, part)
    if logic is None:
        return emp, emp, None
    return nn.add(emp, nn.scale(logic, cfg.omega)), emp, logic


def _abort_non_finite(batch: _Batch, raw_values: np.ndarray):
    for i, v in enumerate(raw_values):
        if not np.isfinite(v):
            raise NumericError(
                "non-finite model output while training on query "
                + stable_json(query_to_dict(batch.queries[i]))
            )
    raise NumericError("non-finite training loss (overflow in a loss term)")


_KIND_FIELD = {
    ConstraintKind.CONSISTENCY: "n_consistency",
    ConstraintKind.PKFK_EQUALITY: "n_pkfk_eq",
    ConstraintKind.PKFK_INEQUALITY: "n_pkfk_ineq",
}


def train(
    schema: SchemaDef,
    ds: Dataset,
    workload: list[LabeledQuery],
    cfg: TrainConfig,
    model: MscnModel | None = None,
    featurizer: Featurizer | None = None,
    progress=None,
) -> tuple[MscnModel, TrainLog]:
    cfg.validate()
    if not workload:
        raise ConfigError("training workload is empty")

    if featurizer is None:
        featurizer = Featurizer(schema, ds, s=cfg.bitmap_s, seed=derive_seed(cfg.seed, "bitmaps"))
    if model is None:
        model = MscnModel.initialize(
            schema,
            s=featurizer.s,
            h=cfg.hidden,
            seed=derive_seed(cfg.seed, "init"),
            clamp_floor=cfg.clamp_floor,
            bitmap_seed=featurizer.seed,
        )

    labeled = subsample_labels(workload, cfg.label_fraction, derive_seed(cfg.seed, "labels"))
    base_fs = [featurizer.featurize(lq.query) for lq in labeled]

    shuffle_rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))
    constraint_rng = np.random.default_rng(derive_seed(cfg.seed, "constraints"))
    estimator = mscn_estimator(model, featurizer)

    log = TrainLog()
    n = len(labeled)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        emp_total = 0.0
        emp_count = 0
        logic_total = 0.0
        logic_count = 0
        counts = {k: 0 for k in ConstraintKind}
        for start in range(0, n, cfg.batch_size):
            chunk = order[start : start + cfg.batch_size]
            batch = _Batch()
            for i in chunk:
                lq = labeled[i]
                idx = batch.add_query(base_fs[i], lq.query)
                batch.emp_idx.append(idx)
                batch.emp_logc.append(math.log(lq.cardinality))

            if cfg.constraint_mode != "off":
                for i in chunk:
                    lq = labeled[i]
                    kinds = applicable_constraints(schema, lq.query)
                    if not kinds:
                        continue
                    if cfg.constraint_mode == "random":
                        kinds = [kinds[int(constraint_rng.integers(0, len(kinds)))]]
                    for kind in kinds:
                        _apply_constraint(
                            schema, lq, kind, cfg, batch, featurizer, estimator, constraint_rng
                        )
                        counts[kind] += 1

            loss, emp, logic = _build_loss(model, batch, cfg)
            loss_val = float(loss.values)
            if not np.isfinite(loss_val):
                raw = forward_batch(model, stack_features(batch.fs)).values
                _abort_non_finite(batch, raw)
            nn.backward(loss)
            nn.optimizer_step(model.store, cfg.lr, cfg.optimizer)

            emp_total += float(emp.values)
            emp_count += len(batch.emp_idx)
            if logic is not None:
                logic_total += float(logic.values)
                logic_count += len(batch.sum_terms) + len(batch.hinge_terms) + len(batch.pseudo_terms)

        stats = EpochStats(
            epoch=epoch,
            emp_loss=emp_total / max(1, emp_count),
            logic_loss=logic_total / max(1, logic_count),
            seconds=time.perf_counter() - t0,
            n_consistency=counts[ConstraintKind.CONSISTENCY],
            n_pkfk_eq=counts[ConstraintKind.PKFK_EQUALITY],
            n_pkfk_ineq=counts[ConstraintKind.PKFK_INEQUALITY],
        )
        log.epochs.append(stats)
        if progress is not None:
            progress(stats)
    return model, log


def _apply_constraint(schema, lq, kind, cfg, batch, featurizer, estimator, rng) -> None:
    if kind is ConstraintKind.CONSISTENCY:
        app = augment_consistency(schema, lq.query, lq.cardinality, rng)
    elif kind is ConstraintKind.PKFK_EQUALITY:
        app = augment_pkfk_equality(schema, lq.query, lq.cardinality, rng)
    else:
        app = augment_pkfk_inequality(
            schema,
            lq.query,
            lq.cardinality,
            mode=cfg.inequality_mode,
            k=cfg.pseudo_k,
            model=estimator,
            rng=rng,
        )

    if cfg.augmentation:
        for extra in app.extra_samples:
            idx = batch.add_query(featurizer.featurize(extra.query), extra.query)
            batch.emp_idx.append(idx)
            batch.emp_logc.append(math.log(extra.cardinality))

    if cfg.omega > 0:
        for term in app.loss_terms:
            if term.form == SUM_EQUALITY:
                parent, q1, q2 = term.queries
                i1 = batch.add_query(featurizer.featurize(q1), q1)
                i2 = batch.add_query(featurizer.featurize(q2), q2)
                if cfg.use_parent_label:
                    batch.sum_terms.append((None, i1, i2, math.log(term.label)))
                else:
                    ip = batch.add_query(featurizer.featurize(parent), parent)
                    batch.sum_terms.append((ip, i1, i2, None))
            elif term.form == HINGE_LOWER_BOUND:
                joined, dropped = term.queries
                iq = batch.add_query(featurizer.featurize(joined), joined)
                idr = batch.add_query(featurizer.featurize(dropped), dropped)
                batch.hinge_terms.append((iq, idr))
            elif term.form == PSEUDO_LABEL:
                (dropped,) = term.queries
                idr = batch.add_query(featurizer.featurize(dropped), dropped)
                batch.pseudo_terms.append((idr, math.log(max(term.label, cfg.clamp_floor))))
