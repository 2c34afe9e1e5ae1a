"""Set-based cardinality model.

A query is encoded as three sets: per-table vectors (table one-hot plus the
materialized-sample bitmap), per-join vectors (one-hot over schema edges
covered by the query), and per-predicate vectors (column one-hot, operator
one-hot, value normalized by domain size). Each set runs through its own
two-layer MLP and mean pooling; the pooled encodings feed a final MLP whose
scalar output is the natural-log cardinality. Estimates are clamped below
at ``clamp_floor`` so every downstream ratio stays defined.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import nn
from .dataset import Dataset
from .errors import FormatError, ValidationError
from .oracle import _apply_op, sample_rows
from .queries import OPS, Query, validate_query
from .schema import SchemaDef

ENCODERS = ("table", "join", "pred")


class FeatureLayout:
    """Vector widths and index maps; a pure function of (schema, s)."""

    def __init__(self, schema: SchemaDef, s: int):
        self.s = s
        self.tables = [t.name for t in schema.tables]
        self.table_index = {name: i for i, name in enumerate(self.tables)}
        self.columns = [(t.name, c.name) for t in schema.tables for c in t.columns]
        self.column_index = {tc: i for i, tc in enumerate(self.columns)}
        self.domain = {(t.name, c.name): c.domain_size for t in schema.tables for c in t.columns}
        self.edges = list(schema.edges)
        self.table_width = len(self.tables) + s
        self.join_width = len(self.edges)
        self.pred_width = len(self.columns) + len(OPS) + 1

    def widths(self) -> dict:
        return {"table": self.table_width, "join": self.join_width, "pred": self.pred_width}


@dataclass
class FeatureSet:
    fingerprint: str
    table_rows: np.ndarray
    table_mask: np.ndarray
    join_rows: np.ndarray
    join_mask: np.ndarray
    pred_rows: np.ndarray
    pred_mask: np.ndarray


def _sentinel(width: int) -> tuple[np.ndarray, np.ndarray]:
    return np.zeros((1, width)), np.zeros(1)


class Featurizer:
    """Featurizes queries against one dataset with a fixed bitmap sample."""

    def __init__(self, schema: SchemaDef, ds: Dataset, s: int = 64, seed: int = 0):
        if schema.fingerprint() != ds.schema.fingerprint():
            raise ValidationError("featurizer schema does not match the dataset's schema")
        self.schema = schema
        self.ds = ds
        self.s = s
        self.seed = seed
        self.layout = FeatureLayout(schema, s)
        self.fingerprint = schema.fingerprint()
        self._samples = {}  # table -> {column: sampled values}
        for t in schema.tables:
            idx = sample_rows(ds, t.name, s, seed)
            self._samples[t.name] = {
                c.name: ds.values(t.name, c.name)[idx] for c in t.columns
            }

    def _bitmap(self, q: Query, table: str) -> np.ndarray:
        sampled = self._samples[table]
        eff = len(next(iter(sampled.values()))) if sampled else 0
        bits = np.ones(eff, dtype=bool)
        for p in q.preds_on(table):
            bits &= _apply_op(sampled[p.column], p.op, p.value)
        out = np.zeros(self.s)
        out[:eff] = bits.astype(np.float64)
        return out

    def featurize(self, q: Query) -> FeatureSet:
        validate_query(self.schema, q)
        lay = self.layout

        table_rows = np.zeros((len(q.tables), lay.table_width))
        for i, t in enumerate(q.tables):
            table_rows[i, lay.table_index[t]] = 1.0
            table_rows[i, len(lay.tables) :] = self._bitmap(q, t)
        table_mask = np.ones(len(q.tables))

        present = set(q.tables)
        covered = [i for i, e in enumerate(lay.edges) if e.pk_table in present and e.fk_table in present]
        if covered:
            join_rows = np.zeros((len(covered), lay.join_width))
            for r, i in enumerate(covered):
                join_rows[r, i] = 1.0
            join_mask = np.ones(len(covered))
        else:
            join_rows, join_mask = _sentinel(lay.join_width)

        if q.predicates:
            pred_rows = np.zeros((len(q.predicates), lay.pred_width))
            for r, p in enumerate(q.predicates):
                pred_rows[r, lay.column_index[(p.table, p.column)]] = 1.0
                pred_rows[r, len(lay.columns) + OPS.index(p.op)] = 1.0
                pred_rows[r, -1] = p.value / lay.domain[(p.table, p.column)]
            pred_mask = np.ones(len(q.predicates))
        else:
            pred_rows, pred_mask = _sentinel(lay.pred_width)

        return FeatureSet(
            fingerprint=self.fingerprint,
            table_rows=table_rows,
            table_mask=table_mask,
            join_rows=join_rows,
            join_mask=join_mask,
            pred_rows=pred_rows,
            pred_mask=pred_mask,
        )


@dataclass
class StackedFeatures:
    """A batch of feature sets padded to common set sizes."""

    n: int
    table_rows: np.ndarray
    table_mask: np.ndarray
    join_rows: np.ndarray
    join_mask: np.ndarray
    pred_rows: np.ndarray
    pred_mask: np.ndarray
    fingerprint: str


def stack_features(fss: list[FeatureSet]) -> StackedFeatures:
    if not fss:
        raise ValidationError("cannot stack an empty batch")
    fp = fss[0].fingerprint
    if any(fs.fingerprint != fp for fs in fss):
        raise ValidationError("feature sets in one batch must share a schema fingerprint")

    def pad(kind: str):
        rows = [getattr(fs, f"{kind}_rows") for fs in fss]
        masks = [getattr(fs, f"{kind}_mask") for fs in fss]
        smax = max(r.shape[0] for r in rows)
        width = rows[0].shape[1]
        x = np.zeros((len(fss), smax, width))
        m = np.zeros((len(fss), smax))
        for i, (r, mk) in enumerate(zip(rows, masks)):
            x[i, : r.shape[0], :] = r
            m[i, : len(mk)] = mk
        return x, m

    tx, tm = pad("table")
    jx, jm = pad("join")
    px, pm = pad("pred")
    return StackedFeatures(
        n=len(fss),
        table_rows=tx,
        table_mask=tm,
        join_rows=jx,
        join_mask=jm,
        pred_rows=px,
        pred_mask=pm,
        fingerprint=fp,
    )


MODEL_FORMAT = "cordonlab-model"
MODEL_VERSION = 1

def _param_shapes(widths: dict, h: int) -> dict:
    shapes = {}
    for enc in ENCODERS:
        shapes[f"{enc}_w1"] = (widths[enc], h)
        shapes[f"{enc}_b1"] = (h,)
        shapes[f"{enc}_w2"] = (h, h)
        shapes[f"{enc}_b2"] = (h,)
    shapes["out_w1"] = (3 * h, h)
    shapes["out_b1"] = (h,)
    shapes["out_w2"] = (h, 1)
    shapes["out_b2"] = (1,)
    return shapes


class MscnModel:
    def __init__(self, fingerprint, s, h, widths, store, clamp_floor=1.0, bitmap_seed=0):
        self.fingerprint = fingerprint
        self.s = s
        self.h = h
        self.widths = widths
        self.store = store
        self.clamp_floor = float(clamp_floor)
        self.bitmap_seed = bitmap_seed

    @staticmethod
    def initialize(
        schema: SchemaDef,
        s: int = 64,
        h: int = 128,
        seed: int = 0,
        clamp_floor: float = 1.0,
        bitmap_seed: int = 0,
    ) -> "MscnModel":
        layout = FeatureLayout(schema, s)
        widths = layout.widths()
        rng = np.random.default_rng(seed)
        store = nn.ParamStore()
        for name, shape in _param_shapes(widths, h).items():
            if name.endswith(("b1", "b2")):
                store.add(name, np.zeros(shape))
            else:
                store.add(name, nn.he_init(rng, shape[0], shape[1]))
        return MscnModel(schema.fingerprint(), s, h, widths, store, clamp_floor, bitmap_seed)


def forward_batch(model: MscnModel, batch: StackedFeatures) -> nn.Tensor:
    """Raw log-cardinality outputs, shape (n,)."""
    if batch.fingerprint != model.fingerprint:
        raise ValidationError("feature sets were built for a different schema than the model")
    store = model.store

    def encode(kind: str, rows, mask):
        x = nn.constant(rows)
        h1 = nn.relu(nn.linear(x, store[f"{kind}_w1"], store[f"{kind}_b1"]))
        h2 = nn.relu(nn.linear(h1, store[f"{kind}_w2"], store[f"{kind}_b2"]))
        return nn.mean_pool(h2, mask)

    z = nn.concat(
        [
            encode("table", batch.table_rows, batch.table_mask),
            encode("join", batch.join_rows, batch.join_mask),
            encode("pred", batch.pred_rows, batch.pred_mask),
        ]
    )
    o = nn.relu(nn.linear(z, store["out_w1"], store["out_b1"]))
    raw = nn.linear(o, store["out_w2"], store["out_b2"])
    return nn.reshape(raw, (batch.n,))


_EXP_CAP = 690.0  # keeps exp() finite even for a diverged model


def predict_many(model: MscnModel, fss: list[FeatureSet]) -> np.ndarray:
    raw = forward_batch(model, stack_features(fss)).values
    return np.maximum(model.clamp_floor, np.exp(np.minimum(raw, _EXP_CAP)))


def log_predict_many(model: MscnModel, fss: list[FeatureSet]) -> np.ndarray:
    raw = forward_batch(model, stack_features(fss)).values
    return np.maximum(np.log(model.clamp_floor), raw)


def predict(model: MscnModel, fs: FeatureSet) -> float:
    """Clamped positive cardinality estimate for one feature set."""
    return float(predict_many(model, [fs])[0])


def mscn_estimator(model: MscnModel, featurizer: Featurizer):
    if featurizer.fingerprint != model.fingerprint:
        raise ValidationError("featurizer schema does not match the model checkpoint")

    def estimate(q: Query) -> float:
        return predict(model, featurizer.featurize(q))

    def estimate_many(queries) -> np.ndarray:
        return predict_many(model, [featurizer.featurize(q) for q in queries])

    estimate.many = estimate_many
    return estimate


def save_model(model: MscnModel, path) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "schema_fingerprint": model.fingerprint,
        "s": model.s,
        "h": model.h,
        "clamp_floor": model.clamp_floor,
        "bitmap_seed": model.bitmap_seed,
        "widths": model.widths,
        "tensors": {
            name: {"shape": list(t.values.shape), "values": t.values.reshape(-1).tolist()}
            for name, t in model.store.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path, expect_fingerprint: str | None = None) -> MscnModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"checkpoint '{path}' is not valid JSON: {exc}") from exc
    if doc.get("format") != MODEL_FORMAT:
        raise FormatError(f"'{path}' is not a {MODEL_FORMAT} file")
    if doc.get("version") != MODEL_VERSION:
        raise FormatError(
            f"checkpoint '{path}' has version {doc.get('version')}; this build reads version {MODEL_VERSION}"
        )
    if expect_fingerprint is not None and doc["schema_fingerprint"] != expect_fingerprint:
        raise FormatError(
            "checkpoint was trained against a different schema "
            f"(fingerprint {doc['schema_fingerprint'][:12]}.. != {expect_fingerprint[:12]}..)"
        )
    widths = {k: int(v) for k, v in doc["widths"].items()}
    h = int(doc["h"])
    store = nn.ParamStore()
    tensors = doc.get("tensors", {})
    for name, shape in _param_shapes(widths, h).items():
        if name not in tensors:
            raise FormatError(f"checkpoint '{path}' is missing tensor '{name}'")
        entry = tensors[name]
        if tuple(entry["shape"]) != shape:
            raise FormatError(
                f"tensor '{name}' has shape {tuple(entry['shape'])}, expected {shape}"
            )
        values = np.array(entry["values"], dtype=np.float64).reshape(shape)
        store.add(name, values)
    return MscnModel(
        fingerprint=doc["schema_fingerprint"],
        s=int(doc["s"]),
        h=h,
        widths=widths,
        store=store,
        clamp_floor=float(doc.get("clamp_floor", 1.0)),
        bitmap_seed=int(doc.get("bitmap_seed", 0)),
    )
