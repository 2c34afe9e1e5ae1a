"""Minimal dense-tensor math with reverse-mode gradient accumulation.

Everything is float64 and every reduction has one fixed evaluation order, so
identical seeds and inputs give bit-identical parameters after any number of
optimizer steps. The op set is exactly what the set-based estimator and its
loss terms need; gradients are verified against central finite differences
by ``grad_check``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

# ---------------------------------------------------------------------------
# graph core


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad=False, parents=(), backward=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.values.shape

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


def variable(values) -> Tensor:
    return Tensor(np.array(values, dtype=np.float64), requires_grad=True)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into .grad of every tensor reachable from loss."""
    if loss.values.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.values.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    loss._accumulate(np.ones_like(loss.values))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# kink recording (used by grad_check to skip non-smooth coordinates)

_KINK_TRACE: list | None = None


class record_kinks:
    """Context manager collecting the branch pattern of every piecewise op."""

    def __enter__(self):
        global _KINK_TRACE
        self._saved = _KINK_TRACE
        _KINK_TRACE = []
        return _KINK_TRACE

    def __exit__(self, *exc):
        global _KINK_TRACE
        _KINK_TRACE = self._saved
        return False


def _note_kink(pattern: np.ndarray) -> None:
    if _KINK_TRACE is not None:
        _KINK_TRACE.append(pattern.copy())


# ---------------------------------------------------------------------------
# ops


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.values.shape != b.values.shape:
        raise ShapeError(f"{op}: operand shapes {a.values.shape} and {b.values.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = Tensor(a.values + b.values, parents=(a, b))

    def back(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    out._backward = back
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = Tensor(a.values - b.values, parents=(a, b))

    def back(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    out._backward = back
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    out = Tensor(a.values * b.values, parents=(a, b))

    def back(g):
        if a.requires_grad:
            a._accumulate(g * b.values)
        if b.requires_grad:
            b._accumulate(g * a.values)

    out._backward = back
    return out


def scale(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.values * c, parents=(x,))

    def back(g):
        if x.requires_grad:
            x._accumulate(g * c)

    out._backward = back
    return out


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.values), parents=(x,))

    def back(g):
        if x.requires_grad:
            x._accumulate(g / x.values)

    out._backward = back
    return out


def exp(x: Tensor) -> Tensor:
    out = Tensor(np.exp(x.values), parents=(x,))

    def back(g):
        if x.requires_grad:
            x._accumulate(g * out.values)

    out._backward = back
    return out


def relu(x: Tensor) -> Tensor:
    active = x.values > 0
    _note_kink(active)
    out = Tensor(np.where(active, x.values, 0.0), parents=(x,))

    def back(g):
        if x.requires_grad:
            x._accumulate(g * active)

    out._backward = back
    return out


def absolute(x: Tensor) -> Tensor:
    sign = np.sign(x.values)
    _note_kink(sign >= 0)
    out = Tensor(np.abs(x.values), parents=(x,))

    def back(g):
        if x.requires_grad:
            x._accumulate(g * sign)

    out._backward = back
    return out


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties route the gradient to the first operand."""
    _same_shape(a, b, "maximum")
    take_a = a.values >= b.values
    _note_kink(take_a)
    out = Tensor(np.where(take_a, a.values, b.values), parents=(a, b))

    def back(g):
        if a.requires_grad:
            a._accumulate(g * take_a)
        if b.requires_grad:
            b._accumulate(g * ~take_a)

    out._backward = back
    return out


def clamp_min(x: Tensor, floor: float) -> Tensor:
    keep = x.values >= floor
    _note_kink(keep)
    out = Tensor(np.where(keep, x.values, floor), parents=(x,))

    def back(g):
        if x.requires_grad:
            x._accumulate(g * keep)

    out._backward = back
    return out


def clamp_max(x: Tensor, ceil: float) -> Tensor:
    keep = x.values <= ceil
    _note_kink(keep)
    out = Tensor(np.where(keep, x.values, ceil), parents=(x,))

    def back(g):
        if x.requires_grad:
            x._accumulate(g * keep)

    out._backward = back
    return out


def logaddexp(a: Tensor, b: Tensor) -> Tensor:
    """log(exp(a) + exp(b)), numerically stable for any magnitudes."""
    _same_shape(a, b, "logaddexp")
    out = Tensor(np.logaddexp(a.values, b.values), parents=(a, b))
    t = a.values - b.values
    sig = np.where(t >= 0, 1.0 / (1.0 + np.exp(-np.abs(t))), np.exp(-np.abs(t)) / (1.0 + np.exp(-np.abs(t))))

    def back(g):
        if a.requires_grad:
            a._accumulate(g * sig)
        if b.requires_grad:
            b._accumulate(g * (1.0 - sig))

    out._backward = back
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b over the last axis; x (..., F), w (F, H), b (H,)."""
    if x.values.shape[-1] != w.values.shape[0]:
        raise ShapeError(
            f"linear: input shape {x.values.shape} incompatible with weight shape {w.values.shape}"
        )
    if b.values.shape != (w.values.shape[1],):
        raise ShapeError(f"linear: bias shape {b.values.shape} does not match weight shape {w.values.shape}")
    lead = x.values.shape[:-1]
    f_in, f_out = w.values.shape
    x2 = x.values.reshape(-1, f_in)
    y2 = x2 @ w.values + b.values
    out = Tensor(y2.reshape(*lead, f_out), parents=(x, w, b))

    def back(g):
        g2 = g.reshape(-1, f_out)
        if x.requires_grad:
            x._accumulate((g2 @ w.values.T).reshape(x.values.shape))
        if w.requires_grad:
            w._accumulate(x2.T @ g2)
        if b.requires_grad:
            b._accumulate(g2.sum(axis=0))

    out._backward = back
    return out


def mean_pool(x: Tensor, mask: np.ndarray) -> Tensor:
    """Masked mean over axis -2; x (N, S, H), mask (N, S) of 0/1.

    Fully-masked sets pool to the zero vector. The mask is data, not a
    differentiable input.
    """
    if x.values.ndim != 3 or mask.shape != x.values.shape[:2]:
        raise ShapeError(f"mean_pool: values shape {x.values.shape} vs mask shape {mask.shape}")
    m = np.asarray(mask, dtype=np.float64)
    denom = np.maximum(m.sum(axis=1), 1.0)
    out_vals = (x.values * m[:, :, None]).sum(axis=1) / denom[:, None]
    out = Tensor(out_vals, parents=(x,))

    def back(g):
        if x.requires_grad:
            x._accumulate(g[:, None, :] * m[:, :, None] / denom[:, None, None])

    out._backward = back
    return out


def concat(parts: list[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    lead = parts[0].values.shape[:-1]
    for p in parts[1:]:
        if p.values.shape[:-1] != lead:
            raise ShapeError(
                f"concat: leading shape {p.values.shape} does not match {parts[0].values.shape}"
            )
    widths = [p.values.shape[-1] for p in parts]
    out = Tensor(np.concatenate([p.values for p in parts], axis=-1), parents=tuple(parts))

    def back(g):
        offset = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                p._accumulate(g[..., offset : offset + w])
            offset += w

    out._backward = back
    return out


def gather(x: Tensor, indices) -> Tensor:
    """Pick entries of a vector: out[i] = x[indices[i]]."""
    if x.values.ndim != 1:
        raise ShapeError(f"gather expects a vector, got shape {x.values.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    out = Tensor(x.values[idx], parents=(x,))

    def back(g):
        if x.requires_grad:
            acc = np.zeros_like(x.values)
            np.add.at(acc, idx, g)
            x._accumulate(acc)

    out._backward = back
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.values.reshape(shape), parents=(x,))

    def back(g):
        if x.requires_grad:
            x._accumulate(g.reshape(x.values.shape))

    out._backward = back
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.values.sum(), parents=(x,))

    def back(g):
        if x.requires_grad:
            x._accumulate(np.full_like(x.values, float(g)))

    out._backward = back
    return out


# ---------------------------------------------------------------------------
# parameters and optimizers


@dataclass
class _AdamState:
    m: np.ndarray
    v: np.ndarray


class ParamStore:
    """Named parameter tensors plus their optimizer state."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._adam: dict[str, _AdamState] = {}
        self._adam_step = 0

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise ConfigError(f"parameter '{name}' already exists")
        t = variable(values)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def n_values(self) -> int:
        return sum(t.values.size for t in self._params.values())


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def optimizer_step(store: ParamStore, lr: float, kind: str = "adam") -> None:
    """Apply one update from the accumulated gradients, then zero them."""
    if kind not in ("sgd", "adam"):
        raise ConfigError(f"unknown optimizer kind '{kind}'")
    if kind == "adam":
        store._adam_step += 1
        t = store._adam_step
    for name, p in store.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.values)
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter '{name}'")
        if kind == "sgd":
            p.values -= lr * g
        else:
            state = store._adam.get(name)
            if state is None:
                state = _AdamState(m=np.zeros_like(p.values), v=np.zeros_like(p.values))
                store._adam[name] = state
            state.m = ADAM_BETA1 * state.m + (1 - ADAM_BETA1) * g
            state.v = ADAM_BETA2 * state.v + (1 - ADAM_BETA2) * g * g
            m_hat = state.m / (1 - ADAM_BETA1**t)
            v_hat = state.v / (1 - ADAM_BETA2**t)
            p.values -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    store.zero_grad()


def he_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))


# ---------------------------------------------------------------------------
# finite-difference gradient checking


@dataclass
class GradCheckReport:
    max_rel_err: float
    checked: int
    skipped: int
    flagged: list = field(default_factory=list)  # (param, flat index, analytic, numeric)

    @property
    def ok(self) -> bool:
        return not self.flagged


def _eval_scalar(f) -> tuple[float, list]:
    with record_kinks() as trace:
        t = f()
    val = float(t.values)
    if not np.isfinite(val):
        raise NumericError("loss is non-finite during gradient check")
    return val, trace


def _same_trace(a: list, b: list) -> bool:
    if len(a) != len(b):
        return False
    return all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(
    f,
    store: ParamStore,
    h: float = 1e-5,
    tol: float = 1e-4,
    atol: float = 1e-7,
    max_coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of the scalar graph built by f() against
    central finite differences.

    Coordinates whose +/- h evaluations disagree on any piecewise branch
    (a ReLU/abs/max kink inside the perturbation interval) are skipped.
    A coordinate is flagged when |analytic - numeric| > atol + tol * scale.
    """
    store.zero_grad()
    loss = f()
    if loss.values.ndim != 0:
        raise ShapeError(f"grad_check needs a scalar graph, got shape {loss.values.shape}")
    if not np.isfinite(float(loss.values)):
        raise NumericError("loss is non-finite at the evaluation point")
    backward(loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.values))
        for name, p in store.items()
    }
    store.zero_grad()

    max_rel = 0.0
    checked = 0
    skipped = 0
    flagged = []
    for name, p in store.items():
        flat = p.values.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = np.sort(rng.choice(n, size=max_coords_per_param, replace=False))
        else:
            coords = np.arange(n)
        a_flat = analytic[name].reshape(-1)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus, k_plus = _eval_scalar(f)
            flat[idx] = orig - h
            f_minus, k_minus = _eval_scalar(f)
            flat[idx] = orig
            if not _same_trace(k_plus, k_minus):
                skipped += 1
                continue
            numeric = (f_plus - f_minus) / (2 * h)
            a = float(a_flat[idx])
            diff = abs(a - numeric)
            checked += 1
            if diff > atol:
                rel = diff / max(abs(a), abs(numeric))
                max_rel = max(max_rel, rel)
                if rel > tol:
                    flagged.append((name, int(idx), a, numeric))
    return GradCheckReport(max_rel_err=max_rel, checked=checked, skipped=skipped, flagged=flagged)
