import numpy as np
import pytest

from cordonlab import nn
from cordonlab.errors import NumericError, ShapeError


def test_relu_gradient_is_piecewise():
    x = nn.variable(np.array([2.0, -3.0, 0.5]))
    loss = nn.sum_all(nn.relu(x))
    nn.backward(loss)
    assert np.array_equal(x.grad, [1.0, 0.0, 1.0])


def test_mean_pool_single_element_is_identity():
    x = nn.variable(np.arange(6, dtype=float).reshape(1, 1, 6))
    out = nn.mean_pool(x, np.ones((1, 1)))
    assert np.array_equal(out.values, x.values[:, 0, :])
    nn.backward(nn.sum_all(out))
    assert np.array_equal(x.grad, np.ones((1, 1, 6)))


def test_mean_pool_empty_set_pools_to_zero():
    x = nn.variable(np.ones((2, 3, 4)))
    mask = np.zeros((2, 3))
    out = nn.mean_pool(x, mask)
    assert np.array_equal(out.values, np.zeros((2, 4)))
    nn.backward(nn.sum_all(out))
    assert np.array_equal(x.grad, np.zeros((2, 3, 4)))


def test_quadratic_derivative():
    w = nn.variable(np.array(3.0))
    loss = nn.mul(w, w)
    nn.backward(loss)
    assert abs(float(w.grad) - 6.0) < 1e-8


def test_pure_linear_model_matches_machine_precision():
    rng = np.random.default_rng(0)
    store = nn.ParamStore()
    w = store.add("w", rng.normal(size=(4, 3)))
    b = store.add("b", rng.normal(size=3))
    x = nn.constant(rng.normal(size=(5, 4)))

    def f():
        return nn.sum_all(nn.linear(x, w, b))

    report = nn.grad_check(f, store, h=1e-6, tol=1e-7)
    assert report.ok
    assert report.skipped == 0


def test_two_layer_net_matches_finite_differences():
    rng = np.random.default_rng(1)
    store = nn.ParamStore()
    w1 = store.add("w1", nn.he_init(rng, 6, 8))
    b1 = store.add("b1", rng.normal(size=8) * 0.1)
    w2 = store.add("w2", nn.he_init(rng, 8, 1))
    b2 = store.add("b2", np.zeros(1))
    x = nn.constant(rng.normal(size=(7, 6)))

    def f():
        h = nn.relu(nn.linear(x, w1, b1))
        return nn.sum_all(nn.linear(h, w2, b2))

    report = nn.grad_check(f, store, h=1e-5, tol=1e-4)
    assert report.ok, report.flagged[:3]
    assert report.checked > 50


def test_grad_check_skips_kink_straddling_coordinates():
    store = nn.ParamStore()
    w = store.add("w", np.array([1e-7, 1.0]))

    def f():
        return nn.sum_all(nn.relu(w))

    report = nn.grad_check(f, store, h=1e-5)
    assert report.skipped == 1
    assert report.checked == 1


def test_logaddexp_values_and_gradients():
    a = nn.variable(np.array([0.0, 500.0, -500.0]))
    b = nn.variable(np.array([0.0, -500.0, 500.0]))
    out = nn.logaddexp(a, b)
    assert np.allclose(out.values, np.logaddexp(a.values, b.values))
    nn.backward(nn.sum_all(out))
    assert np.allclose(a.grad + b.grad, 1.0)
    assert a.grad[1] == pytest.approx(1.0)
    assert a.grad[2] == pytest.approx(0.0)


def test_gather_accumulates_duplicates():
    x = nn.variable(np.array([1.0, 2.0, 3.0]))
    out = nn.gather(x, [0, 0, 2])
    nn.backward(nn.sum_all(out))
    assert np.array_equal(x.grad, [2.0, 0.0, 1.0])


def test_sgd_step_arithmetic():
    store = nn.ParamStore()
    w = store.add("w", np.array(1.0))
    loss = nn.mul(w, w)
    nn.backward(loss)
    nn.optimizer_step(store, lr=0.1, kind="sgd")
    assert float(w.values) == pytest.approx(0.8)
    assert w.grad is None


def test_zero_gradient_is_a_fixed_point():
    store = nn.ParamStore()
    w = store.add("w", np.array([1.0, 2.0]))
    before = w.values.copy()
    nn.optimizer_step(store, lr=0.5, kind="sgd")
    assert np.array_equal(w.values, before)


def test_sgd_monotone_on_convex_quadratic():
    store = nn.ParamStore()
    w = store.add("w", np.array([5.0, -3.0]))
    losses = []
    for _ in range(100):
        loss = nn.sum_all(nn.mul(w, w))
        losses.append(float(loss.values))
        nn.backward(loss)
        nn.optimizer_step(store, lr=0.05, kind="sgd")
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_adam_first_step_is_bias_corrected():
    store = nn.ParamStore()
    w = store.add("w", np.array(2.0))
    loss = nn.mul(w, w)  # gradient 4
    nn.backward(loss)
    nn.optimizer_step(store, lr=0.01, kind="adam")
    g = 4.0
    m_hat = g  # m / (1 - beta1)
    v_hat = g * g
    expected = 2.0 - 0.01 * m_hat / (np.sqrt(v_hat) + nn.ADAM_EPS)
    assert float(w.values) == pytest.approx(expected, rel=1e-12)


def test_nonfinite_gradient_names_the_parameter():
    store = nn.ParamStore()
    w = store.add("bad_param", np.array([1.0]))
    w.grad = np.array([np.inf])
    with pytest.raises(NumericError, match="bad_param"):
        nn.optimizer_step(store, lr=0.1)


def test_shape_errors_name_both_shapes():
    a = nn.variable(np.zeros((2, 3)))
    b = nn.variable(np.zeros((3, 2)))
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(3, 2\)"):
        nn.add(a, b)
    with pytest.raises(ShapeError, match="linear"):
        nn.linear(a, nn.variable(np.zeros((4, 5))), nn.variable(np.zeros(5)))


def test_training_determinism_bitwise():
    def run():
        rng = np.random.default_rng(7)
        store = nn.ParamStore()
        w = store.add("w", nn.he_init(rng, 5, 4))
        b = store.add("b", np.zeros(4))
        x = nn.constant(rng.normal(size=(6, 5)))
        for _ in range(25):
            loss = nn.sum_all(nn.relu(nn.linear(x, w, b)))
            nn.backward(loss)
            nn.optimizer_step(store, lr=1e-3, kind="adam")
        return w.values.copy(), b.values.copy()

    w1, b1 = run()
    w2, b2 = run()
    assert w1.tobytes() == w2.tobytes()
    assert b1.tobytes() == b2.tobytes()


def test_maximum_and_clamp_route_gradients():
    a = nn.variable(np.array([3.0, 1.0]))
    b = nn.variable(np.array([2.0, 2.0]))
    nn.backward(nn.sum_all(nn.maximum(a, b)))
    assert np.array_equal(a.grad, [1.0, 0.0])
    assert np.array_equal(b.grad, [0.0, 1.0])

    x = nn.variable(np.array([-1.0, 4.0]))
    nn.backward(nn.sum_all(nn.clamp_min(x, 0.0)))
    assert np.array_equal(x.grad, [0.0, 1.0])
