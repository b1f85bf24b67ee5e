import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import central_difference
from stockode.errors import DeterminismError, ShapeError, StockODEError
from stockode.numerics import (
    AdamState,
    Parameter,
    Rng,
    Tensor,
    adam_step,
    as_tensor,
    backward,
    concat,
    exp,
    gradcheck,
    gradcheck_report,
    layer_norm,
    leaky_relu,
    log,
    matmul,
    no_grad,
    relu,
    sigmoid,
    softmax,
    softplus,
    sqrt,
    stack,
    swapaxes,
    tanh,
)


def grad_of(fn, x: np.ndarray) -> np.ndarray:
    p = Parameter("x", x)
    backward(fn(p))
    return p.grad


# -- matmul -------------------------------------------------------------------
def test_matmul_identity():
    out = matmul(as_tensor([[1.0, 0.0], [0.0, 1.0]]), as_tensor([[3.0], [4.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [4.0]])


def test_matmul_hand_product():
    out = matmul(as_tensor([[1.0, 2.0], [3.0, 4.0]]), as_tensor([[5.0], [6.0]]))
    np.testing.assert_array_equal(out.data, [[17.0], [39.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        matmul(as_tensor(np.ones((2, 3))), as_tensor(np.ones((4, 5))))


@given(arrays(np.float64, (3, 4), elements=st.integers(-50, 50).map(float)))
def test_matmul_identity_is_bitwise_neutral(a):
    np.testing.assert_array_equal((as_tensor(np.eye(3)) @ a).data, a)
    np.testing.assert_array_equal((as_tensor(a) @ np.eye(4)).data, a)


def test_matmul_gradients_both_operands():
    rng = np.random.default_rng(0)
    a0, b0 = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    c = rng.normal(size=(3, 2))
    a, b = Parameter("a", a0), Parameter("b", b0)
    backward(((a @ b) * c).sum())
    np.testing.assert_allclose(a.grad, c @ b0.T, rtol=1e-12)
    np.testing.assert_allclose(b.grad, a0.T @ c, rtol=1e-12)


# -- backward -----------------------------------------------------------------
def test_backward_linear():
    np.testing.assert_array_equal(grad_of(lambda p: p.sum(), np.zeros(3)), [1.0, 1.0, 1.0])


def test_backward_quadratic():
    np.testing.assert_array_equal(grad_of(lambda p: (p * p).sum(), np.array([1.0, 2.0, 3.0])), [2.0, 4.0, 6.0])


def test_backward_rejects_non_scalar():
    with pytest.raises(StockODEError, match="scalar"):
        backward(Parameter("p", np.ones(3)) * 2.0)


def test_backward_accumulates_without_reset():
    p = Parameter("p", np.array([1.0, 2.0]))
    backward((p * p).sum())
    backward((p * p).sum())
    np.testing.assert_array_equal(p.grad, [4.0, 8.0])


def test_mlp_gradients_match_central_differences():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(5, 4))
    y = rng.normal(size=(5, 1))
    W1, W2 = rng.normal(size=(4, 6)), rng.normal(size=(6, 1))

    def forward_np(w1, w2):
        return float(np.sum((np.tanh(x @ w1) @ w2 - y) ** 2))

    p1, p2 = Parameter("W1", W1), Parameter("W2", W2)
    backward(((tanh(as_tensor(x) @ p1) @ p2 - y) ** 2).sum())
    fd1 = central_difference(lambda w: forward_np(w, W2), W1)
    fd2 = central_difference(lambda w: forward_np(W1, w), W2)
    for an, fd in ((p1.grad, fd1), (p2.grad, fd2)):
        rel = np.abs(an - fd) / np.maximum(np.maximum(np.abs(an), np.abs(fd)), 1e-12)
        assert rel.max() < 1e-5


# Elementwise operations against the test-side central-difference oracle.
UNARY = {
    "exp": (exp, np.exp, lambda x: x),
    "log": (log, np.log, lambda x: np.abs(x) + 0.5),
    "sqrt": (sqrt, np.sqrt, lambda x: np.abs(x) + 0.5),
    "tanh": (tanh, np.tanh, lambda x: x),
    "sigmoid": (sigmoid, lambda v: 1.0 / (1.0 + np.exp(-v)), lambda x: x),
    "softplus": (softplus, lambda v: np.log1p(np.exp(v)), lambda x: x),
    "relu": (relu, lambda v: np.maximum(v, 0.0), lambda x: np.where(np.abs(x) < 1e-3, 0.5, x)),
    "leaky_relu": (leaky_relu, lambda v: np.where(v > 0, v, 0.01 * v), lambda x: np.where(np.abs(x) < 1e-3, 0.5, x)),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@given(arrays(np.float64, (2, 3), elements=st.floats(-3, 3)))
def test_unary_op_gradients(name, x):
    op, ref, domain = UNARY[name]
    x = domain(x)
    weights = np.arange(1.0, 7.0).reshape(2, 3)
    an = grad_of(lambda p: (op(p) * weights).sum(), x)
    fd = central_difference(lambda v: float(np.sum(ref(v) * weights)), x)
    np.testing.assert_allclose(an, fd, rtol=1e-5, atol=1e-7)
    np.testing.assert_allclose(op(as_tensor(x)).data, ref(x), rtol=1e-12, atol=1e-300)


@given(arrays(np.float64, (3, 4), elements=st.floats(-4, 4)))
def test_softmax_value_and_gradient(x):
    def ref(v):
        e = np.exp(v - v.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    weights = np.linspace(-1, 1, 12).reshape(3, 4)
    out = softmax(as_tensor(x), axis=-1).data
    np.testing.assert_allclose(out, ref(x), rtol=1e-12)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)
    an = grad_of(lambda p: (softmax(p, axis=-1) * weights).sum(), x)
    fd = central_difference(lambda v: float(np.sum(ref(v) * weights)), x)
    np.testing.assert_allclose(an, fd, rtol=1e-5, atol=1e-8)


def test_layer_norm_value_and_gradients():
    rng = np.random.default_rng(3)
    x, gamma, beta = rng.normal(size=(3, 5)), rng.normal(size=5), rng.normal(size=5)
    weights = rng.normal(size=(3, 5))

    def ref(v, g, b):
        mu = v.mean(axis=-1, keepdims=True)
        var = v.var(axis=-1, keepdims=True)
        return (v - mu) / np.sqrt(var + 1e-5) * g + b

    np.testing.assert_allclose(layer_norm(as_tensor(x), as_tensor(gamma), as_tensor(beta)).data,
                               ref(x, gamma, beta), rtol=1e-12)
    px, pg, pb = Parameter("x", x), Parameter("g", gamma), Parameter("b", beta)
    backward((layer_norm(px, pg, pb) * weights).sum())
    for p, fd in ((px, central_difference(lambda v: float(np.sum(ref(v, gamma, beta) * weights)), x)),
                  (pg, central_difference(lambda v: float(np.sum(ref(x, v, beta) * weights)), gamma)),
                  (pb, central_difference(lambda v: float(np.sum(ref(x, gamma, v) * weights)), beta))):
        np.testing.assert_allclose(p.grad, fd, rtol=1e-5, atol=1e-8)


def test_structural_ops_gradients():
    rng = np.random.default_rng(4)
    a0, b0 = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    w = rng.normal(size=(3, 2, 2))

    def ref(a, b):
        s = np.swapaxes(np.stack([a, b], axis=0), 0, 2)  # (3, 2, 2)
        c = np.concatenate([a, b], axis=-1)
        return float(np.sum(s * w) + np.sum(c[:, 1:4] ** 2) - np.sum(a / (1.5 + b * b)))

    pa, pb = Parameter("a", a0), Parameter("b", b0)
    s = swapaxes(stack([pa, pb], axis=0), 0, 2)
    c = concat([pa, pb], axis=-1)
    backward((s * w).sum() + (c[:, 1:4] ** 2).sum() - (pa / (1.5 + pb * pb)).sum())
    np.testing.assert_allclose(pa.grad, central_difference(lambda v: ref(v, b0), a0), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(pb.grad, central_difference(lambda v: ref(a0, v), b0), rtol=1e-6, atol=1e-8)


def test_fancy_index_gradient_accumulates_repeats():
    p = Parameter("p", np.array([1.0, 2.0, 3.0]))
    backward(p[np.array([0, 0, 2])].sum())
    np.testing.assert_array_equal(p.grad, [2.0, 0.0, 1.0])


@given(arrays(np.float64, (4,), elements=st.floats(-2, 2)), arrays(np.float64, (4,), elements=st.floats(-2, 2)))
def test_gradient_accumulation_is_linear(x, c):
    p = Parameter("p", x)
    backward((tanh(p) * c).sum())
    backward((p * p).sum())
    separate = p.grad.copy()
    q = Parameter("q", x)
    backward((tanh(q) * c).sum() + (q * q).sum())
    np.testing.assert_allclose(separate, q.grad, atol=1e-12)


def test_no_grad_records_nothing():
    p = Parameter("p", np.ones(2))
    with no_grad():
        out = (p * 3.0).sum()
    assert not out.requires_grad
    backward(out)
    np.testing.assert_array_equal(p.grad, 0.0)


# -- gradcheck ----------------------------------------------------------------
def test_gradcheck_linear_regression():
    rng = np.random.default_rng(5)
    X, y = rng.normal(size=(20, 3)), rng.normal(size=20)
    w, b = Parameter("w", rng.normal(size=(3, 1))), Parameter("b", np.zeros(1))

    def model_fn():
        r = (as_tensor(X) @ w + b).reshape(20) - y
        return (r * r).mean()

    assert gradcheck(model_fn, [w, b]) < 1e-8


def test_gradcheck_detects_wrong_gradient():
    p = Parameter("p", np.array([0.3, -0.7]))

    def model_fn():
        wrong = Tensor.__new__(Tensor)
        out = (p * p).sum()
        # a node whose recorded derivative is off by a factor of two
        from stockode.numerics.tensor import _node
        wrong = _node(out.data, (out,), lambda g: (2.0 * g,))
        return wrong

    rep = gradcheck_report(model_fn, [p])
    assert rep.max_error > 0.3
    assert rep.worst_param == "p"


def test_gradcheck_restores_parameters_and_gradients():
    p = Parameter("p", np.array([0.5, 1.5]))
    p.grad[...] = [7.0, 8.0]
    before = p.data.copy()
    gradcheck(lambda: (tanh(p) * p).sum(), [p], precision="extended")
    np.testing.assert_array_equal(p.data, before)
    assert p.data.dtype == np.float64
    np.testing.assert_array_equal(p.grad, [7.0, 8.0])


def test_gradcheck_rejects_nondeterministic_function():
    p = Parameter("p", np.ones(3))
    gen = np.random.default_rng()
    with pytest.raises(DeterminismError):
        gradcheck(lambda: (p * gen.normal(size=3)).sum(), [p])


def test_extended_precision_resolves_tiny_derivatives():
    # d/dp of L = 1 + 1e-7 * p^2 at p = 1 is 2e-7: below the float64 difference quotient floor
    p = Parameter("p", np.array([1.0]))

    def model_fn():
        return 1.0 + 1e-7 * (p * p).sum()

    assert gradcheck(model_fn, [p], precision="double") > 1e-5
    assert gradcheck(model_fn, [p], precision="extended") < 1e-5


# -- Adam ---------------------------------------------------------------------
def test_adam_zero_gradient_is_fixed_point():
    p = Parameter("p", np.array([1.0, -2.0]))
    adam_step(AdamState(), [p])
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_moves_by_learning_rate():
    p = Parameter("p", np.array([0.0]))
    p.grad[...] = 1.0
    state = AdamState()
    adam_step(state, [p])
    # m_hat = 1, v_hat = 1: step = lr / (1 + eps)
    np.testing.assert_allclose(p.data, [-0.001 / (1.0 + 1e-8)], rtol=1e-12)
    np.testing.assert_array_equal(p.grad, 0.0)
    assert state.step == 1


def _scalar_adam(x, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = 2.0 * x
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return x


def test_adam_matches_scalar_transcription():
    p = Parameter("x", np.array([1.0]))
    state = AdamState()
    for _ in range(1000):
        backward((p * p).sum())
        adam_step(state, [p])
    np.testing.assert_allclose(p.data[0], _scalar_adam(1.0, 0.001, 1000), rtol=1e-12)


def test_adam_minimizes_quadratic():
    # each Adam step moves at most about lr, so 1000 steps need lr = 0.01 to travel from 1 to 0
    p = Parameter("x", np.array([1.0]))
    state = AdamState(lr=0.01)
    for _ in range(1000):
        backward((p * p).sum())
        adam_step(state, [p])
    assert abs(p.data[0]) < 0.1


def test_adam_step_counter_strictly_increases():
    p = Parameter("p", np.ones(2))
    state = AdamState()
    steps = []
    for _ in range(3):
        adam_step(state, [p])
        steps.append(state.step)
    assert steps == [1, 2, 3]


# -- Rng ----------------------------------------------------------------------
@given(st.integers(0, 2**63 - 1))
def test_rng_reproducible(seed):
    a, b = Rng(seed), Rng(seed)
    np.testing.assert_array_equal(a.normal((3, 2)), b.normal((3, 2)))
    np.testing.assert_array_equal(a.spawn("x").uniform(0, 1, 4), b.spawn("x").uniform(0, 1, 4))


def test_rng_spawned_streams_are_independent_of_sibling_draws():
    a, b = Rng(11), Rng(11)
    a.spawn("noise").normal(100)
    np.testing.assert_array_equal(a.spawn("other").normal(5), b.spawn("other").normal(5))


def test_rng_state_round_trip():
    r = Rng(3).spawn("s")
    r.normal(7)
    clone = Rng.from_state(r.get_state())
    np.testing.assert_array_equal(r.normal(4), clone.normal(4))
