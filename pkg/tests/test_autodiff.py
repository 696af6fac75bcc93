import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lapda.autodiff import OP_KINDS, Parameter, ShapeError, SingularSystem, Tape

from conftest import numerical_gradient, rel_error


def test_record_add():
    t = Tape()
    a = t.constant([[1.0, 2.0], [3.0, 4.0]])
    b = t.constant([[10.0, 20.0], [30.0, 40.0]])
    out = t.record("add", [a, b])
    np.testing.assert_array_equal(t.value(out), [[11, 22], [33, 44]])


def test_record_matmul_inner_dim_mismatch():
    t = Tape()
    a = t.constant(np.ones((2, 3)))
    b = t.constant(np.ones((4, 2)))
    with pytest.raises(ShapeError, match="inner dims 3≠4"):
        t.record("matmul", [a, b])


def test_record_exp_zero():
    t = Tape()
    assert t.value(t.record("exp", [t.constant([[0.0]])]))[0, 0] == 1.0


def test_record_unknown_input():
    t = Tape()
    with pytest.raises(KeyError):
        t.record("exp", [3])


def test_binary_shape_error_names_op():
    t = Tape()
    with pytest.raises(ShapeError, match="sub"):
        t.sub(t.constant(np.ones((2, 2))), t.constant(np.ones((3, 2))))


# --- linear solve ------------------------------------------------------------

def test_solve_identity(rng):
    t = Tape()
    B = rng.normal(size=(3, 4))
    X = t.solve(t.constant(np.eye(3)), t.constant(B))
    np.testing.assert_allclose(t.value(X), B, atol=1e-15)


def test_solve_scalar_and_gradient():
    t = Tape()
    A = Parameter("A", [[2.0]])
    B = Parameter("B", [[6.0]])
    X = t.solve(t.param(A), t.param(B))
    assert t.value(X)[0, 0] == pytest.approx(3.0)
    t.backward(t.sum(X))
    # d(b/a)/da = -b/a^2
    assert A.grad[0, 0] == pytest.approx(-1.5)
    assert B.grad[0, 0] == pytest.approx(0.5)


def test_solve_gradient_fd_8x8(rng):
    A = Parameter("A", rng.normal(size=(8, 8)) + 8 * np.eye(8))
    B = Parameter("B", rng.normal(size=(8, 3)))

    def loss_value():
        t = Tape()
        return float(t.value(t.sum(t.solve(t.constant(A.value), t.constant(B.value)))))

    t = Tape()
    t.backward(t.sum(t.solve(t.param(A), t.param(B))))
    assert rel_error(A.grad, numerical_gradient(loss_value, A.value)) < 1e-6
    assert rel_error(B.grad, numerical_gradient(loss_value, B.value)) < 1e-6


def test_solve_singular_raises_with_batch_index():
    t = Tape()
    A = t.constant([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(SingularSystem) as info:
        t.solve(A, t.constant(np.ones((2, 1))), batch_index=17)
    assert info.value.batch_index == 17


def test_solve_ill_conditioned_raises():
    t = Tape()
    A = t.constant([[1.0, 0.0], [0.0, 1e-14]])
    with pytest.raises(SingularSystem, match="condition"):
        t.solve(A, t.constant(np.ones((2, 1))))


def test_solve_shape_errors():
    t = Tape()
    with pytest.raises(ShapeError):
        t.solve(t.constant(np.ones((2, 3))), t.constant(np.ones((2, 1))))
    with pytest.raises(ShapeError):
        t.solve(t.constant(np.eye(2)), t.constant(np.ones((3, 1))))


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 12), m=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_solve_round_trip(n, m, seed):
    r = np.random.default_rng(seed)
    U, _ = np.linalg.qr(r.normal(size=(n, n)))
    V, _ = np.linalg.qr(r.normal(size=(n, n)))
    s = np.logspace(0, r.uniform(0, 6), n)  # condition number below 1e6
    A = U @ np.diag(s) @ V.T
    B = r.normal(size=(n, m))
    t = Tape()
    X = t.value(t.solve(t.constant(A), t.constant(B)))
    assert np.max(np.abs(A @ X - B)) < 1e-9


# --- backward ----------------------------------------------------------------

def test_backward_square():
    x = Parameter("x", [[3.0]])
    t = Tape()
    xi = t.param(x)
    grads = t.backward(t.sum(t.mul(xi, xi)))
    assert grads["x"][0, 0] == pytest.approx(6.0)


def test_backward_needs_scalar():
    t = Tape()
    with pytest.raises(ShapeError):
        t.backward(t.constant(np.ones((2, 2))))


def test_backward_accumulates_across_uses():
    x = Parameter("x", [[2.0]])
    t = Tape()
    xi = t.param(x)
    t.backward(t.sum(t.add(t.mul(xi, xi), t.scale(xi, 3.0))))
    assert x.grad[0, 0] == pytest.approx(7.0)


def _composite_loss(t, F_s, F_t, log_s, Y):
    from lapda import graph
    return graph.cycle(t, F_s, F_t, t.exp(log_s), Y).loss


def test_composite_graph_fd(rng):
    Fs = Parameter("Fs", rng.normal(size=(4, 3)))
    Ft = Parameter("Ft", rng.normal(size=(5, 3)))
    ls = Parameter("ls", rng.normal(scale=0.2, size=3))
    Y = np.eye(2)[[0, 1, 0, 1]]

    def value():
        t = Tape()
        return float(t.value(_composite_loss(t, t.constant(Fs.value), t.constant(Ft.value),
                                              t.constant(ls.value), t.constant(Y))))

    t = Tape()
    t.backward(_composite_loss(t, t.param(Fs), t.param(Ft), t.param(ls), t.constant(Y)))
    for p in (Fs, Ft, ls):
        assert rel_error(p.grad, numerical_gradient(value, p.value)) < 1e-4, p.id


# --- row gradient scale --------------------------------------------------------

def _scaled_run(W: Parameter, X: np.ndarray, rho=None):
    W.zero_grad()
    t = Tape()
    f = t.matmul(t.constant(X), t.param(W))
    if rho is not None:
        t.set_row_gradient_scale(f, rho)
    t.backward(t.sum(t.mul(t.exp(f), f)))
    return W.grad.copy(), t.value(f).copy()


def test_scale_all_ones_is_identity(rng):
    W = Parameter("W", rng.normal(size=(3, 2)))
    X = rng.normal(size=(4, 3))
    g0, f0 = _scaled_run(W, X)
    g1, f1 = _scaled_run(W, X, np.ones(4))
    assert np.array_equal(g0, g1)
    assert np.array_equal(f0, f1)


def test_scale_all_zeros_blocks_gradient(rng):
    W = Parameter("W", rng.normal(size=(3, 2)))
    g, _ = _scaled_run(W, rng.normal(size=(4, 3)), np.zeros(4))
    assert np.all(g == 0)


def test_scale_zero_on_sum():
    W = Parameter("W", np.ones((2, 2)))
    t = Tape()
    f = t.matmul(t.constant(np.ones((3, 2))), t.param(W))
    t.set_row_gradient_scale(f, np.zeros(3))
    t.backward(t.sum(f))
    assert np.all(W.grad == 0)


def test_scale_masks_rows_like_masked_loss(rng):
    W = Parameter("W", rng.normal(size=(3, 2)))
    X = rng.normal(size=(2, 3))
    g_hook, _ = _scaled_run(W, X, np.array([1.0, 0.0]))
    # oracle: the same loss restricted to row 0
    g_masked, _ = _scaled_run(W, X[:1])
    np.testing.assert_allclose(g_hook, g_masked, rtol=1e-12, atol=1e-14)


def test_scale_length_mismatch():
    t = Tape()
    f = t.constant(np.ones((3, 2)))
    with pytest.raises(ShapeError):
        t.set_row_gradient_scale(f, np.ones(2))
    with pytest.raises(ValueError):
        t.set_row_gradient_scale(f, [0.5, 2.0, 0.1])


def test_scale_leaves_forward_value():
    t = Tape()
    f = t.exp(t.constant(np.zeros((2, 2))))
    before = t.value(f).copy()
    t.set_row_gradient_scale(f, [0.3, 0.7])
    assert np.array_equal(before, t.value(f))


# --- per-op gradient check --------------------------------------------------------

def _op_case(kind: str, r: np.random.Generator):
    """Inputs (in the op's domain) and attrs for one random trial."""
    n, m, k = r.integers(2, 5, size=3)
    N = lambda *s: r.normal(size=s)
    away = lambda *s: r.choice([-1, 1], size=s) * r.uniform(0.2, 2.0, size=s)
    pos = lambda *s: r.uniform(0.5, 2.0, size=s)
    cases = {
        "add": ([N(n, m), N(n, m)], {}),
        "sub": ([N(n, m), N(m)], {}),
        "mul": ([N(n, m), N(n, m)], {}),
        "scalar-mul": ([N(n, m)], {"scalar": float(r.normal())}),
        "matmul": ([N(n, m), N(m, k)], {}),
        "exp": ([N(n, m)], {}),
        "log": ([pos(n, m)], {}),
        "negate": ([N(n, m)], {}),
        "row-sum": ([N(n, m)], {}),
        "sum": ([N(n, m)], {}),
        "row-normalize": ([pos(n, m)], {}),
        "softmax": ([N(n, m)], {}),
        "pairwise-scaled-sqdist": ([N(n, m), N(k, m), pos(m)], {}),
        "linear-solve": ([N(n, n) + 2 * n * np.eye(n), N(n, k)], {}),
        "l1-norm": ([away(n, m)], {}),
        "cross-entropy": ([N(n, m), np.eye(m)[r.integers(0, m, n)]], {}),
        "sigmoid": ([N(n, m)], {}),
        "log-sigmoid": ([3 * N(n, m)], {}),
        "relu": ([away(n, m)], {}),
        "clip": ([r.uniform(-0.9, 0.9, (n, m)) + r.choice([-2.0, 0.0, 2.0], (n, m))], {"lo": -1.0, "hi": 1.0}),
        "entropy-per-row": ([r.uniform(0.05, 1.0, (n, m))], {}),
        "concat-rows": ([N(n, m), N(k, m)], {}),
        "slice-rows": ([N(n + 2, m)], {"start": 1, "stop": n + 1}),
        "transpose": ([N(n, m)], {}),
        "reshape": ([N(n, m)], {"shape": (m, n)}),
        "conv2d": ([N(2, 2, 6, 6), N(3, 2, 3, 3)], {}),
        "add-channel-bias": ([N(2, 3, 2, 2), N(3)], {}),
        "maxpool2": ([N(2, 2, 4, 4)], {}),
        "batchnorm": ([N(6, m)], {}),
    }
    return cases[kind]


@pytest.mark.parametrize("kind", OP_KINDS)
def test_op_gradient_matches_fd(kind):
    r = np.random.default_rng(zlib.crc32(kind.encode()))
    worst = 0.0
    for _ in range(100):
        inputs, attrs = _op_case(kind, r)
        R = None

        def value():
            t = Tape()
            out = t.record(kind, [t.constant(x) for x in inputs], **attrs)
            return float(np.sum(R * t.value(out)))

        params = [Parameter(f"x{i}", x) for i, x in enumerate(inputs)]
        t = Tape()
        out = t.record(kind, [t.param(p) for p in params], **attrs)
        R = r.normal(size=t.value(out).shape)
        t.backward(t.sum(t.mul(out, t.constant(R))) if t.value(out).ndim else t.scale(out, float(R)))
        for p, x in zip(params, inputs):
            worst = max(worst, rel_error(p.grad, numerical_gradient(value, x)))
    assert worst < 1e-6, f"{kind}: worst relative error {worst:.2e}"


def test_every_required_op_kind_is_registered():
    required = {"add", "sub", "mul", "scalar-mul", "matmul", "exp", "log", "negate", "row-sum",
                "row-normalize", "softmax", "pairwise-scaled-sqdist", "linear-solve", "l1-norm",
                "cross-entropy", "sigmoid", "relu", "entropy-per-row", "concat-rows", "slice-rows"}
    assert required <= set(OP_KINDS)


# --- properties ------------------------------------------------------------------

positive_rows = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                       elements=st.floats(1e-3, 1e3))
finite_rows = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                     elements=st.floats(-50, 50))


@given(positive_rows)
def test_row_normalize_rows_sum_to_one(x):
    t = Tape()
    y = t.value(t.row_normalize(t.constant(x)))
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)


@given(finite_rows, st.floats(-100, 100))
def test_softmax_rows_and_shift(x, c):
    t = Tape()
    y = t.value(t.softmax(t.constant(x)))
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)
    y2 = t.value(t.softmax(t.constant(x + c)))
    np.testing.assert_allclose(y, y2, atol=1e-12)


@given(finite_rows)
def test_forward_ops_stay_finite(x):
    t = Tape()
    a = t.constant(x)
    for node in (t.softmax(a), t.sigmoid(a), t.log_sigmoid(a), t.exp(t.clip(a, -30, 30))):
        assert np.all(np.isfinite(t.value(node)))


def test_backward_is_bitwise_deterministic(rng):
    Fs0 = rng.normal(size=(6, 4))
    Ft0 = rng.normal(size=(7, 4))
    Y = np.eye(3)[rng.integers(0, 3, 6)]
    runs = []
    for _ in range(2):
        Fs, Ft, ls = Parameter("Fs", Fs0), Parameter("Ft", Ft0), Parameter("ls", np.zeros(4))
        t = Tape()
        t.backward(_composite_loss(t, t.param(Fs), t.param(Ft), t.param(ls), t.constant(Y)))
        runs.append((Fs.grad, Ft.grad, ls.grad))
    for a, b in zip(*runs):
        assert np.array_equal(a, b)


def test_backward_visits_each_node_once():
    calls = []
    from lapda import autodiff

    orig = autodiff.BACKWARD["exp"]

    def spy(node, g, v):
        calls.append(id(node))
        return orig(node, g, v)

    autodiff.BACKWARD["exp"] = spy
    try:
        x = Parameter("x", [[0.5]])
        t = Tape()
        e = t.exp(t.param(x))
        t.backward(t.sum(t.add(t.mul(e, e), e)))
    finally:
        autodiff.BACKWARD["exp"] = orig
    assert len(calls) == 1
    assert x.grad[0, 0] == pytest.approx(2 * np.exp(1.0) + np.exp(0.5))
