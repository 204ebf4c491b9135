"""Autodiff unit tests: op values, gradient checks, determinism."""

import numpy as np
import pytest

from dualenc import tensor as T
from dualenc.errors import ContractError, DtypeError, ShapeError


def t64(arr, grad=True):
    return T.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


def rand64(rng, shape, grad=True):
    return T.Tensor(rng.standard_normal(shape), requires_grad=grad)


# ---------------------------------------------------------------------------
# forward values
# ---------------------------------------------------------------------------

def test_softmax_symmetry():
    out = T.forward_op("softmax", T.Tensor(np.zeros(2, dtype=np.float32)))
    assert np.allclose(out.data, [0.5, 0.5])


def test_abs_squared_unit_complex():
    out = T.forward_op("abs_squared", T.Tensor(np.array([1.0, 1.0], dtype=np.float32)))
    assert out.data == pytest.approx(2.0)
    # complex-dtype constant, forward-only
    z = T.Tensor(np.array(1 + 1j, dtype=np.complex64))
    assert T.forward_op("abs_squared", z).data == pytest.approx(2.0)


def test_matmul_ones():
    a = T.Tensor(np.ones((2, 3), dtype=np.float32))
    b = T.Tensor(np.ones((3, 1), dtype=np.float32))
    assert np.array_equal((a @ b).data, [[3.0], [3.0]])


def test_complex_mul_value():
    a = T.Tensor(np.array([1.0, 2.0], dtype=np.float32))   # 1+2i
    b = T.Tensor(np.array([3.0, -1.0], dtype=np.float32))  # 3-i
    out = T.forward_op("complex_mul", a, b)
    assert np.allclose(out.data, [5.0, 5.0])  # (1+2i)(3-i) = 5+5i


def test_shape_errors_carry_both_shapes():
    a = T.Tensor(np.zeros((2, 3), dtype=np.float32))
    b = T.Tensor(np.zeros((3, 2), dtype=np.float32))
    with pytest.raises(ShapeError) as exc:
        T.forward_op("add", a, b)
    assert "(2, 3)" in str(exc.value) and "(3, 2)" in str(exc.value)


def test_dtype_mismatch_rejected():
    a = T.Tensor(np.zeros(3, dtype=np.float32))
    b = T.Tensor(np.zeros(3, dtype=np.float64))
    with pytest.raises(DtypeError):
        T.forward_op("mul", a, b)


def test_unknown_kind_rejected():
    with pytest.raises(DtypeError):
        T.forward_op("fused_frobnicate", T.Tensor(np.zeros(1, dtype=np.float32)))


# ---------------------------------------------------------------------------
# backward basics
# ---------------------------------------------------------------------------

def test_square_sum_gradient():
    w = t64([1.0, 2.0])
    T.backward((w * w).sum())
    assert np.allclose(w.grad, [2.0, 4.0])


def test_gradients_accumulate_until_zeroed():
    w = t64([1.0, 2.0])
    T.backward((w * w).sum())
    T.backward((w * w).sum())
    assert np.allclose(w.grad, [4.0, 8.0])
    w.zero_grad()
    T.backward((w * w).sum())
    assert np.allclose(w.grad, [2.0, 4.0])


def test_nonscalar_loss_rejected():
    w = t64([1.0, 2.0])
    with pytest.raises(ContractError):
        T.backward(w * w)


def test_no_grad_suppresses_tape():
    w = t64([1.0, 2.0])
    with T.no_grad():
        out = (w * w).sum()
    assert out.op is None and out.parents == ()
    T.backward(out)  # nothing reachable: w.grad stays untouched
    assert w.grad is None


def test_wirtinger_pair_gradient_matches_finite_differences():
    # loss = Re(conj(w) * w) = |w|^2 for w = 1+1i in (re, im) storage
    w = t64([1.0, 1.0])

    def loss():
        return T.forward_op("abs_squared", w).sum()

    err = T.check_gradients(loss, [w], eps=1e-4, rtol=1e-3)
    assert err <= 1e-3
    assert np.allclose(w.grad, [2.0, 2.0], atol=1e-6)


# ---------------------------------------------------------------------------
# gradient checks, one per op kind (central differences, eps=1e-4, rtol 1e-3)
# ---------------------------------------------------------------------------

def _weighted(rng, out):
    # random projection to a scalar so every output coordinate is exercised
    wvec = T.Tensor(rng.standard_normal(out.shape))
    return (out * wvec).sum()


OP_CASES = {
    "add": lambda rng: (lambda a, b: T.forward_op("add", a, b),
                        [(3, 4), (3, 4)], {}),
    "mul": lambda rng: (lambda a, b: T.forward_op("mul", a, b),
                        [(3, 4), (3, 4)], {}),
    "matmul": lambda rng: (lambda a, b: T.forward_op("matmul", a, b),
                           [(3, 4), (4, 2)], {}),
    "linear": lambda rng: (lambda x, w, b: T.forward_op("linear", x, w, b),
                           [(5, 3), (3, 2), (2,)], {}),
    "tanh": lambda rng: (lambda x: T.forward_op("tanh", x), [(4, 3)], {}),
    "sigmoid": lambda rng: (lambda x: T.forward_op("sigmoid", x), [(4, 3)], {}),
    "log": lambda rng: (lambda x: T.forward_op("log", x), [(7,)], {"positive": True}),
    "softmax": lambda rng: (lambda x: T.forward_op("softmax", x, axis=-1), [(3, 5)], {}),
    "log_softmax": lambda rng: (lambda x: T.forward_op("log_softmax", x, axis=-1), [(3, 5)], {}),
    "sum": lambda rng: (lambda x: T.forward_op("sum", x, axis=0), [(4, 3)], {}),
    "mean_pool": lambda rng: (lambda x: T.forward_op("mean_pool", x, size=3, axis=0), [(7, 2)], {}),
    "concat": lambda rng: (lambda a, b: T.forward_op("concat", a, b, axis=1),
                           [(3, 2), (3, 4)], {}),
    "slice": lambda rng: (lambda x: T.forward_op("slice", x, slices=(slice(1, 3), slice(0, 2))),
                          [(4, 3)], {}),
    "stride_decimate": lambda rng: (lambda x: T.forward_op("stride_decimate", x, stride=2, axis=0),
                                    [(7, 2)], {}),
    "reshape": lambda rng: (lambda x: T.forward_op("reshape", x, shape=(6, 2)), [(3, 4)], {}),
    "expand": lambda rng: (lambda x: T.forward_op("expand", x, n=3, axis=0), [(4, 2)], {}),
    "conv1d": lambda rng: (lambda x, k, b: T.forward_op("conv1d", x, k, b, stride=2),
                           [(9, 2, 3), (3, 3, 2), (2,)], {}),
    "complex_mul": lambda rng: (lambda a, b: T.forward_op("complex_mul", a, b),
                                [(5, 2), (5, 2)], {}),
    "abs_squared": lambda rng: (lambda x: T.forward_op("abs_squared", x), [(5, 2)], {}),
    "cfsum": lambda rng: (lambda x, w, b: T.forward_op("cfsum", x, w, b),
                          [(2, 3, 2, 2), (3, 2, 2, 2), (3, 2, 2)], {}),
    "lstm_seq": lambda rng: (lambda x, w, u, b: T.forward_op("lstm_seq", x, w, u, b),
                             [(3, 2, 3), (3, 8), (2, 8), (8,)], {}),
}


@pytest.mark.parametrize("kind", sorted(OP_CASES))
def test_gradcheck_per_op(kind):
    rng = np.random.default_rng(hash(kind) % (2 ** 31))
    build, shapes, opts = OP_CASES[kind](rng)
    tensors = []
    for s in shapes:
        data = rng.standard_normal(s)
        if opts.get("positive"):
            data = np.abs(data) + 0.5
        tensors.append(T.Tensor(data, requires_grad=True))

    def loss():
        return _weighted(np.random.default_rng(7), build(*tensors))

    err = T.check_gradients(loss, tensors, eps=1e-4, rtol=1e-3)
    assert err <= 1e-3


def test_lstm_seq_reverse_gradcheck_and_flip_equivalence():
    rng = np.random.default_rng(5)
    x = rand64(rng, (4, 2, 3))
    w = rand64(rng, (3, 8))
    u = rand64(rng, (2, 8))
    b = rand64(rng, (8,))

    def loss():
        return _weighted(np.random.default_rng(3),
                         T.forward_op("lstm_seq", x, w, u, b, reverse=True))

    T.check_gradients(loss, [x, w, u, b], eps=1e-4, rtol=1e-3)

    # reverse == run forward on flipped input, flip output back
    fwd = T.forward_op("lstm_seq", T.Tensor(x.data[::-1].copy()), w, u, b).data[::-1]
    rev = T.forward_op("lstm_seq", x, w, u, b, reverse=True).data
    assert np.allclose(fwd, rev)


def test_lstm_seq_matches_primitive_composition():
    """Fused LSTM equals the same cell built from primitive ops."""
    rng = np.random.default_rng(11)
    t_len, nb, din, nh = 5, 2, 3, 4
    x = rand64(rng, (t_len, nb, din), grad=False)
    w = rand64(rng, (din, 4 * nh), grad=False)
    u = rand64(rng, (nh, 4 * nh), grad=False)
    b = rand64(rng, (4 * nh,), grad=False)

    fused = T.forward_op("lstm_seq", x, w, u, b).data

    h = T.Tensor(np.zeros((nb, nh)))
    c = T.Tensor(np.zeros((nb, nh)))
    rows = []
    for t in range(t_len):
        xt = T.forward_op("slice", x, slices=(slice(t, t + 1),)).reshape((nb, din))
        a = T.forward_op("linear", xt, w, b) + (h @ u)
        ig = T.forward_op("sigmoid", T.forward_op("slice", a, slices=(slice(None), slice(0, nh))))
        fg = T.forward_op("sigmoid", T.forward_op("slice", a, slices=(slice(None), slice(nh, 2 * nh))))
        gg = T.forward_op("tanh", T.forward_op("slice", a, slices=(slice(None), slice(2 * nh, 3 * nh))))
        og = T.forward_op("sigmoid", T.forward_op("slice", a, slices=(slice(None), slice(3 * nh, 4 * nh))))
        c = fg * c + ig * gg
        h = og * T.forward_op("tanh", c)
        rows.append(h.data)
    assert np.allclose(fused, np.stack(rows), atol=1e-12)


def test_composed_network_gradcheck_sampled_coords():
    """Random small network; 50 sampled coordinates vs finite differences."""
    rng = np.random.default_rng(1234)
    x = T.Tensor(rng.standard_normal((6, 5)))
    w1 = rand64(rng, (5, 8))
    b1 = rand64(rng, (8,))
    w2 = rand64(rng, (8, 4))
    b2 = rand64(rng, (4,))

    def loss():
        h = T.forward_op("tanh", T.forward_op("linear", x, w1, b1))
        out = T.forward_op("log_softmax", T.forward_op("linear", h, w2, b2), axis=-1)
        return _weighted(np.random.default_rng(9), out)

    err = T.check_gradients(loss, [w1, b1, w2, b2], eps=1e-4, rtol=1e-3,
                            coords=50, seed=2)
    assert err <= 1e-3


def test_forward_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(77)
        x = T.Tensor(rng.standard_normal((4, 3)).astype(np.float32))
        w = T.Tensor(rng.standard_normal((3, 3)).astype(np.float32), requires_grad=True)
        out = T.forward_op("softmax", x @ w, axis=-1).sum()
        T.backward(out)
        return out.data.copy(), w.grad.copy()

    v1, g1 = run()
    v2, g2 = run()
    assert v1.tobytes() == v2.tobytes()
    assert g1.tobytes() == g2.tobytes()


def test_complex_tensor_cannot_require_grad():
    with pytest.raises(DtypeError):
        T.Tensor(np.array([1 + 1j], dtype=np.complex64), requires_grad=True)


def test_graph_topological_order_visits_once():
    w = t64([1.0])
    a = w * w
    out = (a + a).sum()
    g = T.Graph(out)
    assert len(set(id(n) for n in g.nodes)) == len(g.nodes)
    # parents precede children
    pos = {id(n): i for i, n in enumerate(g.nodes)}
    for n in g.nodes:
        for p in n.parents:
            assert pos[id(p)] < pos[id(n)]
