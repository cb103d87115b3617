"""Tape correctness: every primitive against central finite differences,
plus structural invariants of the tape walk."""

import numpy as np
import pytest

from fedcpc import autodiff as ad
from fedcpc.autodiff import Tensor, Tape, backward, gradient
from fedcpc.errors import ContractError, DimensionError


def fd_grad(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function over every entry of x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = g.ravel()
    base = x.astype(np.float64).copy()
    for i in range(base.size):
        b = base.copy().ravel()
        b[i] += step
        up = f(b.reshape(x.shape))
        b[i] -= 2 * step
        down = f(b.reshape(x.shape))
        flat[i] = (up - down) / (2 * step)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom))


def check_against_fd(build, x0, tol=1e-6):
    """build(tensor) -> scalar loss tensor; compares tape grad with FD."""
    t = Tensor(x0, requires_grad=True)
    loss = build(t)
    backward(loss)
    fd = fd_grad(lambda arr: build(Tensor(arr)).item(), x0)
    assert t.grad is not None
    assert rel_err(t.grad, fd) < tol


def test_tensor_rejects_nonfinite():
    with pytest.raises(ValueError):
        Tensor([1.0, np.nan])
    with pytest.raises(ValueError):
        Tensor(np.inf)


def test_backward_needs_scalar():
    t = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        backward(ad.scale(t, 2.0))


def test_matmul_against_fd():
    rng = np.random.default_rng(0)
    a0 = rng.standard_normal((3, 4))
    b0 = rng.standard_normal((4, 2))

    check_against_fd(lambda a: ad.sum_all(ad.matmul(a, Tensor(b0))), a0)
    check_against_fd(lambda b: ad.sum_all(ad.matmul(Tensor(a0), b)), b0)


def test_matmul_identity():
    rng = np.random.default_rng(1)
    a = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
    out = ad.matmul(a, Tensor(np.eye(4)))
    assert np.array_equal(out.data, a.data)
    backward(ad.sum_all(out))
    assert np.array_equal(a.grad, np.ones((4, 4)))


def test_matmul_rejects_non_2d():
    with pytest.raises(DimensionError):
        ad.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))
    with pytest.raises(DimensionError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_add_mul_shapes():
    with pytest.raises(DimensionError):
        ad.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(DimensionError):
        ad.mul(Tensor(np.ones((2, 2))), Tensor(np.ones(2)))


def test_add_scalar_broadcast_adjoint():
    rng = np.random.default_rng(2)
    x0 = rng.standard_normal((3, 2))
    s = Tensor(np.asarray(0.7), requires_grad=True)
    x = Tensor(x0)
    backward(ad.sum_all(ad.add(x, s)))
    # the scalar collects one adjoint per broadcast position
    assert s.grad.shape == ()
    assert abs(float(s.grad) - 6.0) < 1e-12


@pytest.mark.parametrize("op", [ad.relu, ad.sigmoid, ad.tanh])
def test_elementwise_against_fd(op):
    rng = np.random.default_rng(3)
    # keep values away from relu's kink at 0
    x0 = rng.standard_normal(10) + np.sign(rng.standard_normal(10)) * 0.1
    check_against_fd(lambda t: ad.sum_all(ad.mul(op(t), Tensor(np.arange(1.0, 11.0)))), x0)


def test_tanh_gradient_point():
    x = Tensor(np.asarray(0.3), requires_grad=True)
    backward(ad.tanh(x))
    fd = fd_grad(lambda a: np.tanh(float(a)), np.asarray(0.3))
    assert rel_err(x.grad, fd) < 1e-6


def test_relu_subgradient_zero_at_kink():
    x = Tensor(np.array([0.0, -1.0, 2.0]), requires_grad=True)
    backward(ad.sum_all(ad.relu(x)))
    assert np.array_equal(x.grad, np.array([0.0, 0.0, 1.0]))


def test_log_softmax_uniform_rows():
    x = Tensor(np.zeros((2, 4)))
    out = ad.log_softmax(x)
    assert np.all(out.data == -np.log(4.0))


def test_log_softmax_shift_invariance_and_stability():
    rng = np.random.default_rng(4)
    x0 = rng.standard_normal((3, 5))
    shifted = x0 + 1000.0  # would overflow exp without max subtraction
    a = ad.log_softmax(Tensor(x0)).data
    b = ad.log_softmax(Tensor(shifted)).data
    assert np.max(np.abs(a - b)) < 1e-12
    # probabilities sum to 1
    assert np.max(np.abs(np.exp(a).sum(axis=1) - 1.0)) <= 1e-12


def test_log_softmax_against_fd():
    rng = np.random.default_rng(5)
    x0 = rng.standard_normal((3, 4))
    w = rng.standard_normal((3, 4))
    check_against_fd(lambda t: ad.sum_all(ad.mul(ad.log_softmax(t), Tensor(w))), x0)


def test_row_col_rows_scatter():
    rng = np.random.default_rng(6)
    x0 = rng.standard_normal((4, 3))
    check_against_fd(lambda t: ad.sum_all(ad.row(t, 2)), x0)
    check_against_fd(lambda t: ad.sum_all(ad.col(t, 1)), x0)
    check_against_fd(lambda t: ad.sum_all(ad.rows(t, 1, 3)), x0)


def test_stack_rows_and_transpose():
    rng = np.random.default_rng(7)
    x0 = rng.standard_normal((3, 4))
    w = rng.standard_normal((4, 3))
    check_against_fd(lambda t: ad.sum_all(ad.mul(ad.transpose(t), Tensor(w))), x0)

    vecs = [Tensor(rng.standard_normal(4), requires_grad=True) for _ in range(3)]
    out = ad.stack_rows(vecs)
    assert out.shape == (3, 4)
    backward(ad.sum_all(ad.mul(out, Tensor(np.arange(12.0).reshape(3, 4)))))
    for i, v in enumerate(vecs):
        assert np.array_equal(v.grad, np.arange(12.0).reshape(3, 4)[i])


def test_add_rowvec_against_fd():
    rng = np.random.default_rng(8)
    m0 = rng.standard_normal((3, 4))
    v0 = rng.standard_normal(4)
    check_against_fd(lambda t: ad.sum_all(ad.add_rowvec(t, Tensor(v0))), m0)
    check_against_fd(lambda t: ad.sum_all(ad.add_rowvec(Tensor(m0), t)), v0)


def test_gather_pairs_forward_and_adjoint():
    rng = np.random.default_rng(9)
    s0 = rng.standard_normal((5, 3))
    row_idx = np.array([[0, 2, 4], [1, 1, 3], [4, 0, 2]])
    col_idx = np.array([0, 1, 2])

    def build(t):
        picked = ad.gather_pairs(t, row_idx, col_idx)
        return ad.sum_all(ad.mul(picked, Tensor(np.arange(1.0, 10.0).reshape(3, 3))))

    t = Tensor(s0, requires_grad=True)
    out = ad.gather_pairs(t, row_idx, col_idx)
    for r in range(3):
        for j in range(3):
            assert out.data[r, j] == s0[row_idx[r, j], col_idx[r]]
    check_against_fd(build, s0)


def test_div_scalar():
    rng = np.random.default_rng(10)
    x0 = rng.standard_normal(6)
    check_against_fd(lambda t: ad.div_scalar(ad.sum_all(t), -7.0), x0)
    with pytest.raises(DimensionError):
        ad.div_scalar(Tensor(x0), 0.0)


def test_mean_of_identical_values_is_exact():
    v = np.log(4.0)
    t = Tensor(np.full(5, v))
    assert ad.div_scalar(ad.sum_all(t), 5.0).item() == v


def test_scale_and_sum_trivials():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    loss = ad.scale(ad.sum_all(x), 0.5)
    assert loss.item() == 7.5
    backward(loss)
    assert np.array_equal(x.grad, np.full((2, 3), 0.5))


def test_half_squared_norm_gradient_is_w():
    rng = np.random.default_rng(11)
    w0 = rng.standard_normal((4, 3))
    w = Tensor(w0, requires_grad=True)
    backward(ad.scale(ad.sum_all(ad.mul(w, w)), 0.5))
    assert np.max(np.abs(w.grad - w0)) < 1e-15


def test_lstm_cell_zero_weights():
    # all-zero gates: i=f=o=1/2, g=0 -> c=c_prev/2, h=tanh(c)/2
    dim = 4
    x = Tensor(np.ones(3))
    h0 = Tensor(np.zeros(dim))
    c0 = Tensor(np.ones(dim))
    wx = Tensor(np.zeros((3, 4 * dim)))
    wh = Tensor(np.zeros((dim, 4 * dim)))
    b = Tensor(np.zeros(4 * dim))
    h, c = ad.lstm_cell(x, h0, c0, wx, wh, b)
    assert np.max(np.abs(c.data - 0.5)) < 1e-15
    assert np.max(np.abs(h.data - 0.5 * np.tanh(0.5))) < 1e-15


def test_lstm_cell_against_fd_length_5():
    """Unrolled 5-step chain: gradient of a scalar readout w.r.t. every
    weight matrix checks out against finite differences."""
    rng = np.random.default_rng(12)
    in_dim, hid = 3, 4
    xs = rng.standard_normal((5, in_dim))
    wx0 = rng.standard_normal((in_dim, 4 * hid)) * 0.4
    wh0 = rng.standard_normal((hid, 4 * hid)) * 0.4
    b0 = rng.standard_normal(4 * hid) * 0.1
    readout = rng.standard_normal(hid)

    def run(wx_arr, wh_arr, b_arr):
        wx, wh, b = Tensor(wx_arr, requires_grad=True), Tensor(wh_arr, requires_grad=True), \
            Tensor(b_arr, requires_grad=True)
        h = Tensor(np.zeros(hid))
        c = Tensor(np.zeros(hid))
        for t in range(5):
            h, c = ad.lstm_cell(Tensor(xs[t]), h, c, wx, wh, b)
        loss = ad.sum_all(ad.mul(h, Tensor(readout)))
        return loss, wx, wh, b

    loss, wx, wh, b = run(wx0, wh0, b0)
    backward(loss)
    for tensor, arr, pick in [(wx, wx0, 0), (wh, wh0, 1), (b, b0, 2)]:
        args = [wx0, wh0, b0]

        def f(a, pick=pick, args=args):
            inner = list(args)
            inner[pick] = a
            return run(*inner)[0].item()

        fd = fd_grad(f, arr)
        assert rel_err(tensor.grad, fd) < 1e-4


def test_lstm_causality():
    """h_t must not depend on x_s for s > t."""
    rng = np.random.default_rng(13)
    in_dim, hid = 3, 4
    wx = Tensor(rng.standard_normal((in_dim, 4 * hid)) * 0.4)
    wh = Tensor(rng.standard_normal((hid, 4 * hid)) * 0.4)
    b = Tensor(np.zeros(4 * hid))
    xs = rng.standard_normal((4, in_dim))

    def h_at(step, inputs):
        h = Tensor(np.zeros(hid))
        c = Tensor(np.zeros(hid))
        outs = []
        for t in range(4):
            h, c = ad.lstm_cell(Tensor(inputs[t]), h, c, wx, wh, b)
            outs.append(h.data.copy())
        return outs[step]

    bumped = xs.copy()
    bumped[3] += 10.0
    assert np.array_equal(h_at(1, xs), h_at(1, bumped))
    assert not np.array_equal(h_at(3, xs), h_at(3, bumped))


def test_gradient_zeros_for_unused_params():
    used = Tensor(np.ones(3), requires_grad=True)
    unused = Tensor(np.ones((2, 2)), requires_grad=True)
    loss = ad.sum_all(used)
    gs = gradient(loss, [used, unused])
    assert np.array_equal(gs[0], np.ones(3))
    assert np.array_equal(gs[1], np.zeros((2, 2)))


def test_backward_is_deterministic():
    rng = np.random.default_rng(14)
    x0 = rng.standard_normal((4, 4))

    def run():
        x = Tensor(x0, requires_grad=True)
        y = ad.matmul(x, x)  # x used twice: adjoints must accumulate identically
        backward(ad.sum_all(ad.mul(y, y)))
        return x.grad.copy()

    a, b = run(), run()
    assert np.array_equal(a, b)


def test_tape_topological_order():
    x = Tensor(np.ones(2), requires_grad=True)
    y = ad.mul(x, x)
    z = ad.add(y, x)       # diamond: x feeds both y and z
    loss = ad.sum_all(z)
    tape = Tape.trace(loss)
    seen = set()
    for node in tape.nodes:
        for inp in node.inputs:
            if inp.node is not None:
                assert id(inp.node) in seen, "input produced after consumer"
        seen.add(id(node))
    # each node appears exactly once
    ids = [id(n) for n in tape.nodes]
    assert len(ids) == len(set(ids))
