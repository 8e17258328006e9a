import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcalstm.numerics import ContractError, ParamStore, RngStream, ShapeError, finite_diff_check
from gcalstm.stlstm import (STLSTMLayer, anatomical_chain, cell_forward, check_order, lattice_backward,
                            lattice_forward)

from . import oracles

# d_in = 1, d = 1; rows are the (i, f_s, f_t, o, u) pre-activations
W_HAND = np.array([[0.5, -0.3, 0.2], [0.1, 0.4, -0.2], [-0.3, 0.2, 0.1], [0.2, 0.1, 0.3], [0.6, -0.5, 0.4]])
B_HAND = np.array([0.1, 0.0, -0.1, 0.2, 0.05])


def _weights(d_in, d, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    return rng.normal(0, scale, size=(5 * d, d_in + 2 * d)), rng.normal(0, scale, size=5 * d)


def _vec(*v):
    return np.array(v, dtype=float)


# -- single cell ----------------------------------------------------------------

def test_cell_zero_params():
    W, b = np.zeros((5 * 3, 2 + 6)), np.zeros(15)
    cl, cp = _vec(1.0, -2.0, 0.5), _vec(3.0, 0.0, 1.5)
    c, h, _ = cell_forward(W, b, _vec(1.0, 2.0), np.zeros(3), np.zeros(3), cl, cp)
    np.testing.assert_array_equal(c, 0.5 * (cl + cp))
    c0, h0, _ = cell_forward(W, b, _vec(1.0, 2.0), np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3))
    assert np.all(h0 == 0) and np.all(c0 == 0)


def test_cell_hand_trace_zero_context():
    # i = s(0.85), u = tanh(0.95), o = s(0.5): c = i*u, h = o*tanh(c)
    z = np.zeros(1)
    c, h, _ = cell_forward(W_HAND, B_HAND, _vec(1.5), z, z, z, z)
    assert c[0] == pytest.approx(0.5182676982817057, rel=1e-14)
    assert h[0] == pytest.approx(0.29651591656859505, rel=1e-14)


def test_cell_hand_trace_with_context():
    args = (_vec(1.5), _vec(0.3), _vec(-0.2), _vec(0.7), _vec(-0.4))
    c, h, _ = cell_forward(W_HAND, B_HAND, *args)
    assert c[0] == pytest.approx(0.6686797985892983, rel=1e-14)
    assert h[0] == pytest.approx(0.35945228941170526, rel=1e-14)
    c, h, _ = cell_forward(W_HAND, B_HAND, *args, r=0.5)
    assert c[0] == pytest.approx(0.33433989929464913, rel=1e-14)
    assert h[0] == pytest.approx(0.19840893045704003, rel=1e-14)


def test_cell_linear_in_c_left():
    W, b = _weights(2, 3, seed=4)
    rng = np.random.default_rng(1)
    x, hl, hp, cl, cp = rng.normal(size=2), rng.normal(size=3), rng.normal(size=3), rng.normal(size=3), rng.normal(size=3)
    c1, _, cache = cell_forward(W, b, x, hl, hp, cl, cp)
    c2, _, _ = cell_forward(W, b, x, hl, hp, 2 * cl, cp)
    fs = cache.gates[3:6]
    np.testing.assert_allclose(c2 - c1, fs * cl, rtol=1e-12, atol=1e-15)


def test_cell_shape_errors():
    W, b = _weights(2, 3)
    z3 = np.zeros(3)
    with pytest.raises(ShapeError, match="x"):
        cell_forward(W, b, np.zeros(4), z3, z3, z3, z3)
    with pytest.raises(ShapeError, match="c_prev"):
        cell_forward(W, b, np.zeros(2), z3, z3, z3, np.zeros(2))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_gate_boundaries_are_exact(d, seed):
    rng = np.random.default_rng(seed)
    W, b = rng.normal(size=(5 * d, 2 + 2 * d)), rng.normal(size=5 * d)
    x, hl, hp, cl, cp = (rng.normal(size=s) for s in (2, d, d, d, d))
    _, _, ungated = cell_forward(W, b, x, hl, hp, cl, cp)
    i, fs, ft, _, u = np.split(ungated.gates, 5)
    c1, _, _ = cell_forward(W, b, x, hl, hp, cl, cp, r=1.0)
    c0, _, _ = cell_forward(W, b, x, hl, hp, cl, cp, r=0.0)
    assert np.array_equal(c1, i * u)
    assert np.array_equal(c0, fs * cl + ft * cp)


# -- lattice ----------------------------------------------------------------------

def test_single_step_lattice_is_a_cell():
    W, b = _weights(3, 4, seed=2)
    x = np.random.default_rng(0).normal(size=3)
    st_ = lattice_forward(W, b, x.reshape(1, 1, 3))
    z = np.zeros(4)
    c, h, _ = cell_forward(W, b, x, z, z, z, z)
    np.testing.assert_array_equal(st_.h[0, 0, 0], h)
    np.testing.assert_array_equal(st_.c[0, 0, 0], c)


def test_lattice_matches_naive_reimplementation():
    W, b = _weights(3, 2, seed=9)
    X = np.random.default_rng(5).normal(size=(3, 4, 3))
    state = lattice_forward(W, b, X)
    H, C = oracles.lattice(W.tolist(), b.tolist(), X.tolist())
    np.testing.assert_allclose(state.h[:, :, 0], np.array(H), rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(state.c[:, :, 0], np.array(C), rtol=1e-12, atol=1e-14)


def test_gated_lattice_matches_naive_reimplementation():
    W, b = _weights(2, 2, seed=3)
    rng = np.random.default_rng(8)
    X = rng.normal(size=(2, 2, 2))
    r = np.full((2, 2), 0.5)
    state = lattice_forward(W, b, X, gate=r)
    H, C = oracles.lattice(W.tolist(), b.tolist(), X.tolist(), r.tolist())
    np.testing.assert_allclose(state.h[:, :, 0], np.array(H), rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(state.c[:, :, 0], np.array(C), rtol=1e-12, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 4), st.integers(1, 9), st.integers(1, 5),
       st.booleans(), st.integers(0, 2**31 - 1))
def test_schedule_invariance_bit_identical(J, T, B, d, d_in, gated, seed):
    rng = np.random.default_rng(seed)
    W, b = rng.normal(size=(5 * d, d_in + 2 * d)), rng.normal(size=5 * d)
    X = rng.normal(size=(J, T, B, d_in))
    gate = rng.random(size=(J, T, B)) if gated else None
    a = lattice_forward(W, b, X, gate, schedule="wavefront")
    r = lattice_forward(W, b, X, gate, schedule="rowmajor")
    assert np.array_equal(a.h, r.h) and np.array_equal(a.c, r.c)


def test_causality():
    W, b = _weights(3, 4, seed=1)
    X = np.random.default_rng(2).normal(size=(4, 5, 1, 3))
    base = lattice_forward(W, b, X).h
    X2 = X.copy()
    X2[1, 2] += 0.3
    diff = np.any(lattice_forward(W, b, X2).h != base, axis=(2, 3))
    jj, tt = np.meshgrid(np.arange(4), np.arange(5), indexing="ij")
    assert not np.any(diff[(jj < 1) | (tt < 2)])
    assert np.all(diff[(jj >= 1) & (tt >= 2)])


def test_zero_input_zero_params_gives_zero_h():
    st_ = lattice_forward(np.zeros((20, 11)), np.zeros(20), np.zeros((3, 4, 2, 3)))
    assert np.all(st_.h == 0)


def test_empty_sequence_rejected():
    W, b = _weights(3, 2)
    with pytest.raises(ContractError):
        lattice_forward(W, b, np.zeros((2, 0, 1, 3)))


def test_gate_shape_checked():
    W, b = _weights(3, 2)
    with pytest.raises(ShapeError):
        lattice_forward(W, b, np.zeros((2, 3, 1, 3)), gate=np.ones((3, 2, 1)))


# -- backward ------------------------------------------------------------------------

def test_zero_upstream_gives_zero_grads():
    W, b = _weights(3, 4)
    state = lattice_forward(W, b, np.random.default_rng(0).normal(size=(3, 3, 2, 3)))
    dW, db, dX, _ = lattice_backward(W, state, np.zeros_like(state.h))
    assert not dW.any() and not db.any() and not dX.any()


def test_backward_needs_cache():
    W, b = _weights(3, 2)
    state = lattice_forward(W, b, np.ones((2, 2, 1, 3)))
    state.gates = None
    with pytest.raises(ContractError):
        lattice_backward(W, state, np.zeros_like(state.h))


@pytest.mark.parametrize("gated", [False, True])
def test_lattice_gradients_finite_differences(gated):
    store = ParamStore(RngStream(4))
    layer = STLSTMLayer(store, "l", 3, 4)
    rng = np.random.default_rng(6)
    store["l.b"].value[:] = rng.normal(0, 0.3, size=20)
    X = rng.normal(size=(2, 3, 2, 3))
    gate = rng.random((2, 3, 2)) if gated else None
    probe = rng.normal(size=(2, 3, 2, 4))

    def loss():
        state = layer.forward(X, gate)
        layer.backward(state, probe)
        return float(np.sum(state.h * probe))

    rep = finite_diff_check(loss, store)
    assert rep.max_rel_error < 1e-4


def test_input_and_gate_gradients_finite_differences():
    W, b = _weights(2, 3, seed=12)
    rng = np.random.default_rng(13)
    X = rng.normal(size=(3, 2, 1, 2))
    gate = rng.random((3, 2, 1))
    probe = rng.normal(size=(3, 2, 1, 3))
    state = lattice_forward(W, b, X, gate)
    _, _, dX, dr = lattice_backward(W, state, probe)

    def f(Xv, gv):
        return float(np.sum(lattice_forward(W, b, Xv, gv).h * probe))

    eps = 1e-6
    for idx in [(0, 0, 0, 1), (2, 1, 0, 0), (1, 0, 0, 1)]:
        Xp, Xm = X.copy(), X.copy()
        Xp[idx] += eps
        Xm[idx] -= eps
        assert (f(Xp, gate) - f(Xm, gate)) / (2 * eps) == pytest.approx(dX[idx], rel=1e-6, abs=1e-9)
    for idx in [(0, 0, 0), (1, 1, 0), (2, 0, 0)]:
        gp, gm = gate.copy(), gate.copy()
        gp[idx] += eps
        gm[idx] -= eps
        assert (f(X, gp) - f(X, gm)) / (2 * eps) == pytest.approx(dr[idx], rel=1e-6, abs=1e-9)


def test_input_gradient_is_causal():
    W, b = _weights(2, 3, seed=1)
    X = np.random.default_rng(3).normal(size=(4, 4, 1, 2))
    state = lattice_forward(W, b, X)
    g = np.zeros_like(state.h)
    g[1, 2] = 1.0
    _, _, dX, _ = lattice_backward(W, state, g)
    nz = np.any(dX != 0, axis=(2, 3))
    jj, tt = np.meshgrid(np.arange(4), np.arange(4), indexing="ij")
    assert not np.any(nz[(jj > 1) | (tt > 2)])
    assert nz[1, 2]


# -- joint order ------------------------------------------------------------------------

def test_joint_order_validation():
    assert np.array_equal(anatomical_chain(5), np.arange(5))
    check_order([2, 0, 1], 3)
    with pytest.raises(ContractError):
        check_order([0, 0, 1], 3)
    with pytest.raises(ContractError):
        check_order([0, 1], 3)
