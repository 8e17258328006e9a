"""Two-dimensional spatio-temporal LSTM over a (joint, frame) lattice.

Arrays are laid out as ``(J, T, B, features)``: joint, frame, batch. Each
step (j, t) reads the spatial predecessor (j-1, t) and the temporal
predecessor (j, t-1); missing predecessors are zero vectors.

The gate pre-activations are stacked as (i, f_s, f_t, o, u), each block of
width ``d``; ``u`` is the tanh-modulated input, the rest are sigmoids.

An optional per-step scalar gate ``r`` turns the cell update into

    c = r * i * u + (1 - r) * (f_s * c_left + f_t * c_prev)

which is how the attention layers inject informativeness scores.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DTYPE, ContractError, ParamStore, ShapeError, sigmoid

GATE_NAMES = ("i", "f_s", "f_t", "o", "u")


def anatomical_chain(n_joints: int) -> np.ndarray:
    """Default joint order: identity.

    The synthetic skeleton numbers its joints torso-first and then limb by
    limb from the root outward, so its natural index order already is the
    chain. Other skeletons should pass an explicit permutation.
    """
    return np.arange(n_joints)


def check_order(order, n_joints: int) -> np.ndarray:
    order = np.asarray(order, dtype=int)
    if order.shape != (n_joints,) or not np.array_equal(np.sort(order), np.arange(n_joints)):
        raise ContractError(f"joint order must be a permutation of 0..{n_joints - 1}")
    return order


class STLSTMLayer:
    """Parameters of one lattice layer: W of shape (5d, d_in + 2d) and b (5d,)."""

    def __init__(self, store: ParamStore, prefix: str, d_in: int, d: int, step: int = 0):
        self.d_in = d_in
        self.d = d
        self.W = store.add(f"{prefix}.W", (5 * d, d_in + 2 * d), step=step)
        self.b = store.add(f"{prefix}.b", (5 * d,), step=step, zero=True)

    def forward(self, X, gate=None, schedule="wavefront"):
        return lattice_forward(self.W.value, self.b.value, X, gate=gate, schedule=schedule)

    def backward(self, state, grad_h, grad_c=None):
        dW, db, dX, dr = lattice_backward(self.W.value, state, grad_h, grad_c)
        self.W.grad += dW
        self.b.grad += db
        return dX, dr


@dataclass
class CellCache:
    z: np.ndarray
    gates: np.ndarray
    c_left: np.ndarray
    c_prev: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    r: np.ndarray | None


def cell_forward(W, b, x, h_left, h_prev, c_left, c_prev, r=None):
    """One ST-LSTM step on arrays with arbitrary leading axes.

    Returns ``(c, h, cache)``. ``r`` broadcasts against the leading axes.
    """
    d = W.shape[0] // 5
    for name, v in (("h_left", h_left), ("h_prev", h_prev), ("c_left", c_left), ("c_prev", c_prev)):
        if v.shape[-1] != d:
            raise ShapeError(f"{name} has width {v.shape[-1]}, expected {d}")
    if x.shape[-1] + 2 * d != W.shape[1]:
        raise ShapeError(f"x has width {x.shape[-1]}, expected {W.shape[1] - 2 * d}")
    z = np.concatenate([x, h_left, h_prev], axis=-1)
    a = np.matmul(z, W.T) + b
    g = np.empty_like(a)
    g[..., : 4 * d] = sigmoid(a[..., : 4 * d])
    g[..., 4 * d :] = np.tanh(a[..., 4 * d :])
    i, fs, ft, o, u = (g[..., k * d : (k + 1) * d] for k in range(5))
    if r is None:
        c = i * u + fs * c_left + ft * c_prev
    else:
        rr = np.asarray(r, dtype=DTYPE)[..., None]
        c = rr * (i * u) + (1.0 - rr) * (fs * c_left) + (1.0 - rr) * (ft * c_prev)
    tc = np.tanh(c)
    h = o * tc
    return c, h, CellCache(z, g, c_left, c_prev, c, tc, None if r is None else np.asarray(r, dtype=DTYPE))


def cell_backward(W, cache: CellCache, dh, dc):
    """Gradients of one step. Returns (dW, db, dx, dh_left, dh_prev, dc_left, dc_prev, dr)."""
    d = W.shape[0] // 5
    g = cache.gates
    i, fs, ft, o, u = (g[..., k * d : (k + 1) * d] for k in range(5))
    dc = dc + dh * o * (1.0 - cache.tanh_c ** 2)
    do = dh * cache.tanh_c
    if cache.r is None:
        a_in = dc
        a_hist = dc
        dr = None
    else:
        rr = cache.r[..., None]
        a_in = dc * rr
        a_hist = dc * (1.0 - rr)
        dr = np.sum(dc * (i * u - fs * cache.c_left - ft * cache.c_prev), axis=-1)
    dg = np.empty_like(g)
    dg[..., 0 * d : 1 * d] = a_in * u
    dg[..., 1 * d : 2 * d] = a_hist * cache.c_left
    dg[..., 2 * d : 3 * d] = a_hist * cache.c_prev
    dg[..., 3 * d : 4 * d] = do
    dg[..., 4 * d :] = a_in * i
    da = np.empty_like(g)
    da[..., : 4 * d] = dg[..., : 4 * d] * g[..., : 4 * d] * (1.0 - g[..., : 4 * d])
    da[..., 4 * d :] = dg[..., 4 * d :] * (1.0 - u * u)
    dc_left = a_hist * fs
    dc_prev = a_hist * ft
    z2 = cache.z.reshape(-1, cache.z.shape[-1])
    da2 = da.reshape(-1, da.shape[-1])
    dW = da2.T @ z2
    db = da2.sum(axis=0)
    dz = (da2 @ W).reshape(da.shape[:-1] + (W.shape[1],))
    d_in = W.shape[1] - 2 * d
    return dW, db, dz[..., :d_in], dz[..., d_in : d_in + d], dz[..., d_in + d :], dc_left, dc_prev, dr


@dataclass
class LatticeState:
    """Forward results and caches of one lattice pass.

    ``h`` and ``c`` have shape (J, T, B, d); ``gates`` (J, T, B, 5d); ``z`` holds
    the concatenated step inputs (J, T, B, d_in + 2d). ``r`` is the optional
    (J, T, B) gate grid.
    """

    h: np.ndarray
    c: np.ndarray
    gates: np.ndarray | None = None
    z: np.ndarray | None = None
    tanh_c: np.ndarray | None = None
    r: np.ndarray | None = None

    @property
    def shape(self):
        return self.h.shape[:3]

    @property
    def last(self):
        return self.h[-1, -1]


def wavefront_schedule(J, T):
    """Anti-diagonals of the lattice; cells on one diagonal are independent."""
    for k in range(J + T - 1):
        js = np.arange(max(0, k - T + 1), min(J, k + 1))
        yield js, k - js


def rowmajor_schedule(J, T):
    for j in range(J):
        for t in range(T):
            yield np.array([j]), np.array([t])


SCHEDULES = {"wavefront": wavefront_schedule, "rowmajor": rowmajor_schedule}


def _as_lattice_input(X):
    X = np.asarray(X, dtype=DTYPE)
    if X.ndim == 3:
        X = X[:, :, None, :]
    if X.ndim != 4:
        raise ShapeError(f"lattice input must be (J, T, B, d_in), got {X.shape}")
    if X.shape[0] < 1 or X.shape[1] < 1 or X.shape[2] < 1:
        raise ContractError(f"empty lattice input {X.shape}")
    return X


def lattice_forward(W, b, X, gate=None, schedule="wavefront") -> LatticeState:
    """Evaluate the lattice on X of shape (J, T, B, d_in) (or (J, T, d_in)).

    Any topological schedule gives identical results; ``wavefront`` batches
    each anti-diagonal into one stacked matmul.
    """
    X = _as_lattice_input(X)
    J, T, B, d_in = X.shape
    d = W.shape[0] // 5
    if W.shape != (5 * d, d_in + 2 * d):
        raise ShapeError(f"W has shape {W.shape}, expected {(5 * d, d_in + 2 * d)}")
    if gate is not None:
        gate = np.asarray(gate, dtype=DTYPE)
        if gate.ndim == 2:
            gate = gate[:, :, None]
        if gate.shape != (J, T, B):
            raise ShapeError(f"gate grid has shape {gate.shape}, expected {(J, T, B)}")
    # padded by one on the joint and frame axes; index 0 is the zero boundary
    H = np.zeros((J + 1, T + 1, B, d), dtype=DTYPE)
    C = np.zeros((J + 1, T + 1, B, d), dtype=DTYPE)
    G = np.empty((J, T, B, 5 * d), dtype=DTYPE)
    Z = np.empty((J, T, B, d_in + 2 * d), dtype=DTYPE)
    TC = np.empty((J, T, B, d), dtype=DTYPE)
    for js, ts in SCHEDULES[schedule](J, T):
        r = None if gate is None else gate[js, ts]
        c, h, cache = cell_forward(W, b, X[js, ts], H[js, ts + 1], H[js + 1, ts],
                                   C[js, ts + 1], C[js + 1, ts], r)
        H[js + 1, ts + 1] = h
        C[js + 1, ts + 1] = c
        G[js, ts] = cache.gates
        Z[js, ts] = cache.z
        TC[js, ts] = cache.tanh_c
    return LatticeState(H[1:, 1:], C[1:, 1:], G, Z, TC, gate)


def lattice_backward(W, state: LatticeState, grad_h, grad_c=None):
    """Reverse sweep of the lattice.

    ``grad_h`` (and optional ``grad_c``) are loss gradients w.r.t. every step's
    outputs, shape (J, T, B, d). Returns ``(dW, db, dX, dr)``; ``dr`` is None
    for an ungated layer.
    """
    if state.gates is None or state.z is None:
        raise ContractError("lattice_backward needs the forward cache")
    J, T, B = state.shape
    d = W.shape[0] // 5
    d_in = W.shape[1] - 2 * d
    dH = np.zeros((J + 1, T + 1, B, d), dtype=DTYPE)
    dC = np.zeros((J + 1, T + 1, B, d), dtype=DTYPE)
    dH[1:, 1:] = grad_h
    if grad_c is not None:
        dC[1:, 1:] = grad_c
    Cp = np.zeros((J + 1, T + 1, B, d), dtype=DTYPE)
    Cp[1:, 1:] = state.c
    dW = np.zeros_like(W)
    db = np.zeros(W.shape[0], dtype=DTYPE)
    dX = np.zeros((J, T, B, d_in), dtype=DTYPE)
    dr = None if state.r is None else np.zeros((J, T, B), dtype=DTYPE)
    for js, ts in reversed(list(wavefront_schedule(J, T))):
        cache = CellCache(state.z[js, ts], state.gates[js, ts], Cp[js, ts + 1], Cp[js + 1, ts],
                          state.c[js, ts], state.tanh_c[js, ts],
                          None if state.r is None else state.r[js, ts])
        gW, gb, gx, ghl, ghp, gcl, gcp, gr = cell_backward(W, cache, dH[js + 1, ts + 1], dC[js + 1, ts + 1])
        dW += gW
        db += gb
        dX[js, ts] = gx
        # targets within one diagonal are distinct, so fancy-index += is safe
        dH[js, ts + 1] += ghl
        dH[js + 1, ts] += ghp
        dC[js, ts + 1] += gcl
        dC[js + 1, ts] += gcp
        if dr is not None:
            dr[js, ts] = gr
    return dW, db, dX, dr
