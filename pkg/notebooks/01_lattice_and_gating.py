"""
The spatio-temporal lattice and its informativeness gate
=========================================================

A small walk through one ST-LSTM lattice: how the hidden state at
(joint j, frame t) depends only on steps to its left and before it, and
how the gate r blends new input against the two remembered cell states.
"""

# %%
# A lattice over 4 joints and 5 frames with random weights. The
# wavefront and row-major schedules give the same bits.
import numpy as np

from gcalstm.stlstm import cell_forward, lattice_forward

rng = np.random.default_rng(0)
d_in, d = 3, 4
W = rng.normal(0, 0.5, size=(5 * d, d_in + 2 * d))
b = np.zeros(5 * d)
X = rng.normal(size=(4, 5, 1, d_in))

wave = lattice_forward(W, b, X, schedule="wavefront")
rows = lattice_forward(W, b, X, schedule="rowmajor")
print("schedules agree:", np.array_equal(wave.h, rows.h))

# %%
# Nudge one input and see which steps move. Only steps right of and
# after the nudge can change.
X2 = X.copy()
X2[1, 2] += 0.5
moved = np.any(lattice_forward(W, b, X2).h != wave.h, axis=(2, 3))
print(moved.astype(int))

# %%
# The gate at its two ends: r = 1 keeps only the new input i*u,
# r = 0 keeps only the history f_s*c_left + f_t*c_prev.
x, hl, hp, cl, cp = rng.normal(size=d_in), *rng.normal(size=(4, d))
_, _, cache = cell_forward(W, b, x, hl, hp, cl, cp)
i, fs, ft, o, u = np.split(cache.gates, 5)
for r in (0.0, 0.5, 1.0):
    c, h, _ = cell_forward(W, b, x, hl, hp, cl, cp, r=r)
    print(f"r={r}: c={np.round(c, 3)}")
print("i*u              =", np.round(i * u, 3))
print("fs*cl + ft*cp    =", np.round(fs * cl + ft * cp, 3))
