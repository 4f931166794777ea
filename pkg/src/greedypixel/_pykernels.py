"""Pure numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` exactly in semantics. The convolutions may
differ from the compiled versions in the last floating-point bits because
the summation order differs; the coupon-collector counts are identical.
"""

from __future__ import annotations

import numpy as np

_XORSHIFT_MULT = np.uint64(0x2545F4914F6CDD1D)
_S12 = np.uint64(12)
_S25 = np.uint64(25)
_S27 = np.uint64(27)
_S32 = np.uint64(32)


def conv3x3_forward(x, weight, bias):
    """Same-padded 3x3 cross-correlation. ``x`` is (B, C, H, W)."""
    x = np.asarray(x, dtype=np.float64)
    b, c, h, w = x.shape
    f = weight.shape[0]
    xp = np.zeros((b, c, h + 2, w + 2))
    xp[:, :, 1:-1, 1:-1] = x
    out = np.empty((b, f, h, w))
    out[...] = bias[None, :, None, None]
    for i in range(3):
        for j in range(3):
            out += np.einsum("fc,bchw->bfhw", weight[:, :, i, j], xp[:, :, i : i + h, j : j + w])
    return out


def conv3x3_input_grad(gz, weight):
    """Gradient w.r.t. the input of ``conv3x3_forward`` given upstream ``gz``."""
    gz = np.asarray(gz, dtype=np.float64)
    b, f, h, w = gz.shape
    c = weight.shape[1]
    gp = np.zeros((b, f, h + 2, w + 2))
    gp[:, :, 1:-1, 1:-1] = gz
    gx = np.zeros((b, c, h, w))
    for i in range(3):
        for j in range(3):
            # out[h] reads x[h + i - 1], so x[h'] receives gz[h' - i + 1]
            gx += np.einsum("fc,bfhw->bchw", weight[:, :, i, j], gp[:, :, 2 - i : 2 - i + h, 2 - j : 2 - j + w])
    return gx


def coupon_collector_counts(m: int, states):
    """Draws needed to see all ``m`` cells, one xorshift64* stream per trial."""
    state = np.array(states, dtype=np.uint64)
    trials = state.shape[0]
    visited = np.zeros((trials, m), dtype=bool)
    seen = np.zeros(trials, dtype=np.int64)
    counts = np.zeros(trials, dtype=np.int64)
    active = np.ones(trials, dtype=bool)
    rows = np.arange(trials)
    mm = np.uint64(m)
    while active.any():
        idx_rows = rows[active]
        s = state[idx_rows]
        s ^= s >> _S12
        s ^= s << _S25
        s ^= s >> _S27
        state[idx_rows] = s
        r = s * _XORSHIFT_MULT
        cell = (((r >> _S32) * mm) >> _S32).astype(np.int64)
        counts[idx_rows] += 1
        fresh = ~visited[idx_rows, cell]
        visited[idx_rows, cell] = True
        seen[idx_rows] += fresh
        active[idx_rows] = seen[idx_rows] < m
    return counts
