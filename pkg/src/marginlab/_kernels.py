"""Compiled inner loops for the GD/SGD runners.

Each kernel advances a run by one chunk (the steps between two recorded
points), mutating the weight / running-average buffers in place. Summations
are plain left-to-right loops in sample-index order. Region flips are
tracked per step through an int64 signature code:

    -1                          some negative sample has w.x > 0
    mask of activated positives otherwise, with bit 62 set when the mask is
                                full and every negative product is < 0
                                (the strictly separable case)

The positive class is limited to 62 samples for exact per-step tracking;
runners validate this up front.
"""

import numpy as np
from numba import njit

EXP_CLAMP = 700.0
SEPARABLE_BIT = np.int64(1) << np.int64(62)


@njit(cache=True, nogil=True, inline="always")
def _region_code(prods, pos_idx, neg_idx):
    jmask = np.int64(0)
    for b in range(pos_idx.shape[0]):
        if prods[pos_idx[b]] > 0.0:
            jmask |= np.int64(1) << np.int64(b)
    neg_pos = False
    neg_zero = False
    for k in range(neg_idx.shape[0]):
        p = prods[neg_idx[k]]
        if p > 0.0:
            neg_pos = True
        elif p == 0.0:
            neg_zero = True
    if neg_pos:
        return np.int64(-1)
    full = (np.int64(1) << np.int64(pos_idx.shape[0])) - np.int64(1)
    if jmask == full and not neg_zero:
        return full | SEPARABLE_BIT
    return jmask


@njit(cache=True, nogil=True)
def gd_chunk(points, ylab, pos_idx, neg_idx, slope, eta, w, avg_w,
             t0, nsteps, istate):
    """Run nsteps full-gradient steps starting at step t0.

    istate: int64[3] = [prev region code, flip count, last flip step],
    updated in place. Returns (overflow, stopped_at); stopped_at is the step
    with an exactly-zero gradient, or -1 if all steps ran.
    """
    n, d = points.shape
    prods = np.empty(n)
    acc = np.empty(d)
    overflow = False
    for s in range(nsteps):
        t = t0 + s
        for i in range(n):
            u = 0.0
            for j in range(d):
                u += points[i, j] * w[j]
            prods[i] = u
        code = _region_code(prods, pos_idx, neg_idx)
        if code != istate[0]:
            istate[0] = code
            istate[1] += 1
            istate[2] = t
        for j in range(d):
            acc[j] = 0.0
        for i in range(n):
            u = prods[i]
            sp = 1.0 if u > 0.0 else slope
            if sp == 0.0:
                continue
            act = u if u > 0.0 else slope * u
            arg = -ylab[i] * act
            if arg > EXP_CLAMP:
                arg = EXP_CLAMP
                overflow = True
            c = ylab[i] * sp * np.exp(arg)
            for j in range(d):
                acc[j] += c * points[i, j]
        zero = True
        for j in range(d):
            if acc[j] != 0.0:
                zero = False
                break
        if zero:
            return overflow, t
        inv = 1.0 / (t + 1.0)
        for j in range(d):
            avg_w[j] += (w[j] - avg_w[j]) * inv
        scale = eta / n
        for j in range(d):
            w[j] += scale * acc[j]
    return overflow, -1


@njit(cache=True, nogil=True)
def sgd_chunk(points, gram, norms2, ylab, pos_idx, neg_idx, slope,
              w, avg_w, prods, idxs, etas, t0, var0, istate):
    """Run len(idxs) single-sample steps starting at step t0.

    prods must equal points @ w on entry; it is maintained incrementally via
    the Gram matrix (refreshed by the caller at chunk boundaries) and feeds
    only the region signature. The update itself recomputes w.x_i directly,
    so the weight path is bit-independent of the recording stride. Returns
    (var_sum, overflow) with var_sum = var0 + sum eta_k^2 ||grad_k||^2.
    """
    n, d = points.shape
    var = var0
    overflow = False
    for s in range(idxs.shape[0]):
        t = t0 + s
        code = _region_code(prods, pos_idx, neg_idx)
        if code != istate[0]:
            istate[0] = code
            istate[1] += 1
            istate[2] = t
        inv = 1.0 / (t + 1.0)
        for j in range(d):
            avg_w[j] += (w[j] - avg_w[j]) * inv
        i = idxs[s]
        u = 0.0
        for j in range(d):
            u += w[j] * points[i, j]
        sp = 1.0 if u > 0.0 else slope
        if sp == 0.0:
            continue
        act = u if u > 0.0 else slope * u
        arg = -ylab[i] * act
        if arg > EXP_CLAMP:
            arg = EXP_CLAMP
            overflow = True
        e = sp * np.exp(arg)
        eta = etas[s]
        var += eta * eta * e * e * norms2[i]
        c = eta * ylab[i] * e
        for j in range(d):
            w[j] += c * points[i, j]
        for j in range(n):
            prods[j] += c * gram[i, j]
    return var, overflow


@njit(cache=True, nogil=True, inline="always")
def _net_patterns_step(points, W, U, bits):
    n, d = points.shape
    K = W.shape[1]
    changed = False
    for i in range(n):
        for k in range(K):
            u = 0.0
            for j in range(d):
                u += points[i, j] * W[j, k]
            U[i, k] = u
            b = np.uint8(1) if u > 0.0 else np.uint8(0)
            if b != bits[i, k]:
                changed = True
                bits[i, k] = b
    return changed


@njit(cache=True, nogil=True)
def gd_net_chunk(points, ylab, v, eta, W, avg_W, prevA, t0, nsteps,
                 change_buf):
    """Full-gradient steps on the hidden layer; v stays fixed.

    prevA (n, K) holds the activation bits of the previous step and is
    updated in place; steps whose bits differ are appended to change_buf.
    Returns (n_changes, overflow, stopped_at).
    """
    n, d = points.shape
    K = W.shape[1]
    U = np.empty((n, K))
    acc = np.empty((d, K))
    n_changes = 0
    overflow = False
    for s in range(nsteps):
        t = t0 + s
        if _net_patterns_step(points, W, U, prevA):
            change_buf[n_changes] = t
            n_changes += 1
        for j in range(d):
            for k in range(K):
                acc[j, k] = 0.0
        for i in range(n):
            f = 0.0
            for k in range(K):
                if U[i, k] > 0.0:
                    f += v[k] * U[i, k]
            arg = -ylab[i] * f
            if arg > EXP_CLAMP:
                arg = EXP_CLAMP
                overflow = True
            c = ylab[i] * np.exp(arg)
            for k in range(K):
                if U[i, k] > 0.0:
                    for j in range(d):
                        acc[j, k] += c * points[i, j]
        zero = True
        for j in range(d):
            for k in range(K):
                if acc[j, k] != 0.0:
                    zero = False
                    break
            if not zero:
                break
        if zero:
            return n_changes, overflow, t
        inv = 1.0 / (t + 1.0)
        for j in range(d):
            for k in range(K):
                avg_W[j, k] += (W[j, k] - avg_W[j, k]) * inv
        for k in range(K):
            scale = eta * v[k] / n
            for j in range(d):
                W[j, k] += scale * acc[j, k]
    return n_changes, overflow, -1


@njit(cache=True, nogil=True)
def sgd_net_chunk(points, ylab, v, W, avg_W, prevA, idxs, etas, t0,
                  change_buf):
    """Single-sample steps on the hidden layer with per-step pattern checks."""
    n, d = points.shape
    K = W.shape[1]
    U = np.empty((n, K))
    n_changes = 0
    overflow = False
    for s in range(idxs.shape[0]):
        t = t0 + s
        if _net_patterns_step(points, W, U, prevA):
            change_buf[n_changes] = t
            n_changes += 1
        inv = 1.0 / (t + 1.0)
        for j in range(d):
            for k in range(K):
                avg_W[j, k] += (W[j, k] - avg_W[j, k]) * inv
        i = idxs[s]
        f = 0.0
        for k in range(K):
            if U[i, k] > 0.0:
                f += v[k] * U[i, k]
        arg = -ylab[i] * f
        if arg > EXP_CLAMP:
            arg = EXP_CLAMP
            overflow = True
        c = etas[s] * ylab[i] * np.exp(arg)
        for k in range(K):
            if U[i, k] > 0.0:
                ck = c * v[k]
                for j in range(d):
                    W[j, k] += ck * points[i, j]
    return n_changes, overflow
