"""Pure numpy solver kernels.

Reference implementations of the hot loops. The numba backend mirrors the
same update arithmetic operation for operation; each backend is
deterministic on its own, but the two are not bit-identical to each other
(BLAS call shapes and summation orders differ), so exactness is only ever
pinned within one backend.

Shared kernel contract (see _kernels_numba for the jit twin):
- dense designs only: A is (n*b, d) C-contiguous float64 and component i is
  the contiguous row block A[i*b:(i+1)*b]
- loss codes: 0 squared residual, 1 binary logistic
- component gradients carry the 1/b factor, objectives the 1/(n*b) factor
- thresholding and ball projection happen in place on the iterate
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # piecewise form never exponentiates a positive argument
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _batch_residual(A, y, lo, b, loss, theta):
    z = A[lo:lo + b] @ theta
    if loss == 0:
        return z - y[lo:lo + b]
    return _sigmoid(z) - y[lo:lo + b]


def hard_threshold_inplace(v, k):
    # same selection rule as thresholding.hard_threshold: k-th magnitude
    # via partial selection, ties kept at the lowest indices
    d = v.shape[0]
    if k >= d:
        return
    mag = np.abs(v)
    cut = np.partition(mag, d - k)[d - k]
    keep = mag > cut
    short = k - int(np.count_nonzero(keep))
    if short > 0:
        keep[np.flatnonzero(mag == cut)[:short]] = True
    v[~keep] = 0.0


def project_inplace(v, tau):
    # rescale until the computed norm is within 1 ulp of tau (scale rounding
    # to 1.0 certifies that, so this terminates, almost always in one pass)
    nrm = float(np.sqrt(v @ v))
    while nrm > tau and tau / nrm < 1.0:
        v *= tau / nrm
        nrm = float(np.sqrt(v @ v))


def soft_inplace(v, level):
    np.multiply(np.sign(v), np.maximum(np.abs(v) - level, 0.0), out=v)


def objective(A, y, n, b, loss, theta):
    z = A @ theta
    if loss == 0:
        r = z - y
        return 0.5 * float(r @ r) / (n * b)
    return float(np.sum(np.logaddexp(0.0, z) - y * z)) / (n * b)


def snapshot_stats(A, y, n, b, loss, theta, rs):
    """Objective, per-row residuals (written into rs) and mean gradient."""
    z = A @ theta
    if loss == 0:
        rs[:] = z - y
        obj = 0.5 * float(rs @ rs) / (n * b)
    else:
        obj = float(np.sum(np.logaddexp(0.0, z) - y * z)) / (n * b)
        rs[:] = _sigmoid(z) - y
    mu = (A.T @ rs) / (n * b)
    return obj, mu


def ht_step(theta, g, eta, k, tau):
    """One projected gradient step: threshold(theta - eta * g)."""
    out = theta - eta * g
    hard_threshold_inplace(out, k)
    if tau > 0.0:
        project_inplace(out, tau)
    return out


def sg_chunk(A, y, n, b, loss, theta, idx, eta, k, tau):
    for t in range(idx.shape[0]):
        lo = int(idx[t]) * b
        rloc = _batch_residual(A, y, lo, b, loss, theta)
        g = A[lo:lo + b].T @ rloc
        theta -= eta * (g / b)
        hard_threshold_inplace(theta, k)
        if tau > 0.0:
            project_inplace(theta, tau)


def saga_init(A, y, n, b, loss, theta, table, tsum):
    for i in range(n):
        lo = i * b
        rloc = _batch_residual(A, y, lo, b, loss, theta)
        table[i] = (A[lo:lo + b].T @ rloc) / b
    tsum[:] = table.sum(axis=0)


def saga_chunk(A, y, n, b, loss, theta, table, tsum, idx, step0, eta, k, tau):
    n_tab = table.shape[0]
    for t in range(idx.shape[0]):
        i = int(idx[t])
        lo = i * b
        rloc = _batch_residual(A, y, lo, b, loss, theta)
        g = (A[lo:lo + b].T @ rloc) / b
        old = table[i].copy()
        theta -= eta * (g - (old - tsum / n_tab))
        tsum -= old
        tsum += g
        table[i] = g
        hard_threshold_inplace(theta, k)
        if tau > 0.0:
            project_inplace(theta, tau)
        if (step0 + t + 1) % n_tab == 0:
            # exact refresh keeps the running sum honest over long runs
            tsum[:] = table.sum(axis=0)


def svrg_inner(A, y, n, b, loss, hist, idx, delays, blocks, rs, mu,
               eta, k, tau, soft_level, block_scale):
    """Variance-reduced inner loop writing iterates into hist[1:].

    hist[0] holds the snapshot; step t reads hist[t - delays[t]], updates
    hist[t] into hist[t + 1]. An empty blocks array means full-vector
    updates; otherwise row t lists the coordinates touched at step t.
    soft_level >= 0 switches the proximal step from hard thresholding plus
    optional ball projection to elementwise soft thresholding.
    """
    m = idx.shape[0]
    full = blocks.shape[0] == 0
    for t in range(m):
        lo = int(idx[t]) * b
        src = hist[t - delays[t]]
        rloc = _batch_residual(A, y, lo, b, loss, src)
        out = hist[t + 1]
        np.copyto(out, hist[t])
        if full:
            gi = A[lo:lo + b].T @ rloc
            gs = A[lo:lo + b].T @ rs[lo:lo + b]
            out -= eta * ((gi - gs) / b + mu)
        else:
            cols = blocks[t]
            Ab = A[lo:lo + b]
            gi = Ab[:, cols].T @ rloc
            gs = Ab[:, cols].T @ rs[lo:lo + b]
            out[cols] -= eta * (((gi - gs) / b + mu[cols]) * block_scale)
        if soft_level >= 0.0:
            soft_inplace(out, soft_level)
        else:
            hard_threshold_inplace(out, k)
            if tau > 0.0:
                project_inplace(out, tau)


def _splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def asvrg_worker(A, y, n, b, loss, theta, rs, mu, eta, k, tau, q, steps,
                 seed, perm, counter, stale_out, wid, block_scale):
    """Lock-free worker: read shared theta, update a coordinate block, write back.

    Writes go coordinate by coordinate with no locking, so concurrent
    workers may interleave (torn reads are part of the model). Only the
    sampled block and any coordinates newly zeroed by thresholding are
    written. counter[0] tracks completed updates; the gap between read and
    write gives the realized staleness recorded in stale_out[wid].
    """
    d = theta.shape[0]
    state = int(seed)
    readv = np.empty(d)
    local = np.empty(d)
    for _ in range(steps):
        c0 = int(counter[0])
        readv[:] = theta
        np.copyto(local, readv)
        state, z = _splitmix64(state)
        lo = int(z % n) * b
        rloc = _batch_residual(A, y, lo, b, loss, readv)
        if q < d:
            # partial Fisher-Yates leaves perm a permutation across calls
            for c in range(q):
                state, z = _splitmix64(state)
                j2 = c + int(z % (d - c))
                perm[c], perm[j2] = perm[j2], perm[c]
            cols = perm[:q]
            Ab = A[lo:lo + b]
            gi = Ab[:, cols].T @ rloc
            gs = Ab[:, cols].T @ rs[lo:lo + b]
            local[cols] -= eta * (((gi - gs) / b + mu[cols]) * block_scale)
        else:
            gi = A[lo:lo + b].T @ rloc
            gs = A[lo:lo + b].T @ rs[lo:lo + b]
            local -= eta * ((gi - gs) / b + mu)
        hard_threshold_inplace(local, k)
        if tau > 0.0:
            project_inplace(local, tau)
        if q < d:
            cols = perm[:q]
            theta[cols] = local[cols]
            newly_zero = (local == 0.0) & (readv != 0.0)
            theta[newly_zero] = 0.0
        else:
            theta[:] = local
        c1 = int(counter[0])
        counter[0] = c1 + 1
        st = c1 - c0
        if st > stale_out[wid]:
            stale_out[wid] = st
