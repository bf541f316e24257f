"""Numba solver kernels.

Jit twin of _kernels_numpy with the identical update arithmetic; see that
module for the shared kernel contract. fastmath stays off everywhere so the
compiler cannot reassociate or fuse the floating point operations that the
exact-cancellation tests rely on. Kernels avoid python objects and release
the GIL, which is what lets the lock-free solver run real threads.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)


@njit(**_JIT)
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@njit(**_JIT)
def _softplus(z):
    # log(1 + e^z) without overflow on either tail
    if z > 0.0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


@njit(**_JIT)
def _batch_residual(A, y, lo, b, loss, theta, rloc):
    z = A[lo:lo + b] @ theta
    for r in range(b):
        if loss == 0:
            rloc[r] = z[r] - y[lo + r]
        else:
            rloc[r] = _sigmoid(z[r]) - y[lo + r]


@njit(**_JIT)
def hard_threshold_inplace(v, k):
    # same selection rule as thresholding.hard_threshold: k-th magnitude
    # via partial selection, ties kept at the lowest indices
    d = v.shape[0]
    if k >= d:
        return
    mag = np.abs(v)
    cut = np.partition(mag, d - k)[d - k]
    nstrict = 0
    for j in range(d):
        if mag[j] > cut:
            nstrict += 1
    short = k - nstrict
    kept = 0
    for j in range(d):
        if mag[j] > cut:
            continue
        if mag[j] == cut and kept < short:
            kept += 1
            continue
        v[j] = 0.0


@njit(**_JIT)
def project_inplace(v, tau):
    # rescale until the computed norm is within 1 ulp of tau (scale rounding
    # to 1.0 certifies that, so this terminates, almost always in one pass)
    while True:
        acc = 0.0
        for j in range(v.shape[0]):
            acc += v[j] * v[j]
        nrm = math.sqrt(acc)
        if nrm <= tau:
            break
        s = tau / nrm
        if s >= 1.0:
            break
        for j in range(v.shape[0]):
            v[j] *= s


@njit(**_JIT)
def soft_inplace(v, level):
    for j in range(v.shape[0]):
        a = abs(v[j]) - level
        if a <= 0.0:
            v[j] = 0.0
        elif v[j] < 0.0:
            v[j] = -a
        else:
            v[j] = a


@njit(**_JIT)
def objective(A, y, n, b, loss, theta):
    acc = 0.0
    for i in range(n):
        lo = i * b
        z = A[lo:lo + b] @ theta
        for r in range(b):
            zz = z[r]
            if loss == 0:
                res = zz - y[lo + r]
                acc += 0.5 * res * res
            else:
                acc += _softplus(zz) - y[lo + r] * zz
    return acc / (n * b)


@njit(**_JIT)
def snapshot_stats(A, y, n, b, loss, theta, rs):
    """Objective, per-row residuals (written into rs) and mean gradient."""
    d = A.shape[1]
    acc = 0.0
    for i in range(n):
        lo = i * b
        z = A[lo:lo + b] @ theta
        for r in range(b):
            zz = z[r]
            if loss == 0:
                res = zz - y[lo + r]
                rs[lo + r] = res
                acc += 0.5 * res * res
            else:
                acc += _softplus(zz) - y[lo + r] * zz
                rs[lo + r] = _sigmoid(zz) - y[lo + r]
    mu = np.zeros(d)
    for i in range(n):
        lo = i * b
        g = A[lo:lo + b].T @ rs[lo:lo + b]
        for j in range(d):
            mu[j] += g[j]
    nb = n * b
    for j in range(d):
        mu[j] /= nb
    return acc / (n * b), mu


@njit(**_JIT)
def ht_step(theta, g, eta, k, tau):
    """One projected gradient step: threshold(theta - eta * g)."""
    d = theta.shape[0]
    out = np.empty(d)
    for j in range(d):
        out[j] = theta[j] - eta * g[j]
    hard_threshold_inplace(out, k)
    if tau > 0.0:
        project_inplace(out, tau)
    return out


@njit(**_JIT)
def sg_chunk(A, y, n, b, loss, theta, idx, eta, k, tau):
    rloc = np.empty(b)
    for t in range(idx.shape[0]):
        lo = idx[t] * b
        _batch_residual(A, y, lo, b, loss, theta, rloc)
        g = A[lo:lo + b].T @ rloc
        for j in range(theta.shape[0]):
            theta[j] -= eta * (g[j] / b)
        hard_threshold_inplace(theta, k)
        if tau > 0.0:
            project_inplace(theta, tau)


@njit(**_JIT)
def saga_init(A, y, n, b, loss, theta, table, tsum):
    d = theta.shape[0]
    rloc = np.empty(b)
    for i in range(n):
        lo = i * b
        _batch_residual(A, y, lo, b, loss, theta, rloc)
        g = A[lo:lo + b].T @ rloc
        for j in range(d):
            table[i, j] = g[j] / b
    for j in range(d):
        s = 0.0
        for i in range(n):
            s += table[i, j]
        tsum[j] = s


@njit(**_JIT)
def saga_chunk(A, y, n, b, loss, theta, table, tsum, idx, step0, eta, k, tau):
    n_tab = table.shape[0]
    d = theta.shape[0]
    rloc = np.empty(b)
    for t in range(idx.shape[0]):
        i = idx[t]
        lo = i * b
        _batch_residual(A, y, lo, b, loss, theta, rloc)
        gnew = A[lo:lo + b].T @ rloc
        for j in range(d):
            gj = gnew[j] / b
            old = table[i, j]
            theta[j] -= eta * (gj - (old - tsum[j] / n_tab))
            tsum[j] = (tsum[j] - old) + gj
            table[i, j] = gj
        hard_threshold_inplace(theta, k)
        if tau > 0.0:
            project_inplace(theta, tau)
        if (step0 + t + 1) % n_tab == 0:
            # exact refresh keeps the running sum honest over long runs
            for j in range(d):
                s = 0.0
                for ii in range(n_tab):
                    s += table[ii, j]
                tsum[j] = s


@njit(**_JIT)
def svrg_inner(A, y, n, b, loss, hist, idx, delays, blocks, rs, mu,
               eta, k, tau, soft_level, block_scale):
    """Variance-reduced inner loop writing iterates into hist[1:].

    hist[0] holds the snapshot; step t reads hist[t - delays[t]], updates
    hist[t] into hist[t + 1]. An empty blocks array means full-vector
    updates; otherwise row t lists the coordinates touched at step t.
    soft_level >= 0 switches the proximal step from hard thresholding plus
    optional ball projection to elementwise soft thresholding.
    """
    d = A.shape[1]
    m = idx.shape[0]
    full = blocks.shape[0] == 0
    q = blocks.shape[1]
    rloc = np.empty(b)
    for t in range(m):
        lo = idx[t] * b
        src = hist[t - delays[t]]
        _batch_residual(A, y, lo, b, loss, src, rloc)
        out = hist[t + 1]
        if full:
            gi = A[lo:lo + b].T @ rloc
            gs = A[lo:lo + b].T @ rs[lo:lo + b]
            for j in range(d):
                g = (gi[j] - gs[j]) / b + mu[j]
                out[j] = hist[t, j] - eta * g
        else:
            for j in range(d):
                out[j] = hist[t, j]
            for c in range(q):
                j = blocks[t, c]
                gi = 0.0
                gs = 0.0
                for r in range(b):
                    gi += A[lo + r, j] * rloc[r]
                    gs += A[lo + r, j] * rs[lo + r]
                g = ((gi - gs) / b + mu[j]) * block_scale
                out[j] = out[j] - eta * g
        if soft_level >= 0.0:
            soft_inplace(out, soft_level)
        else:
            hard_threshold_inplace(out, k)
            if tau > 0.0:
                project_inplace(out, tau)


@njit(**_JIT)
def _sm64(state):
    state = state + np.uint64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return state, z ^ (z >> np.uint64(31))


@njit(**_JIT)
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
    state = seed
    un = np.uint64(n)
    readv = np.empty(d)
    local = np.empty(d)
    rloc = np.empty(b)
    for _ in range(steps):
        c0 = counter[0]
        for j in range(d):
            readv[j] = theta[j]
            local[j] = readv[j]
        state, z = _sm64(state)
        lo = np.int64(z % un) * b
        _batch_residual(A, y, lo, b, loss, readv, rloc)
        if q < d:
            # partial Fisher-Yates leaves perm a permutation across calls
            for c in range(q):
                state, z = _sm64(state)
                j2 = c + np.int64(z % np.uint64(d - c))
                tmp = perm[c]
                perm[c] = perm[j2]
                perm[j2] = tmp
            for c in range(q):
                j = perm[c]
                gi = 0.0
                gs = 0.0
                for r in range(b):
                    gi += A[lo + r, j] * rloc[r]
                    gs += A[lo + r, j] * rs[lo + r]
                g = ((gi - gs) / b + mu[j]) * block_scale
                local[j] -= eta * g
        else:
            gi = A[lo:lo + b].T @ rloc
            gs = A[lo:lo + b].T @ rs[lo:lo + b]
            for j in range(d):
                g = (gi[j] - gs[j]) / b + mu[j]
                local[j] -= eta * g
        hard_threshold_inplace(local, k)
        if tau > 0.0:
            project_inplace(local, tau)
        if q < d:
            for c in range(q):
                j = perm[c]
                theta[j] = local[j]
            for j in range(d):
                if local[j] == 0.0 and readv[j] != 0.0:
                    theta[j] = 0.0
        else:
            for j in range(d):
                theta[j] = local[j]
        c1 = counter[0]
        counter[0] = c1 + 1
        st = c1 - c0
        if st > stale_out[wid]:
            stale_out[wid] = st
