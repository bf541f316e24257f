"""Projection and thresholding operators.

Four operators cover every constraint set used by the solvers: hard
thresholding ``H_k`` for cardinality constraints, the l2-ball projection
``Pi_tau``, singular value thresholding ``R_k`` for rank constraints, and
elementwise soft thresholding for the l1 baseline.

All operators are pure functions over float64 arrays and never modify their
inputs, so they are safe for concurrent use.
"""

from __future__ import annotations

import numpy as np


def hard_threshold(v: np.ndarray, k: int) -> np.ndarray:
    """Keep the k largest-magnitude entries of v and zero the rest.

    Among equal magnitudes the lower index wins, so the output is
    reproducible regardless of selection internals. Kept entries are copied
    bit-exactly. Average cost is O(d) via partial selection of the k-th
    magnitude rather than a full sort.
    """
    v = np.asarray(v)
    if v.ndim != 1:
        raise ValueError(f"hard_threshold expects a vector, got shape {v.shape}")
    if k < 1:
        raise ValueError("sparsity k must be >= 1")
    d = v.shape[0]
    if k >= d:
        return v.copy()
    mag = np.abs(v)
    # magnitude of the k-th largest entry; strictly larger entries always stay
    cut = np.partition(mag, d - k)[d - k]
    keep = mag > cut
    short = k - int(np.count_nonzero(keep))
    if short > 0:
        keep[np.flatnonzero(mag == cut)[:short]] = True
    out = np.zeros_like(v)
    out[keep] = v[keep]
    return out


def l2_ball_project(v: np.ndarray, tau: float) -> np.ndarray:
    """Project v onto the l2 ball of radius tau."""
    if tau <= 0:
        raise ValueError("radius tau must be > 0")
    v = np.asarray(v)
    nrm = np.linalg.norm(v)
    if nrm <= tau:
        return v.copy()
    out = v * (tau / nrm)
    # one rescale can land a couple ulp outside the ball; renormalize until
    # the computed norm is within 1 ulp of tau (the scale rounding to 1.0
    # certifies exactly that, so the loop terminates)
    nrm = np.linalg.norm(out)
    while nrm > tau and tau / nrm < 1.0:
        out *= tau / nrm
        nrm = np.linalg.norm(out)
    return out


def svt(M: np.ndarray, k: int) -> np.ndarray:
    """Best rank-k approximation of M: keep the top k singular triples.

    Works for both orientations (d < p and d > p). When several singular
    values tie at the k-th position the first k triples of the
    decomposition's output order are kept, so on that measure-zero input set
    the result is decomposition-dependent.
    """
    M = np.asarray(M)
    if M.ndim != 2:
        raise ValueError(f"svt expects a matrix, got shape {M.shape}")
    if k < 1:
        raise ValueError("rank k must be >= 1")
    if k >= min(M.shape):
        return M.copy()
    try:
        u, s, vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(
            "svd did not converge: shape={}, fro_norm={:.6g}, max_abs={:.6g}".format(
                M.shape, float(np.linalg.norm(M)), float(np.max(np.abs(M)))
            )
        ) from exc
    return (u[:, :k] * s[:k]) @ vt[:k]


def soft_threshold(v: np.ndarray, level: float) -> np.ndarray:
    """Elementwise sign(v) * max(|v| - level, 0)."""
    if level < 0:
        raise ValueError("soft threshold level must be >= 0")
    v = np.asarray(v)
    return np.sign(v) * np.maximum(np.abs(v) - level, 0.0)
