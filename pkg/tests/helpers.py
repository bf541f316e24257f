"""Independent oracles used across the test suite.

Everything here recomputes a quantity by a route the package does not
take (full sorts, dense SVDs, exhaustive enumeration, finite differences,
extended precision), so agreement is evidence rather than tautology.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def sort_hard_threshold(v: np.ndarray, k: int) -> np.ndarray:
    """Reference H_k via a full stable sort on (-|v|, index)."""
    v = np.asarray(v, dtype=float)
    d = v.shape[0]
    if k >= d:
        return v.copy()
    order = sorted(range(d), key=lambda i: (-abs(v[i]), i))
    out = np.zeros_like(v)
    keep = order[:k]
    out[keep] = v[keep]
    return out


def best_support_mass(v: np.ndarray, k: int) -> float:
    """max over all k-supports of sum of v_i^2, by exhaustive enumeration."""
    v = np.asarray(v, dtype=float)
    d = v.shape[0]
    if k >= d:
        return float(v @ v)
    return max(
        float(sum(v[i] * v[i] for i in sub))
        for sub in itertools.combinations(range(d), k)
    )


def svd_rank_k(M: np.ndarray, k: int) -> np.ndarray:
    """Reference best rank-k approximation from a full SVD."""
    u, s, vt = np.linalg.svd(M, full_matrices=False)
    r = min(k, s.shape[0])
    return (u[:, :r] * s[:r]) @ vt[:r]


def fd_gradient(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences, coordinate by coordinate."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
        it.iternext()
    return g


def mp_logistic_loss(margins, labels, dps: int = 60):
    """log(1+exp(z)) - y*z averaged, in extended precision."""
    import mpmath

    with mpmath.workdps(dps):
        total = mpmath.mpf(0)
        for z, y in zip(margins, labels):
            zm = mpmath.mpf(float(z))
            total += mpmath.log(1 + mpmath.exp(zm)) - mpmath.mpf(float(y)) * zm
        return float(total / len(margins))


def mp_sigmoid(z, dps: int = 60) -> float:
    import mpmath

    with mpmath.workdps(dps):
        return float(1 / (1 + mpmath.exp(-mpmath.mpf(float(z)))))


def write_libsvm(path, labels, design, skip_zeros: bool = True) -> None:
    """Plain-text libsvm writer (1-based indices) for round-trip tests."""
    lines = []
    for y, row in zip(labels, design):
        parts = [repr(float(y))]
        for j, val in enumerate(row):
            if skip_zeros and val == 0.0:
                continue
            parts.append(f"{j + 1}:{float(val)!r}")
        lines.append(" ".join(parts))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def expansion_bound(k: int, k_star: int) -> float:
    """1 + 2*sqrt(k*)/sqrt(k - k*), the thresholding expansion constant."""
    return 1.0 + 2.0 * math.sqrt(k_star) / math.sqrt(k - k_star)


def mean_subset_mass_ratio(v: np.ndarray, q: int) -> float:
    """E ||v_e||^2 / ||v||^2 over all q-subsets e, by exact enumeration."""
    v = np.asarray(v, dtype=float)
    d = v.shape[0]
    total = float(v @ v)
    if total == 0.0:
        return 0.0
    subs = list(itertools.combinations(range(d), q))
    acc = sum(float(sum(v[i] * v[i] for i in sub)) for sub in subs)
    return acc / (len(subs) * total)
