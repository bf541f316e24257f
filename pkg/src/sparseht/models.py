"""Statistical estimation problems exposed as finite-sum objectives.

Every model presents F(theta) = (1/n) sum_i f_i(theta) over n mini-batch
components of b samples each, with contiguous row blocks: component i owns
rows [i*b, (i+1)*b). The classes here supply component values/gradients to
the solvers; dense-design vector models additionally expose ``design``,
``responses`` and ``_loss_code`` so the solvers can hand whole runs to the
compiled kernels.

Matrix-valued parameters (low-rank sensing) are flattened column-major
wherever a flat view is needed; with that convention the sensing model is
exactly least squares on the flattened measurement matrices, which the
tests exploit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from sparseht.datagen import Additive, CorruptionSpec, Missing, Multiplicative
from sparseht.objective import Problem


# ---------------------------------------------------------------------------
# plain data containers


@dataclass
class LinearRegressionData:
    design: np.ndarray
    responses: np.ndarray
    n_batches: int
    batch_size: int
    truth: Optional[np.ndarray] = None


@dataclass
class GlmData:
    design: np.ndarray
    responses: np.ndarray
    n_batches: int
    batch_size: int
    radius: Optional[float] = None
    truth: Optional[np.ndarray] = None


@dataclass
class LowRankData:
    measurements: np.ndarray  # (nb, d, p)
    responses: np.ndarray
    n_batches: int
    batch_size: int
    truth: Optional[np.ndarray] = None


def _check_batching(rows: int, n: int, b: int) -> None:
    if n < 1 or b < 1:
        raise ValueError("batch counts must be positive")
    if n * b != rows:
        raise ValueError(f"n_batches * batch_size = {n * b} but design has {rows} rows")


# ---------------------------------------------------------------------------
# least squares


class LeastSquaresProblem(Problem):
    """Mini-batched least squares: f_i = 1/(2b) ||y_i - A_i theta||^2."""

    _loss_code = 0

    def __init__(self, design, responses, n_batches, batch_size,
                 truth=None, l2_radius=None):
        design = np.ascontiguousarray(design, dtype=np.float64)
        responses = np.ascontiguousarray(responses, dtype=np.float64)
        if design.ndim != 2:
            raise ValueError("design must be a 2-d array")
        _check_batching(design.shape[0], n_batches, batch_size)
        if responses.shape != (design.shape[0],):
            raise ValueError("responses length must match the design")
        super().__init__(n_batches, batch_size, (design.shape[1],),
                         truth=truth, l2_radius=l2_radius)
        self.design = design
        self.responses = responses

    def _rows(self, i):
        lo = i * self.batch_size
        return slice(lo, lo + self.batch_size)

    def _component_value(self, i, theta):
        rows = self._rows(i)
        r = self.design[rows] @ theta - self.responses[rows]
        return 0.5 * (r @ r) / self.batch_size

    def _component_gradient(self, i, theta):
        rows = self._rows(i)
        r = self.design[rows] @ theta - self.responses[rows]
        return (self.design[rows].T @ r) / self.batch_size

    def value(self, theta):
        theta = self._check_theta(theta)
        with np.errstate(over="ignore", invalid="ignore"):
            r = self.design @ theta - self.responses
            v = 0.5 * (r @ r) / (self.n_components * self.batch_size)
        if not np.isfinite(v):
            return super().value(theta)  # re-run batchwise to name the component
        return float(v)

    def gradient(self, theta):
        theta = self._check_theta(theta)
        with np.errstate(over="ignore", invalid="ignore"):
            r = self.design @ theta - self.responses
            g = self.design.T @ r
            g /= self.n_components * self.batch_size
        if not np.all(np.isfinite(g)):
            return super().gradient(theta)
        return g

    def hessian_submatrix(self, cols, component=None):
        """Hessian restricted to the given coordinates (it is constant)."""
        cols = np.asarray(cols, dtype=np.intp)
        if component is None:
            block = self.design[:, cols]
            return (block.T @ block) / (self.n_components * self.batch_size)
        block = self.design[self._rows(component)][:, cols]
        return (block.T @ block) / self.batch_size


# ---------------------------------------------------------------------------
# corrupted-design quadratic


class QuadraticProblem(Problem):
    """Componentwise quadratic F = (1/n) sum_i [ 1/2 th^T G_i th - b_i^T th ].

    G_i need not be positive semidefinite: the corrupted-design estimators
    below subtract bias terms that can push eigenvalues negative when the
    sample count is small, and the solvers are expected to cope via the
    sparsity constraint.
    """

    def __init__(self, gammas, linears, batch_size, truth=None, l2_radius=None):
        gammas = np.ascontiguousarray(gammas, dtype=np.float64)
        linears = np.ascontiguousarray(linears, dtype=np.float64)
        if gammas.ndim != 3 or gammas.shape[1] != gammas.shape[2]:
            raise ValueError("gammas must be a stack of square matrices")
        n, d, _ = gammas.shape
        if linears.shape != (n, d):
            raise ValueError("linear terms must be shaped (n, d)")
        for i in range(n):
            if not np.allclose(gammas[i], gammas[i].T, atol=1e-10):
                raise ValueError(f"component {i} quadratic term is not symmetric")
        super().__init__(n, batch_size, (d,), truth=truth, l2_radius=l2_radius)
        self.gammas = gammas
        self.linears = linears
        self.gamma_hat = gammas.mean(axis=0)
        self.b_hat = linears.mean(axis=0)

    def _component_value(self, i, theta):
        return 0.5 * (theta @ (self.gammas[i] @ theta)) - self.linears[i] @ theta

    def _component_gradient(self, i, theta):
        return self.gammas[i] @ theta - self.linears[i]

    def value(self, theta):
        theta = self._check_theta(theta)
        v = 0.5 * (theta @ (self.gamma_hat @ theta)) - self.b_hat @ theta
        if not np.isfinite(v):
            return super().value(theta)
        return float(v)

    def gradient(self, theta):
        theta = self._check_theta(theta)
        g = self.gamma_hat @ theta - self.b_hat
        if not np.all(np.isfinite(g)):
            return super().gradient(theta)
        return g

    def hessian_submatrix(self, cols, component=None):
        cols = np.asarray(cols, dtype=np.intp)
        mat = self.gamma_hat if component is None else self.gammas[component]
        return mat[np.ix_(cols, cols)]


def make_corrupted_quadratic(
    corrupted_design: np.ndarray,
    responses: np.ndarray,
    spec: CorruptionSpec,
    n_batches: int,
    truth: Optional[np.ndarray] = None,
) -> QuadraticProblem:
    """Bias-corrected quadratic surrogate built from a corrupted design Z.

    Each component's (G_i, b_i) is formed from its own row block so that
    the mean over components recovers the whole-sample estimator. The
    corrections depend on the corruption type:

    - missing data (rate rho): rescale Zt = Z / (1 - rho), then
      G_i = Zt_i^T Zt_i / b - rho * diag(Zt_i^T Zt_i / b) and
      b_i = Zt_i^T y_i / b;
    - additive noise with covariance Sigma_W: G_i = Z_i^T Z_i / b - Sigma_W
      and b_i = Z_i^T y_i / b;
    - multiplicative with moments (m1, M2): divide Z_i^T Z_i / b entrywise
      by M2 and Z_i^T y_i / b entrywise by m1.
    """
    z = np.ascontiguousarray(corrupted_design, dtype=np.float64)
    y = np.ascontiguousarray(responses, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError("corrupted design must be a 2-d array")
    nb, d = z.shape
    if y.shape != (nb,):
        raise ValueError("responses length must match the design")
    if n_batches < 1 or nb % n_batches != 0:
        raise ValueError("n_batches must divide the sample count")
    b = nb // n_batches

    if isinstance(spec, Missing):
        scaled = z / (1.0 - spec.rho)
        sigma_w = None
        m1 = m2 = None
    elif isinstance(spec, Additive):
        scaled = z
        sigma_w = spec.covariance(d)
        m1 = m2 = None
    elif isinstance(spec, Multiplicative):
        scaled = z
        sigma_w = None
        m1, m2 = spec.moments(d)
    else:
        raise TypeError(f"unknown corruption spec {type(spec).__name__}")

    gammas = np.empty((n_batches, d, d))
    linears = np.empty((n_batches, d))
    for i in range(n_batches):
        rows = slice(i * b, (i + 1) * b)
        zi = scaled[rows]
        gram = (zi.T @ zi) / b
        lin = (zi.T @ y[rows]) / b
        if isinstance(spec, Missing):
            gram = gram - spec.rho * np.diag(np.diag(gram))
        elif isinstance(spec, Additive):
            gram = gram - sigma_w
        else:
            gram = gram / m2
            lin = lin / m1
        gammas[i] = gram
        linears[i] = lin
    return QuadraticProblem(gammas, linears, b, truth=truth)


# ---------------------------------------------------------------------------
# logistic regression


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class LogisticProblem(Problem):
    """Mini-batched logistic loss with 0/1 labels.

    f_i = (1/b) sum_{j in batch i} [ log(1 + exp(a_j^T theta)) - y_j a_j^T theta ]

    evaluated through log1p/exp with the branch split at zero so margins of
    either sign stay finite (softplus(z) = z + log1p(exp(-z)) for z >= 0).
    The problem carries an l2 radius; solvers project onto that ball, which
    is what keeps the loss strongly convex on the iterate set.
    """

    _loss_code = 1

    def __init__(self, design, responses, n_batches, batch_size,
                 radius=None, truth=None):
        design = np.ascontiguousarray(design, dtype=np.float64)
        responses = np.ascontiguousarray(responses, dtype=np.float64)
        if design.ndim != 2:
            raise ValueError("design must be a 2-d array")
        _check_batching(design.shape[0], n_batches, batch_size)
        if responses.shape != (design.shape[0],):
            raise ValueError("responses length must match the design")
        if not np.all(np.isin(responses, (0.0, 1.0))):
            raise ValueError("logistic labels must be 0 or 1")
        if radius is not None and radius <= 0:
            raise ValueError("l2 radius must be positive")
        super().__init__(n_batches, batch_size, (design.shape[1],),
                         truth=truth, l2_radius=radius)
        self.design = design
        self.responses = responses

    def _rows(self, i):
        lo = i * self.batch_size
        return slice(lo, lo + self.batch_size)

    def _component_value(self, i, theta):
        rows = self._rows(i)
        z = self.design[rows] @ theta
        return float(np.sum(np.logaddexp(0.0, z) - self.responses[rows] * z)) / self.batch_size

    def _component_gradient(self, i, theta):
        rows = self._rows(i)
        z = self.design[rows] @ theta
        return (self.design[rows].T @ (_sigmoid(z) - self.responses[rows])) / self.batch_size

    def value(self, theta):
        theta = self._check_theta(theta)
        z = self.design @ theta
        v = np.sum(np.logaddexp(0.0, z) - self.responses * z)
        v /= self.n_components * self.batch_size
        if not np.isfinite(v):
            return super().value(theta)
        return float(v)

    def gradient(self, theta):
        theta = self._check_theta(theta)
        z = self.design @ theta
        g = self.design.T @ (_sigmoid(z) - self.responses)
        g /= self.n_components * self.batch_size
        if not np.all(np.isfinite(g)):
            return super().gradient(theta)
        return g


# ---------------------------------------------------------------------------
# low-rank matrix sensing


class LowRankProblem(Problem):
    """Trace-regression sensing: f_i = 1/(2b) sum_j (y_j - <A_j, Theta>)^2.

    Parameters are (d, p) matrices; <A, Theta> is the trace inner product.
    Internally the measurements are flattened column-major so each
    component gradient is a flat least-squares gradient reshaped back. The
    column-major convention is fixed: flattening Theta with order="F" turns
    this problem into LeastSquaresProblem on the flattened measurements.
    """

    def __init__(self, measurements, responses, n_batches, batch_size, truth=None):
        measurements = np.asarray(measurements, dtype=np.float64)
        responses = np.ascontiguousarray(responses, dtype=np.float64)
        if measurements.ndim != 3:
            raise ValueError("measurements must be a (nb, d, p) array")
        nb, d, p = measurements.shape
        _check_batching(nb, n_batches, batch_size)
        if responses.shape != (nb,):
            raise ValueError("responses length must match the measurements")
        super().__init__(n_batches, batch_size, (d, p), truth=truth)
        self.measurements = measurements
        # rows are vec(A_j) in column-major order
        self.flat_design = np.ascontiguousarray(
            measurements.transpose(0, 2, 1).reshape(nb, d * p)
        )
        self.responses = responses

    def _flat(self, theta):
        return theta.ravel(order="F")

    def _rows(self, i):
        lo = i * self.batch_size
        return slice(lo, lo + self.batch_size)

    def _component_value(self, i, theta):
        rows = self._rows(i)
        r = self.flat_design[rows] @ self._flat(theta) - self.responses[rows]
        return 0.5 * (r @ r) / self.batch_size

    def _component_gradient(self, i, theta):
        rows = self._rows(i)
        r = self.flat_design[rows] @ self._flat(theta) - self.responses[rows]
        flat = (self.flat_design[rows].T @ r) / self.batch_size
        return flat.reshape(self.shape, order="F")

    def value(self, theta):
        theta = self._check_theta(theta)
        r = self.flat_design @ self._flat(theta) - self.responses
        v = 0.5 * (r @ r) / (self.n_components * self.batch_size)
        if not np.isfinite(v):
            return super().value(theta)
        return float(v)

    def gradient(self, theta):
        theta = self._check_theta(theta)
        r = self.flat_design @ self._flat(theta) - self.responses
        flat = self.flat_design.T @ r
        flat /= self.n_components * self.batch_size
        if not np.all(np.isfinite(flat)):
            return super().gradient(theta)
        return flat.reshape(self.shape, order="F")


# ---------------------------------------------------------------------------
# builders


def make_linear_regression(data: LinearRegressionData,
                           l2_radius: Optional[float] = None) -> LeastSquaresProblem:
    return LeastSquaresProblem(
        data.design, data.responses, data.n_batches, data.batch_size,
        truth=data.truth, l2_radius=l2_radius,
    )


def make_logistic(data: GlmData) -> LogisticProblem:
    return LogisticProblem(
        data.design, data.responses, data.n_batches, data.batch_size,
        radius=data.radius, truth=data.truth,
    )


def make_lowrank(data: LowRankData) -> LowRankProblem:
    return LowRankProblem(
        data.measurements, data.responses, data.n_batches, data.batch_size,
        truth=data.truth,
    )
