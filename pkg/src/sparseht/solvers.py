"""Serial sparse solvers: full, stochastic, and variance-reduced gradient
methods with hard thresholding, plus the l1 proximal baseline.

All solvers share one cost model. Evaluating a component gradient costs
1/n of an effective pass; a full gradient costs 1. Checkpoint objectives
that are not byproducts of counted gradient work (trace endpoints, the
periodic SG/SAGA checkpoints) are objective-only evaluations and are not
charged. The trace's final_passes therefore always equals
full_evals + component_evals / n, which the tests audit.

Randomness: sampled component indices for round (or chunk) r come from the
Philox stream (config.seed, r), so traces are bit-reproducible and rounds
are independent. Block sampling in the simulated asynchronous mode draws
from a disjoint stream range (see rng module).

Problems whose data is a dense design matrix (least squares, logistic) run
entirely inside the compiled kernels selected by the backend module; other
problems (quadratic surrogates, matrix sensing) take a generic python path
with identical update arithmetic. Matrix-shaped parameters are thresholded
by singular value truncation, so "sparsity k" reads as "rank k" there.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from sparseht.backend import kernels
from sparseht.objective import Problem
from sparseht.rng import BLOCK_STREAM_BASE, philox_rng
from sparseht.thresholding import hard_threshold, l2_ball_project, soft_threshold, svt

DIVERGENCE_FACTOR = 1e12

_SNAPSHOT_RULES = ("last_iterate", "random_iterate")
_SAMPLING = ("with_replacement", "without_replacement")


class DivergenceError(RuntimeError):
    """Objective blew past the divergence guard (or became non-finite)."""

    def __init__(self, solver, step_size, passes, objective, checkpoints):
        super().__init__(
            f"{solver} diverged at {passes:g} passes with step size "
            f"{step_size:g}: objective {objective:g}"
        )
        self.solver = solver
        self.step_size = step_size
        self.passes = passes
        self.objective = objective
        self.checkpoints = checkpoints


@dataclass(frozen=True)
class Checkpoint:
    passes: float
    objective: float
    relative_objective: float
    estimation_error: Optional[float]


@dataclass
class IterateTrace:
    solver: str
    checkpoints: List[Checkpoint]
    final_parameter: np.ndarray
    final_passes: float
    full_evals: int
    component_evals: int
    stop_reason: str
    wall_time: float


@dataclass(frozen=True)
class SolverConfig:
    """Knobs shared by every solver; irrelevant fields are ignored.

    Budgets: at least one of outer_budget (outer rounds for SVRG-type
    solvers, iterations for the full-gradient method, checkpoint chunks
    for SG/SAGA) and pass_budget (effective passes) must be set; whichever
    binds first stops the run. target_objective, when set, stops the run
    at the first checkpoint whose relative objective reaches it.
    """

    step_size: float
    sparsity: int
    inner_length: Optional[int] = None
    outer_budget: Optional[int] = None
    pass_budget: Optional[float] = None
    snapshot_rule: str = "last_iterate"
    seed: int = 0
    l2_radius: Optional[float] = None
    l1_weight: Optional[float] = None
    trace_stride: float = 1.0
    sampling: str = "with_replacement"
    target_objective: Optional[float] = None

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if int(self.sparsity) != self.sparsity or self.sparsity < 1:
            raise ValueError("sparsity must be a positive integer")
        if self.inner_length is not None and self.inner_length < 1:
            raise ValueError("inner_length must be a positive integer")
        if self.outer_budget is not None and self.outer_budget < 1:
            raise ValueError("outer_budget must be a positive integer")
        if self.pass_budget is not None and not self.pass_budget > 0:
            raise ValueError("pass_budget must be positive")
        if self.outer_budget is None and self.pass_budget is None:
            raise ValueError("set outer_budget or pass_budget (or both)")
        if self.snapshot_rule not in _SNAPSHOT_RULES:
            raise ValueError(f"snapshot_rule must be one of {_SNAPSHOT_RULES}")
        if self.l2_radius is not None and not self.l2_radius > 0:
            raise ValueError("l2_radius must be positive")
        if self.l1_weight is not None and self.l1_weight < 0:
            raise ValueError("l1_weight must be nonnegative")
        if not self.trace_stride > 0:
            raise ValueError("trace_stride must be positive")
        if self.sampling not in _SAMPLING:
            raise ValueError(f"sampling must be one of {_SAMPLING}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 bits")


class SagaTable:
    """Per-component stored gradients plus their running mean.

    The mean is maintained incrementally (subtract the replaced gradient,
    add the new one) and recomputed exactly from the table every n updates
    so drift cannot accumulate on long runs.
    """

    def __init__(self, gradients: np.ndarray):
        self.gradients = gradients
        self._sum = gradients.sum(axis=0)
        self._updates = 0

    @classmethod
    def initialize(cls, problem: Problem, theta: np.ndarray) -> "SagaTable":
        grads = np.stack(
            [problem.component_gradient(i, theta) for i in range(problem.n_components)]
        )
        return cls(grads)

    @property
    def mean(self) -> np.ndarray:
        return self._sum / self.gradients.shape[0]

    def update(self, i: int, grad: np.ndarray) -> np.ndarray:
        """Swap in a new gradient for component i; returns the old one."""
        old = self.gradients[i].copy()
        self.gradients[i] = grad
        self._sum -= old
        self._sum += grad
        self._updates += 1
        if self._updates % self.gradients.shape[0] == 0:
            self._sum = self.gradients.sum(axis=0)
        return old


# ---------------------------------------------------------------------------
# shared solver plumbing


def _effective_radius(problem: Problem, config: SolverConfig) -> float:
    """Ball radius actually enforced: config overrides the problem's own."""
    if config.l2_radius is not None:
        return float(config.l2_radius)
    if problem.l2_radius is not None:
        return float(problem.l2_radius)
    return 0.0


def _check_theta0(problem: Problem, theta0) -> np.ndarray:
    if theta0 is None:
        return np.zeros(problem.shape)
    theta0 = np.array(theta0, dtype=np.float64)
    if theta0.shape != problem.shape:
        raise ValueError(f"theta0 shape {theta0.shape} != problem shape {problem.shape}")
    return theta0


def _fast_parts(problem: Problem):
    """(design, responses, loss_code) when the compiled kernels apply."""
    code = getattr(problem, "_loss_code", None)
    if code is None or len(problem.shape) != 1:
        return None
    return problem.design, problem.responses, int(code)


class _Recorder:
    """Builds the checkpoint list; owns normalization and the divergence guard."""

    def __init__(self, problem: Problem, solver: str, config: SolverConfig,
                 penalty: Optional[Callable] = None):
        self.problem = problem
        self.solver = solver
        self.config = config
        self.penalty = penalty  # adds e.g. the l1 term to checkpoint objectives
        self.rows: List[Checkpoint] = []
        self.f0: Optional[float] = None
        self._guard: Optional[float] = None

    def record(self, passes: float, objective: float, theta: np.ndarray) -> bool:
        """Append a checkpoint; True when the objective target is reached."""
        if self.penalty is not None:
            objective = objective + self.penalty(theta)
        if self.f0 is None:
            self.f0 = objective
            # a zero initial objective leaves nothing to normalize by
            self._guard = DIVERGENCE_FACTOR * (self.f0 if self.f0 > 0 else 1.0)
        if self.f0 > 0:
            rel = objective / self.f0
        else:
            rel = 1.0 if objective == 0.0 else math.inf
        err = None
        if self.problem.truth is not None:
            tn = float(np.linalg.norm(self.problem.truth))
            if tn > 0:
                err = float(np.linalg.norm(theta - self.problem.truth)) / tn
        self.rows.append(Checkpoint(passes, objective, rel, err))
        if not math.isfinite(objective) or objective > self._guard:
            raise DivergenceError(
                self.solver, self.config.step_size, passes, objective, self.rows
            )
        target = self.config.target_objective
        return target is not None and rel <= target


def _finish(solver, rec, theta, fulls, comps, n, t0, reason) -> IterateTrace:
    return IterateTrace(
        solver=solver,
        checkpoints=rec.rows,
        final_parameter=theta,
        final_passes=fulls + comps / n,
        full_evals=fulls,
        component_evals=comps,
        stop_reason=reason,
        wall_time=time.perf_counter() - t0,
    )


def _draw_indices(rng, n: int, m: int, sampling: str) -> np.ndarray:
    if sampling == "with_replacement":
        return rng.integers(0, n, size=m)
    reps = -(-m // n)
    chunks = [rng.permutation(n) for _ in range(reps)]
    return np.concatenate(chunks)[:m].astype(np.int64)


def _threshold_step(theta, grad, eta, k, tau, lam):
    """Generic-path update step; mirrors the kernel arithmetic."""
    out = theta - eta * grad
    if lam is not None:
        return soft_threshold(out, eta * lam)
    if out.ndim == 2:
        out = svt(out, k)
    else:
        out = hard_threshold(out, k)
    if tau > 0.0:
        flat = out.reshape(-1)
        nrm = float(np.sqrt(flat @ flat))
        while nrm > tau and tau / nrm < 1.0:
            out = out * (tau / nrm)
            flat = out.reshape(-1)
            nrm = float(np.sqrt(flat @ flat))
    return out


# ---------------------------------------------------------------------------
# full-gradient method


def fg_ht(problem: Problem, config: SolverConfig, theta0=None) -> IterateTrace:
    """theta <- H_k(theta - eta * grad F(theta)); one pass per iteration."""
    t0 = time.perf_counter()
    theta = _check_theta0(problem, theta0)
    eta = config.step_size
    k = config.sparsity
    tau = _effective_radius(problem, config)
    n = problem.n_components
    rec = _Recorder(problem, "fg_ht", config)
    fast = _fast_parts(problem)
    if fast is not None:
        A, y, loss = fast
        kern = kernels()
        rs = np.empty(A.shape[0])
    fulls = 0
    it = 0
    reason = "budget"
    measured = False
    while True:
        if config.outer_budget is not None and it >= config.outer_budget:
            break
        if config.pass_budget is not None and fulls + 1 > config.pass_budget + 1e-9:
            break
        if fast is not None:
            obj, mu = kern.snapshot_stats(A, y, n, problem.batch_size, loss, theta, rs)
        else:
            obj = problem.value(theta)
            mu = problem.gradient(theta)
        fulls += 1
        if rec.record(float(it), obj, theta):
            reason = "target"
            measured = True
            break
        if fast is not None:
            theta = kern.ht_step(theta, mu, eta, k, tau)
        else:
            theta = _threshold_step(theta, mu, eta, k, tau, None)
        it += 1
    if not measured:
        if fast is not None:
            obj = kern.objective(A, y, n, problem.batch_size, loss, theta)
        else:
            obj = problem.value(theta)
        rec.record(float(it), obj, theta)
    return _finish("fg_ht", rec, theta, fulls, 0, n, t0, reason)


# ---------------------------------------------------------------------------
# plain stochastic method and SAGA


def _chunked_stochastic(problem, config, theta0, solver):
    """Shared driver for the two step-per-component solvers."""
    t0 = time.perf_counter()
    theta = _check_theta0(problem, theta0)
    eta = config.step_size
    k = config.sparsity
    tau = _effective_radius(problem, config)
    n = problem.n_components
    b = problem.batch_size
    saga = solver == "saga_ht"
    rec = _Recorder(problem, solver, config)
    fast = _fast_parts(problem)
    kern = kernels() if fast is not None else None
    chunk_len = max(1, math.ceil(n * config.trace_stride))

    def current_objective():
        if fast is not None:
            return kern.objective(fast[0], fast[1], n, b, fast[2], theta)
        return problem.value(theta)

    comps = 0
    reason = "budget"
    if rec.record(0.0, current_objective(), theta):
        return _finish(solver, rec, theta, 0, 0, n, t0, "target")

    table = tsum = pytable = None
    if saga:
        # building the table reads every component once: one counted pass
        if fast is not None:
            table = np.empty((n, problem.shape[0]))
            tsum = np.empty(problem.shape[0])
            kern.saga_init(fast[0], fast[1], n, b, fast[2], theta, table, tsum)
        else:
            pytable = SagaTable.initialize(problem, theta)
        comps += n
        if rec.record(1.0, rec.rows[0].objective, theta):
            return _finish(solver, rec, theta, 0, comps, n, t0, "target")

    chunk = 0
    while True:
        if config.outer_budget is not None and chunk >= config.outer_budget:
            break
        this_len = chunk_len
        if config.pass_budget is not None:
            room = int(math.floor((config.pass_budget - comps / n) * n + 1e-9))
            this_len = min(this_len, room)
            if this_len <= 0:
                break
        rng = philox_rng(config.seed, chunk)
        idx = _draw_indices(rng, n, this_len, config.sampling)
        if fast is not None:
            if saga:
                kern.saga_chunk(fast[0], fast[1], n, b, fast[2], theta,
                                table, tsum, idx, comps - n, eta, k, tau)
            else:
                kern.sg_chunk(fast[0], fast[1], n, b, fast[2], theta,
                              idx, eta, k, tau)
        else:
            for t in range(idx.shape[0]):
                i = int(idx[t])
                g = problem.component_gradient(i, theta)
                if saga:
                    # correction uses the table state from before this swap
                    step_grad = g - (pytable.gradients[i] - pytable.mean)
                    pytable.update(i, g)
                    g = step_grad
                theta = _threshold_step(theta, g, eta, k, tau, None)
        comps += this_len
        chunk += 1
        if rec.record(comps / n, current_objective(), theta):
            reason = "target"
            break
    return _finish(solver, rec, theta, 0, comps, n, t0, reason)


def sg_ht(problem: Problem, config: SolverConfig, theta0=None) -> IterateTrace:
    """Single-component gradient steps with hard thresholding."""
    return _chunked_stochastic(problem, config, theta0, "sg_ht")


def saga_ht(problem: Problem, config: SolverConfig, theta0=None) -> IterateTrace:
    """Stored-gradient-table variance reduction with hard thresholding."""
    return _chunked_stochastic(problem, config, theta0, "saga_ht")


# ---------------------------------------------------------------------------
# variance-reduced loop shared by svrg_ht, prox_svrg, and the simulated
# asynchronous solver


@dataclass(frozen=True)
class _VrPlan:
    solver: str
    soft_lam: Optional[float] = None    # proximal mode when set
    max_delay: int = 0
    delay_fn: Optional[Callable[[int], int]] = None  # inner step -> read index
    block_q: Optional[int] = None       # None or q == d means full updates
    block_seed: int = 0
    rescale: bool = False


def _vr_solve(problem: Problem, config: SolverConfig, theta0, plan: _VrPlan) -> IterateTrace:
    t0 = time.perf_counter()
    theta = _check_theta0(problem, theta0)
    eta = config.step_size
    k = config.sparsity
    n = problem.n_components
    b = problem.batch_size
    m = config.inner_length if config.inner_length is not None else n
    prox = plan.soft_lam is not None
    tau = 0.0 if prox else _effective_radius(problem, config)
    penalty = None
    if prox:
        lam = float(plan.soft_lam)
        penalty = lambda th: lam * float(np.sum(np.abs(th)))
    rec = _Recorder(problem, plan.solver, config, penalty=penalty)

    d = problem.shape[0] if len(problem.shape) == 1 else None
    use_blocks = (
        plan.block_q is not None and d is not None and plan.block_q < d
    )
    if plan.block_q is not None and d is None:
        size = int(np.prod(problem.shape))
        if plan.block_q < size:
            raise ValueError("coordinate blocks need a vector-shaped parameter")
    block_scale = 1.0
    if use_blocks and plan.rescale:
        block_scale = d / plan.block_q

    # precompute the delay vector once; it is the same every round
    delays = np.zeros(m, dtype=np.int64)
    if plan.delay_fn is not None:
        for t in range(m):
            t_read = int(plan.delay_fn(t))
            if t_read < 0 or t_read > t or t - t_read > plan.max_delay:
                raise ValueError(
                    f"delay schedule gave read index {t_read} at step {t}; "
                    f"need max(0, t - {plan.max_delay}) <= read <= t"
                )
            delays[t] = t - t_read

    fast = _fast_parts(problem)
    if fast is not None:
        A, y, loss = fast
        kern = kernels()
        rs = np.empty(A.shape[0])
        hist = np.empty((m + 1, d))
        empty_blocks = np.empty((0, 0), dtype=np.int64)
    else:
        hist = np.empty((m + 1,) + problem.shape)

    fulls = 0
    comps = 0
    r = 0
    cost = 1.0 + m / n
    reason = "budget"
    measured = False
    while True:
        if config.outer_budget is not None and r >= config.outer_budget:
            break
        if config.pass_budget is not None and fulls + comps / n + cost > config.pass_budget + 1e-9:
            break
        rng = philox_rng(config.seed, r)
        idx = _draw_indices(rng, n, m, config.sampling)
        if use_blocks:
            rng_b = philox_rng(plan.block_seed, BLOCK_STREAM_BASE + r)
            keys = rng_b.random((m, d))
            blocks = np.argpartition(keys, plan.block_q, axis=1)[:, : plan.block_q]
            blocks = np.ascontiguousarray(np.sort(blocks, axis=1))
        if fast is not None:
            obj, mu = kern.snapshot_stats(A, y, n, b, loss, theta, rs)
        else:
            obj = problem.value(theta)
            mu = problem.gradient(theta)
        fulls += 1
        if rec.record(fulls - 1 + comps / n, obj, theta):
            reason = "target"
            measured = True
            break
        hist[0] = theta
        if fast is not None:
            kern.svrg_inner(
                A, y, n, b, loss, hist, idx, delays,
                blocks if use_blocks else empty_blocks, rs, mu,
                eta, k, tau, eta * lam if prox else -1.0, block_scale,
            )
        else:
            snap_grads = {}
            for t in range(m):
                i = int(idx[t])
                src = hist[t - delays[t]]
                gi = problem.component_gradient(i, src)
                if i not in snap_grads:
                    snap_grads[i] = problem.component_gradient(i, hist[0])
                g = (gi - snap_grads[i]) + mu
                if use_blocks:
                    masked = np.zeros_like(g)
                    cols = blocks[t]
                    masked[cols] = g[cols] * block_scale
                    g = masked
                hist[t + 1] = _threshold_step(
                    hist[t], g, eta, k, tau, plan.soft_lam
                )
        comps += m
        if config.snapshot_rule == "random_iterate":
            j = int(rng.integers(1, m + 1))
        else:
            j = m
        theta = hist[j].copy()
        r += 1
    if not measured:
        if fast is not None:
            obj = kern.objective(A, y, n, b, loss, theta)
        else:
            obj = problem.value(theta)
        rec.record(fulls + comps / n, obj, theta)
    return _finish(plan.solver, rec, theta, fulls, comps, n, t0, reason)


def svrg_ht(problem: Problem, config: SolverConfig, theta0=None) -> IterateTrace:
    """Snapshot-based variance reduction with hard thresholding.

    Each outer round computes the snapshot's full gradient (1 pass), runs m
    inner steps (m/n passes) whose gradients are corrected toward the
    snapshot, and promotes either the last or a uniformly random inner
    iterate to be the next snapshot.
    """
    return _vr_solve(problem, config, theta0, _VrPlan(solver="svrg_ht"))


def prox_svrg(problem: Problem, config: SolverConfig, theta0=None) -> IterateTrace:
    """l1-penalized baseline: soft thresholding replaces the sparsity cut.

    Checkpoint objectives include the l1 penalty term; the configured
    l2_radius is ignored here (the proximal step is the whole projection).
    """
    if config.l1_weight is None:
        raise ValueError("prox_svrg requires config.l1_weight")
    return _vr_solve(
        problem, config, theta0,
        _VrPlan(solver="prox_svrg", soft_lam=float(config.l1_weight)),
    )
