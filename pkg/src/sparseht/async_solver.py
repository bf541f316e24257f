"""Asynchronous block-coordinate variance reduction with hard thresholding.

Two modes share one update rule. Simulated mode is single-threaded and
replays an explicit staleness schedule through the same inner kernel the
serial solver uses, so the zero-delay full-block schedule reproduces the
serial trajectory bit for bit. Threaded mode runs real lock-free workers
against one shared parameter vector: every coordinate read/write is an
aligned 8-byte load/store (atomic on the supported platforms, never torn),
workers threshold a locally read copy of the full vector, and write back
only the coordinates they changed. Shared state between updates may
therefore transiently carry more than k nonzeros; each worker's own
post-threshold vector never does.

Each inner step samples a component i and a coordinate block e of size q,
takes the variance-reduced gradient at a stale read of the iterate,
applies only its restriction to e (no d/q unbiasedness rescale unless
explicitly requested), and hard-thresholds the full vector. The outer
snapshot is a barrier in both modes: workers quiesce, the full gradient is
recomputed once, and checkpoints are taken there.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from sparseht.backend import kernels
from sparseht.objective import Problem
from sparseht.rng import philox_rng
from sparseht.solvers import (
    IterateTrace,
    SolverConfig,
    _check_theta0,
    _fast_parts,
    _finish,
    _Recorder,
    _VrPlan,
    _vr_solve,
)

_MODES = ("simulated", "threaded")

# worker seed streams live above the block-sampling range
_WORKER_STREAM_BASE = 2**62


@dataclass(frozen=True)
class AsyncConfig:
    """Execution parameters for the asynchronous solver.

    block_size defaults to the sparsity level k (the largest block the
    update rule is stated for); max_staleness is required in simulated
    mode and ignored in threaded mode, where staleness is measured rather
    than imposed. rescale_blocks opts into multiplying block-restricted
    gradients by d/q to make them unbiased (off by default: the plain
    restricted step is the rule as stated).
    """

    workers: int = 1
    block_size: Optional[int] = None
    max_staleness: Optional[int] = None
    mode: str = "simulated"
    seed: int = 0
    rescale_blocks: bool = False

    def __post_init__(self):
        if int(self.workers) != self.workers or self.workers < 1:
            raise ValueError("workers must be a positive integer")
        if self.block_size is not None and self.block_size < 1:
            raise ValueError("block_size must be a positive integer")
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}")
        if self.mode == "simulated":
            if self.max_staleness is None or self.max_staleness < 0:
                raise ValueError("simulated mode needs max_staleness >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 bits")


@dataclass
class AsyncDiagnostics:
    realized_max_staleness: int
    delta_estimate: float
    rho_plus_estimate: float
    gamma: float
    regime_ok: bool
    wall_time: float
    mode: str
    workers: int


def contraction_factor(rho_plus: float, delta: float, staleness: int,
                       eta: float) -> Tuple[float, bool]:
    """Per-round contraction estimate (1 + p D s^2 e) / (1 - 2 p^2 D s^2 e^2).

    Returns (gamma, regime_ok). A non-positive denominator means the
    staleness/step-size regime is outside the contraction analysis; that
    is reported, not raised.
    """
    s2 = float(staleness) ** 2
    num = 1.0 + rho_plus * delta * s2 * eta
    den = 1.0 - 2.0 * rho_plus**2 * delta * s2 * eta**2
    if den <= 0.0:
        return math.inf, False
    return num / den, True


def measure_delta(problem: Problem, q: int, trials: int, seed: int) -> float:
    """Smallest Delta with E ||v_e||^2 <= Delta ||v||^2 over uniform size-q
    blocks, estimated by Monte Carlo and maximized over test vectors.

    The test family mixes dense, one-hot, random sparse, and the problem's
    own gradient directions. For uniform blocks the exact value is q/d for
    every vector, so the estimate doubles as a sampler check.
    """
    if len(problem.shape) != 1:
        raise ValueError("block mass estimation needs a vector-shaped problem")
    d = problem.shape[0]
    if not 1 <= q <= d:
        raise ValueError("block size q must lie in [1, d]")
    if trials < 1:
        raise ValueError("trials must be positive")
    rng = philox_rng(seed, 0)
    vectors = [np.ones(d)]
    e0 = np.zeros(d)
    e0[0] = 1.0
    vectors.append(e0)
    for _ in range(3):
        vectors.append(rng.standard_normal(d))
    for _ in range(2):
        v = np.zeros(d)
        support = rng.choice(d, size=max(1, d // 10), replace=False)
        v[support] = rng.standard_normal(support.shape[0])
        vectors.append(v)
    vectors.append(problem.gradient(np.zeros(d)))
    probe = np.zeros(d)
    support = rng.choice(d, size=max(1, d // 10), replace=False)
    probe[support] = rng.standard_normal(support.shape[0])
    vectors.append(problem.gradient(probe))

    worst = 0.0
    for v in vectors:
        total = float(v @ v)
        if total == 0.0:
            continue
        sq = v * v
        keys = rng.random((trials, d))
        if q < d:
            subsets = np.argpartition(keys, q, axis=1)[:, :q]
            mass = np.take(sq, subsets).sum(axis=1)
        else:
            mass = np.full(trials, total)
        worst = max(worst, float(mass.mean()) / total)
    return min(worst, 1.0)


def _resolved_block(problem: Problem, config: SolverConfig,
                    async_config: AsyncConfig) -> int:
    size = int(np.prod(problem.shape))
    q = async_config.block_size
    if q is None:
        # coordinate blocks only make sense for vector parameters; matrix
        # problems always update every entry
        q = min(config.sparsity, size) if len(problem.shape) == 1 else size
    if q > size:
        raise ValueError(f"block_size {q} exceeds the parameter size {size}")
    return int(q)


def _diagnostics(problem: Problem, config: SolverConfig,
                 async_config: AsyncConfig, q: int, realized: int,
                 wall: float) -> AsyncDiagnostics:
    from sparseht.verify import estimate_rsc_rss

    if len(problem.shape) == 1:
        delta = measure_delta(problem, q, trials=128, seed=async_config.seed)
        k = config.sparsity
        s = 2 * k
        if problem.truth is not None:
            s += int(np.count_nonzero(problem.truth))
        s = max(1, min(problem.shape[0], s))
        est = estimate_rsc_rss(problem, s=s, trials=6, seed=async_config.seed)
        rho_plus = float(est.rho_plus)
        gamma, ok = contraction_factor(rho_plus, delta, realized, config.step_size)
    else:
        # full-matrix updates touch every coordinate; the curvature
        # estimator only covers vector problems, so gamma stays unassessed
        delta = 1.0
        rho_plus = math.nan
        gamma, ok = math.nan, False
    return AsyncDiagnostics(
        realized_max_staleness=int(realized),
        delta_estimate=float(delta),
        rho_plus_estimate=rho_plus,
        gamma=float(gamma),
        regime_ok=ok,
        wall_time=wall,
        mode=async_config.mode,
        workers=async_config.workers,
    )


def asvrg_ht_sim(problem: Problem, config: SolverConfig,
                 async_config: AsyncConfig,
                 delay_schedule: Optional[Callable[[int], int]] = None,
                 theta0=None) -> Tuple[IterateTrace, AsyncDiagnostics]:
    """Deterministic replay of the asynchronous update rule.

    delay_schedule maps an inner step index t (0-based) to the index t' of
    the iterate whose value the step reads, with
    max(0, t - max_staleness) <= t' <= t. The default schedule reads the
    oldest permitted iterate, i.e. maximal staleness everywhere. Schedules
    outside the bound raise ValueError.
    """
    if async_config.mode != "simulated":
        raise ValueError("asvrg_ht_sim requires mode='simulated'")
    sigma = int(async_config.max_staleness)
    q = _resolved_block(problem, config, async_config)
    if delay_schedule is None:
        delay_schedule = lambda t: max(0, t - sigma)
    plan = _VrPlan(
        solver="asvrg_ht_sim",
        max_delay=sigma,
        delay_fn=delay_schedule,
        block_q=q,
        block_seed=async_config.seed,
        rescale=async_config.rescale_blocks,
    )
    trace = _vr_solve(problem, config, theta0, plan)
    m = config.inner_length if config.inner_length is not None else problem.n_components
    realized = max((t - int(delay_schedule(t)) for t in range(m)), default=0)
    diag = _diagnostics(problem, config, async_config, q, realized, trace.wall_time)
    return trace, diag


def asvrg_ht(problem: Problem, config: SolverConfig,
             async_config: AsyncConfig,
             theta0=None) -> Tuple[IterateTrace, AsyncDiagnostics]:
    """Lock-free threaded mode.

    Workers run the whole inner loop concurrently on one shared vector;
    snapshots are barriers. Component and block sampling happen inside the
    workers from per-(round, worker) seeds derived off async_config.seed,
    so runs are reproducible only at workers=1 (true concurrency reorders
    writes). snapshot_rule is ignored: the barrier state is the only
    consistent full iterate, so it becomes the next snapshot.
    """
    if async_config.mode != "threaded":
        raise ValueError("asvrg_ht requires mode='threaded'")
    fast = _fast_parts(problem)
    if fast is None:
        raise ValueError("threaded mode needs a dense-design vector problem")
    A, y, loss = fast
    kern = kernels()
    t0 = time.perf_counter()
    theta = _check_theta0(problem, theta0)
    eta = config.step_size
    k = config.sparsity
    n = problem.n_components
    b = problem.batch_size
    d = problem.shape[0]
    m = config.inner_length if config.inner_length is not None else n
    q = _resolved_block(problem, config, async_config)
    tau = config.l2_radius if config.l2_radius is not None else (problem.l2_radius or 0.0)
    block_scale = d / q if async_config.rescale_blocks else 1.0
    workers = async_config.workers
    steps = [m // workers + (1 if w < m % workers else 0) for w in range(workers)]

    rec = _Recorder(problem, "asvrg_ht", config)
    rs = np.empty(A.shape[0])
    perms = [np.arange(d, dtype=np.int64) for _ in range(workers)]
    realized = 0
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
        obj, mu = kern.snapshot_stats(A, y, n, b, loss, theta, rs)
        fulls += 1
        if rec.record(fulls - 1 + comps / n, obj, theta):
            reason = "target"
            measured = True
            break
        seeds = np.random.SeedSequence(
            entropy=[int(async_config.seed), _WORKER_STREAM_BASE + r]
        ).generate_state(workers, dtype=np.uint64)
        counter = np.zeros(1, dtype=np.int64)
        stale = np.zeros(workers, dtype=np.int64)
        threads = []
        for w in range(workers):
            if steps[w] == 0:
                continue
            threads.append(threading.Thread(
                target=kern.asvrg_worker,
                args=(A, y, n, b, loss, theta, rs, mu, eta, k, tau, q,
                      steps[w], np.uint64(seeds[w]), perms[w], counter,
                      stale, w, block_scale),
            ))
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        realized = max(realized, int(stale.max()) if workers else 0)
        comps += m
        r += 1
    if not measured:
        obj = kern.objective(A, y, n, b, loss, theta)
        rec.record(fulls + comps / n, obj, theta)
    trace = _finish("asvrg_ht", rec, theta, fulls, comps, n, t0, reason)
    diag = _diagnostics(problem, config, async_config, q, realized, trace.wall_time)
    return trace, diag
