"""Experiment driver: sweeps, traces, and summary tables.

A sweep runs the cross product (solver x step size [x l1 weight] x seed).
Seed s draws a fresh synthetic instance AND seeds the solver streams, so
medians over seeds average over data realizations, which is what the
statistical-rate comparisons need. File-backed instances are fixed data;
seeds then vary only the solver randomness.

Cells are independent and may run on parallel threads; every artifact is
keyed deterministically by its cell, so outputs are byte-identical across
parallelism levels. Trace CSV rows use shortest round-trip float
formatting, making byte equality the reproducibility test.
"""

from __future__ import annotations

import json
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from sparseht import datagen
from sparseht.async_solver import AsyncConfig, asvrg_ht, asvrg_ht_sim
from sparseht.datagen import SyntheticInstance
from sparseht.models import (
    LeastSquaresProblem,
    LogisticProblem,
    LowRankProblem,
)
from sparseht.objective import Problem
from sparseht.solvers import (
    DivergenceError,
    IterateTrace,
    SolverConfig,
    fg_ht,
    prox_svrg,
    saga_ht,
    sg_ht,
    svrg_ht,
)

SOLVERS = ("fg_ht", "sg_ht", "svrg_ht", "saga_ht", "prox_svrg",
           "asvrg_ht_sim", "asvrg_ht")


# ---------------------------------------------------------------------------
# metrics


def relative_estimation_error(theta: np.ndarray, truth: np.ndarray) -> float:
    """||theta - truth|| / ||truth|| (Frobenius for matrices)."""
    tn = float(np.linalg.norm(truth))
    if tn == 0.0:
        raise ValueError("relative error is undefined for a zero truth")
    return float(np.linalg.norm(theta - truth)) / tn


def misclassification_rate(theta: np.ndarray, design: np.ndarray,
                           labels: np.ndarray) -> float:
    """0/1 error at probability threshold 1/2; exact ties count as errors."""
    z = design @ theta
    pred = np.where(z > 0.0, 1.0, 0.0)
    wrong = (pred != labels) | (z == 0.0)
    return float(np.mean(wrong))


def passes_to_tolerance(trace: IterateTrace, tol: float) -> Optional[float]:
    """Effective passes at the first checkpoint with rel objective <= tol."""
    for cp in trace.checkpoints:
        if cp.relative_objective <= tol:
            return cp.passes
    return None


# ---------------------------------------------------------------------------
# configuration


_INSTANCE_KEYS = {
    "kind", "file", "nb", "d", "p", "k_star", "c", "sigma", "n_batches",
    "radius_mult",
}
_CONFIG_KEYS = {
    "instance", "solvers", "etas", "lambdas", "seeds", "pass_budget",
    "sparsity", "inner_length", "snapshot_rule", "trace_stride",
    "tolerance", "target_objective", "sampling", "workers", "mode",
    "block_size", "max_staleness", "out_dir",
}


@dataclass
class ExperimentConfig:
    instance: dict
    solvers: List[str]
    etas: List[float]
    sparsity: int
    seeds: List[int] = field(default_factory=lambda: [0])
    lambdas: List[float] = field(default_factory=list)
    pass_budget: float = 500.0
    inner_length: Optional[int] = None
    snapshot_rule: str = "last_iterate"
    trace_stride: float = 1.0
    tolerance: float = 1e-10
    target_objective: Optional[float] = None
    sampling: str = "with_replacement"
    workers: int = 1
    mode: str = "simulated"
    block_size: Optional[int] = None
    max_staleness: Optional[int] = None
    out_dir: str = "runs"

    def __post_init__(self):
        if not self.solvers:
            raise ValueError("at least one solver is required")
        unknown = [s for s in self.solvers if s not in SOLVERS]
        if unknown:
            raise ValueError(f"unknown solvers: {unknown}; choose from {SOLVERS}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not self.etas:
            raise ValueError("the step-size sweep set must be non-empty")
        if "prox_svrg" in self.solvers and not self.lambdas:
            raise ValueError("prox_svrg sweeps need a non-empty lambdas list")
        bad = set(self.instance) - _INSTANCE_KEYS
        if bad:
            raise ValueError(f"unknown instance keys: {sorted(bad)}")

    @classmethod
    def from_dict(cls, data: dict, overrides: Optional[dict] = None) -> "ExperimentConfig":
        merged = dict(data)
        if overrides:
            for key, val in overrides.items():
                if val is not None:
                    merged[key] = val
        bad = set(merged) - _CONFIG_KEYS
        if bad:
            raise ValueError(f"unknown config keys: {sorted(bad)}")
        return cls(**merged)

    @classmethod
    def from_json(cls, path: str, overrides: Optional[dict] = None) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh), overrides)


@dataclass
class SummaryRow:
    solver: str
    n: int
    b: int
    c: Optional[float]
    sigma: float
    param: str
    median_err: float
    mean_err: float
    passes_to_tol: Optional[float]
    wall_s: float
    status: str


# ---------------------------------------------------------------------------
# instances and problems


def build_instance(spec: dict, seed: int) -> SyntheticInstance:
    """Instance from a generation spec (or file reference) for one seed."""
    if "file" in spec:
        return datagen.load_instance(spec["file"])
    kind = spec.get("kind", "linear")
    if kind == "linear":
        return datagen.gen_regression_instance(
            nb=spec["nb"], d=spec["d"], k_star=spec["k_star"],
            c=spec.get("c", 0.0), sigma=spec.get("sigma", 0.0),
            seed=seed, n_batches=spec.get("n_batches"),
        )
    if kind == "logistic":
        return datagen.gen_logistic_instance(
            nb=spec["nb"], d=spec["d"], k_star=spec["k_star"],
            c=spec.get("c", 0.0), seed=seed,
            radius_mult=spec.get("radius_mult", 10.0),
            n_batches=spec.get("n_batches"),
        )
    if kind == "lowrank":
        return datagen.gen_lowrank_instance(
            d=spec["d"], p=spec["p"], k_star=spec["k_star"],
            nb=spec["nb"], sigma=spec.get("sigma", 0.0),
            seed=seed, n_batches=spec.get("n_batches"),
        )
    raise ValueError(f"unknown instance kind {kind!r}")


def make_problem(inst: SyntheticInstance) -> Problem:
    if inst.kind == "linear":
        return LeastSquaresProblem(
            inst.design, inst.responses, inst.n_batches, inst.batch_size,
            truth=inst.truth,
        )
    if inst.kind == "logistic":
        return LogisticProblem(
            inst.design, inst.responses, inst.n_batches, inst.batch_size,
            radius=inst.spec.get("radius"), truth=inst.truth,
        )
    if inst.kind == "lowrank":
        return LowRankProblem(
            inst.design, inst.responses, inst.n_batches, inst.batch_size,
            truth=inst.truth,
        )
    raise ValueError(f"unknown instance kind {inst.kind!r}")


def run_solver(problem: Problem, solver: str, config: SolverConfig,
               async_config: Optional[AsyncConfig] = None):
    """(trace, diagnostics-or-None) for any registered solver name."""
    plain = dict(fg_ht=fg_ht, sg_ht=sg_ht, svrg_ht=svrg_ht,
                 saga_ht=saga_ht, prox_svrg=prox_svrg)
    if solver in plain:
        return plain[solver](problem, config), None
    if solver == "asvrg_ht_sim":
        if async_config is None:
            raise ValueError("asvrg_ht_sim needs an AsyncConfig")
        return asvrg_ht_sim(problem, config, async_config)
    if solver == "asvrg_ht":
        if async_config is None:
            raise ValueError("asvrg_ht needs an AsyncConfig")
        return asvrg_ht(problem, config, async_config)
    raise ValueError(f"unknown solver {solver!r}")


# ---------------------------------------------------------------------------
# trace serialization


def checkpoints_csv_text(checkpoints) -> str:
    lines = ["passes,objective,rel_objective,rel_est_error"]
    for cp in checkpoints:
        err = "" if cp.estimation_error is None else repr(cp.estimation_error)
        lines.append(
            f"{cp.passes!r},{cp.objective!r},{cp.relative_objective!r},{err}"
        )
    return "\n".join(lines) + "\n"


def trace_csv_text(trace: IterateTrace) -> str:
    return checkpoints_csv_text(trace.checkpoints)


def write_trace(trace: IterateTrace, path) -> None:
    Path(path).write_text(trace_csv_text(trace))


# ---------------------------------------------------------------------------
# sweep driver


def _param_tag(eta: float, lam: Optional[float]) -> str:
    if lam is None:
        return f"eta{eta:.10g}"
    return f"eta{eta:.10g}_lam{lam:.10g}"


def _cell_config(cfg: ExperimentConfig, solver: str, eta: float,
                 lam: Optional[float], seed: int) -> SolverConfig:
    return SolverConfig(
        step_size=eta,
        sparsity=cfg.sparsity,
        inner_length=cfg.inner_length,
        pass_budget=cfg.pass_budget,
        snapshot_rule=cfg.snapshot_rule,
        seed=seed,
        l1_weight=lam,
        trace_stride=cfg.trace_stride,
        sampling=cfg.sampling,
        target_objective=cfg.target_objective,
    )


def _cell_async(cfg: ExperimentConfig, solver: str, seed: int) -> Optional[AsyncConfig]:
    if solver == "asvrg_ht_sim":
        return AsyncConfig(
            workers=1, block_size=cfg.block_size,
            max_staleness=cfg.max_staleness if cfg.max_staleness is not None else 0,
            mode="simulated", seed=seed,
        )
    if solver == "asvrg_ht":
        return AsyncConfig(
            workers=cfg.workers, block_size=cfg.block_size,
            mode="threaded", seed=seed,
        )
    return None


def _run_cell(problem: Problem, cfg: ExperimentConfig, solver: str,
              eta: float, lam: Optional[float], seed: int,
              measure_wall: bool) -> dict:
    config = _cell_config(cfg, solver, eta, lam, seed)
    out = dict(solver=solver, eta=eta, lam=lam, seed=seed)
    try:
        trace, _ = run_solver(problem, solver, config,
                              _cell_async(cfg, solver, seed))
        out["status"] = "ok"
        out["trace"] = trace
        out["final_rel_obj"] = trace.checkpoints[-1].relative_objective
        err = trace.checkpoints[-1].estimation_error
        out["final_err"] = math.inf if err is None else err
        out["passes_to_tol"] = passes_to_tolerance(trace, cfg.tolerance)
        # wall clock is the one inherently nondeterministic field; it is
        # zeroed unless explicitly requested so summaries stay byte-stable
        out["wall_s"] = trace.wall_time if measure_wall else 0.0
    except DivergenceError as exc:
        out["status"] = "diverged"
        out["trace"] = None
        out["final_rel_obj"] = math.inf
        out["final_err"] = math.inf
        out["passes_to_tol"] = None
        out["wall_s"] = 0.0
        out["error"] = str(exc)
    return out


def sweep(cfg: ExperimentConfig, jobs: int = 1, write_traces: bool = True,
          measure_wall: bool = False) -> Tuple[List[SummaryRow], dict]:
    """Run the full cross product; returns (summary rows, best-per-solver).

    Execution groups cells by seed so only one instance is materialized at
    a time; within a seed, cells may run on `jobs` threads. Results are
    aggregated and sorted deterministically, so the outputs do not depend
    on execution order or thread count.
    """
    if jobs < 1:
        raise ValueError("jobs must be positive")
    out_dir = Path(cfg.out_dir)
    if write_traces:
        (out_dir / "traces").mkdir(parents=True, exist_ok=True)

    def cell_params(solver):
        if solver == "prox_svrg":
            return [(e, l) for e in cfg.etas for l in cfg.lambdas]
        return [(e, None) for e in cfg.etas]

    results: Dict[tuple, List[dict]] = {}
    shape_nb = None
    for seed in cfg.seeds:
        inst = build_instance(cfg.instance, seed)
        problem = make_problem(inst)
        if shape_nb is None:
            shape_nb = (inst.n_batches, inst.batch_size)
        cells = [
            (solver, eta, lam)
            for solver in cfg.solvers
            for (eta, lam) in cell_params(solver)
        ]
        if jobs == 1:
            outs = [_run_cell(problem, cfg, s, e, l, seed, measure_wall)
                    for (s, e, l) in cells]
        else:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                futs = [pool.submit(_run_cell, problem, cfg, s, e, l, seed,
                                    measure_wall)
                        for (s, e, l) in cells]
                outs = [f.result() for f in futs]
        for cell, res in zip(cells, outs):
            results.setdefault(cell, []).append(res)
            if write_traces and res["trace"] is not None:
                name = f"{cell[0]}_{_param_tag(cell[1], cell[2])}_seed{seed}.csv"
                write_trace(res["trace"], out_dir / "traces" / name)

    inst_spec = cfg.instance
    rows: List[SummaryRow] = []
    for (solver, eta, lam) in sorted(results, key=lambda c: (c[0], c[1], c[2] or 0.0)):
        cell_runs = results[(solver, eta, lam)]
        errs = [r["final_err"] for r in cell_runs]
        diverged = sum(1 for r in cell_runs if r["status"] != "ok")
        reached = [r["passes_to_tol"] for r in cell_runs if r["passes_to_tol"] is not None]
        walls = [r["wall_s"] for r in cell_runs if r["status"] == "ok"]
        rows.append(SummaryRow(
            solver=solver,
            n=0, b=0,  # filled below once an instance shape is known
            c=inst_spec.get("c"),
            sigma=float(inst_spec.get("sigma", 0.0)),
            param=_param_tag(eta, lam),
            median_err=float(statistics.median(errs)),
            mean_err=float(statistics.fmean(errs)),
            passes_to_tol=float(statistics.median(reached)) if reached else None,
            wall_s=float(statistics.median(walls)) if walls else 0.0,
            status="ok" if diverged == 0 else f"diverged:{diverged}",
        ))
    # instance batching is the same for every seed by construction
    for row in rows:
        row.n, row.b = shape_nb

    best: Dict[str, dict] = {}
    for row in rows:
        cur = best.get(row.solver)
        if cur is None or row.median_err < cur["median_err"]:
            best[row.solver] = dict(param=row.param, median_err=row.median_err,
                                    mean_err=row.mean_err, status=row.status)
    return rows, best


def summary_csv_text(rows: List[SummaryRow]) -> str:
    lines = ["solver,n,b,c,sigma,param,median_err,mean_err,passes_to_tol,wall_s,status"]
    for r in rows:
        c = "" if r.c is None else repr(float(r.c))
        ptt = "" if r.passes_to_tol is None else repr(r.passes_to_tol)
        lines.append(
            f"{r.solver},{r.n},{r.b},{c},{float(r.sigma)!r},{r.param},"
            f"{r.median_err!r},{r.mean_err!r},{ptt},{r.wall_s!r},{r.status}"
        )
    return "\n".join(lines) + "\n"
