"""Command-line entry point.

Subcommands: `gen` writes synthetic instance files, `solve` runs one
solver and writes its trace CSV, `sweep` runs an experiment config across
(solver, step size, seed) cells, `verify` runs the property oracles and
emits JSON reports.

Exit codes: 0 success, 2 usage or invalid argument, 3 divergence,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from sparseht import bench, datagen, verify
from sparseht.async_solver import AsyncConfig
from sparseht.solvers import DivergenceError, SolverConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_IO = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparseht",
        description="sparse hard-thresholding solver bench",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic instance file")
    gen.add_argument("--kind", choices=("linear", "logistic", "lowrank"),
                     default="linear")
    gen.add_argument("--nb", type=int, default=1000, help="total sample count")
    gen.add_argument("--d", type=int, default=2000, help="ambient dimension")
    gen.add_argument("--p", type=int, default=None,
                     help="second matrix dimension (lowrank only)")
    gen.add_argument("--k-star", type=int, default=20, help="true sparsity")
    gen.add_argument("--c", type=float, default=0.0,
                     help="equicorrelation of design columns")
    gen.add_argument("--sigma", type=float, default=0.0, help="noise level")
    gen.add_argument("--n-batches", type=int, default=None)
    gen.add_argument("--radius-mult", type=float, default=10.0,
                     help="l2 radius as a multiple of the truth norm (logistic)")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output instance path")

    solve = sub.add_parser("solve", help="run one solver on an instance file")
    solve.add_argument("--instance", required=True)
    solve.add_argument("--solver", required=True)
    solve.add_argument("--eta", type=float, required=True, help="step size")
    solve.add_argument("--k", type=int, required=True, help="sparsity level")
    solve.add_argument("--m", type=int, default=None, help="inner loop length")
    solve.add_argument("--passes", type=float, default=None,
                       help="effective pass budget")
    solve.add_argument("--outer", type=int, default=None, help="outer budget")
    solve.add_argument("--lam", type=float, default=None,
                       help="l1 weight (prox_svrg)")
    solve.add_argument("--tau", type=float, default=None, help="l2 ball radius")
    solve.add_argument("--snapshot-rule", default="last_iterate",
                       choices=("last_iterate", "random_iterate"))
    solve.add_argument("--sampling", default="with_replacement",
                       choices=("with_replacement", "without_replacement"))
    solve.add_argument("--trace-stride", type=float, default=1.0)
    solve.add_argument("--target", type=float, default=None,
                       help="stop at this relative objective")
    solve.add_argument("--workers", type=int, default=1)
    solve.add_argument("--mode", choices=("simulated", "threaded"),
                       default="simulated")
    solve.add_argument("--block-size", type=int, default=None)
    solve.add_argument("--max-staleness", type=int, default=None)
    solve.add_argument("--seed", type=int, default=0)
    solve.add_argument("--out", default=None, help="trace CSV path")

    sw = sub.add_parser("sweep", help="run an experiment config")
    sw.add_argument("--config", required=True, help="JSON experiment config")
    sw.add_argument("--out", default=None, help="output directory override")
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--passes", type=float, default=None)
    sw.add_argument("--seed", type=int, default=None,
                    help="replace the seed list with this one seed")
    sw.add_argument("--solver", action="append", default=None,
                    help="restrict to this solver (repeatable)")
    sw.add_argument("--eta", type=float, action="append", default=None,
                    help="restrict to this step size (repeatable)")
    sw.add_argument("--time", action="store_true",
                    help="record wall times (makes summaries nondeterministic)")

    ver = sub.add_parser("verify", help="run a property oracle")
    ver.add_argument("--check", required=True,
                     choices=("ht-lemma", "svt-lemma", "vr-unbiasedness",
                              "rsc-rss"))
    ver.add_argument("--trials", type=int, default=1000)
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--max-d", type=int, default=16)
    ver.add_argument("--max-dim", type=int, default=10)
    ver.add_argument("--instance", default=None,
                     help="instance file (vr-unbiasedness, rsc-rss)")
    ver.add_argument("--s", type=int, default=None,
                     help="sparsity level for rsc-rss")
    ver.add_argument("--out", default=None, help="JSON report path")
    return parser


def cmd_gen(args) -> int:
    if args.kind == "linear":
        inst = datagen.gen_regression_instance(
            nb=args.nb, d=args.d, k_star=args.k_star, c=args.c,
            sigma=args.sigma, seed=args.seed, n_batches=args.n_batches,
        )
    elif args.kind == "logistic":
        inst = datagen.gen_logistic_instance(
            nb=args.nb, d=args.d, k_star=args.k_star, c=args.c,
            seed=args.seed, radius_mult=args.radius_mult,
            n_batches=args.n_batches,
        )
    else:
        if args.p is None:
            raise ValueError("lowrank generation needs --p")
        inst = datagen.gen_lowrank_instance(
            d=args.d, p=args.p, k_star=args.k_star, nb=args.nb,
            sigma=args.sigma, seed=args.seed, n_batches=args.n_batches,
        )
    datagen.save_instance(inst, args.out)
    print(json.dumps(dict(written=args.out, sidecar=args.out + ".json",
                          kind=inst.kind, nb=inst.design.shape[0]),
                     sort_keys=True))
    return EXIT_OK


def cmd_solve(args) -> int:
    inst = datagen.load_instance(args.instance)
    problem = bench.make_problem(inst)
    pass_budget = args.passes
    if pass_budget is None and args.outer is None:
        pass_budget = 500.0
    config = SolverConfig(
        step_size=args.eta,
        sparsity=args.k,
        inner_length=args.m,
        outer_budget=args.outer,
        pass_budget=pass_budget,
        snapshot_rule=args.snapshot_rule,
        seed=args.seed,
        l2_radius=args.tau,
        l1_weight=args.lam,
        trace_stride=args.trace_stride,
        sampling=args.sampling,
        target_objective=args.target,
    )
    async_config = None
    if args.solver in ("asvrg_ht", "asvrg_ht_sim"):
        async_config = AsyncConfig(
            workers=args.workers,
            block_size=args.block_size,
            max_staleness=(args.max_staleness
                           if args.max_staleness is not None
                           else (0 if args.mode == "simulated" else None)),
            mode=args.mode,
            seed=args.seed,
        )
    try:
        trace, diag = bench.run_solver(problem, args.solver, config, async_config)
    except DivergenceError as exc:
        if args.out:
            Path(args.out).write_text(bench.checkpoints_csv_text(exc.checkpoints))
        print(json.dumps(dict(status="diverged", detail=str(exc)),
                         sort_keys=True), file=sys.stderr)
        return EXIT_DIVERGED
    if args.out:
        bench.write_trace(trace, args.out)
    else:
        sys.stdout.write(bench.trace_csv_text(trace))
    last = trace.checkpoints[-1]
    summary = dict(
        solver=trace.solver,
        status="ok",
        stop_reason=trace.stop_reason,
        final_passes=trace.final_passes,
        final_objective=last.objective,
        final_rel_objective=last.relative_objective,
        final_rel_est_error=last.estimation_error,
        wall_s=trace.wall_time,
    )
    if inst.kind == "logistic":
        summary["train_misclassification"] = bench.misclassification_rate(
            trace.final_parameter, inst.design, inst.responses
        )
    if diag is not None:
        summary["diagnostics"] = dataclasses.asdict(diag)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    overrides = {}
    if args.passes is not None:
        overrides["pass_budget"] = args.passes
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    if args.solver:
        overrides["solvers"] = args.solver
    if args.eta:
        overrides["etas"] = args.eta
    if args.out is not None:
        overrides["out_dir"] = args.out
    cfg = bench.ExperimentConfig.from_json(args.config, overrides)
    rows, best = bench.sweep(cfg, jobs=args.jobs, measure_wall=args.time)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "summary.csv").write_text(bench.summary_csv_text(rows))
    (out_dir / "best.json").write_text(
        json.dumps(best, sort_keys=True, indent=2) + "\n"
    )
    diverged = any(row.status != "ok" for row in rows)
    print(json.dumps(dict(summary=str(out_dir / "summary.csv"),
                          best=best, diverged=diverged), sort_keys=True))
    return EXIT_DIVERGED if diverged else EXIT_OK


def cmd_verify(args) -> int:
    if args.check == "ht-lemma":
        report = dataclasses.asdict(
            verify.check_ht_lemma(args.trials, args.max_d, args.seed)
        )
    elif args.check == "svt-lemma":
        report = dataclasses.asdict(
            verify.check_svt_lemma(args.trials, args.max_dim, args.seed)
        )
    else:
        if args.instance is None:
            raise ValueError(f"--check {args.check} needs --instance")
        problem = bench.make_problem(datagen.load_instance(args.instance))
        if args.check == "vr-unbiasedness":
            report = verify.vr_unbiasedness_report(problem, args.trials, args.seed)
            report["check"] = "vr-unbiasedness"
        else:
            s = args.s if args.s is not None else min(problem.shape[0], 16)
            report = dataclasses.asdict(
                verify.estimate_rsc_rss(problem, s, args.trials, args.seed)
            )
            report["check"] = "rsc-rss"
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    handlers = dict(gen=cmd_gen, solve=cmd_solve, sweep=cmd_sweep,
                    verify=cmd_verify)
    try:
        return handlers[args.command](args)
    except (ValueError, TypeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
