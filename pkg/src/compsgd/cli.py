"""Command-line front end.

Subcommands:
  run <config>                         simulate and write per-seed CSV traces
  sweep <config> --axis K --values V   grid along one config key, print table
  verify-compressor <spec> --dim D     Monte Carlo check of the moment bounds
  tune <config>                        lemma-tuned stepsize and theorem cap

Exit codes: 0 success, 2 validation error, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import tuning
from .algorithms import default_x0
from .compressors import estimate_moments, parse_compressor
from .errors import InvariantViolation, ValidationError
from .harness import (build_algo_config, build_suite, compare_scaling,
                      load_experiment_config, run_experiment)
from .problems import f_value
from .rng import RngStream


def _build_parser():
    p = argparse.ArgumentParser(prog="compsgd",
                                description="distributed SGD with lossy gradient compression")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("run", help="run one experiment config")
    q.add_argument("config")
    q.add_argument("--jobs", type=int, default=1)
    q.add_argument("--out", help="override run.out")

    q = sub.add_parser("sweep", help="run a one-axis grid of configs")
    q.add_argument("config")
    q.add_argument("--axis", required=True, help="config key, e.g. algo.gamma")
    q.add_argument("--values", required=True, help="comma-separated axis values")
    q.add_argument("--jobs", type=int, default=1)

    q = sub.add_parser("verify-compressor", help="Monte Carlo moment check")
    q.add_argument("spec")
    q.add_argument("--dim", type=int, required=True)
    q.add_argument("--samples", type=int, default=100_000)
    q.add_argument("--vectors", type=int, default=5)
    q.add_argument("--seed", type=int, default=0)

    q = sub.add_parser("tune", help="lemma-tuned stepsize for a config")
    q.add_argument("config")
    q.add_argument("--objective", default=tuning.STRONGLY_CONVEX,
                   choices=tuning.OBJECTIVE_CLASSES)
    return p


def _cmd_run(args) -> int:
    cfg = load_experiment_config(args.config)
    if args.out:
        cfg.run["out"] = args.out
    result = run_experiment(cfg, jobs=args.jobs)
    for seed in cfg.seeds:
        tr = result.trace(seed)
        line = (f"seed {seed}: T={tr.n_rounds} "
                f"final f_gap={tr.f_gap[-1]:.6e} grad_sq={tr.grad_norm_sq[-1]:.6e}")
        if seed in result.csv_paths:
            line += f" -> {result.csv_paths[seed]}"
        print(line)
    return 0


def _cmd_sweep(args) -> int:
    base = load_experiment_config(args.config)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ValidationError("--values is empty")
    grid = []
    for v in values:
        section, _, name = args.axis.partition(".")
        if section not in ("suite", "algo", "run") or not name:
            raise ValidationError(f"bad axis {args.axis!r}")
        try:
            parsed = type(base.raw[args.axis])(v) if args.axis in base.raw else float(v)
        except ValueError:
            parsed = v
        grid.append(base.with_value(args.axis, parsed))
    report = compare_scaling(grid, axis=args.axis, jobs=args.jobs)
    print(report.table())
    return 0


def _cmd_verify_compressor(args) -> int:
    op = parse_compressor(args.spec, args.dim)
    gen = RngStream(args.seed).generator()
    failures = []
    print(f"operator {op.describe()}  d={op.d}  delta={op.delta}  omega={op.omega}")
    for v in range(args.vectors):
        x = gen.standard_normal(args.dim)
        rep = estimate_moments(op, x, args.samples, gen)
        msgs = []
        if op.is_quantizer:
            if rep.bias_z_max > 4.0:
                msgs.append(f"bias z={rep.bias_z_max:.2f} > 4")
            bound = (1.0 + op.omega) * (1.0 + 4.0 * rep.second_moment_stderr
                                        / max(rep.second_moment_ratio, 1e-300))
            if rep.second_moment_ratio > bound:
                msgs.append(f"second moment {rep.second_moment_ratio:.4f} > {bound:.4f}")
        if op.is_compressor:
            bound = (1.0 - op.delta) + 4.0 * rep.contraction_stderr
            if rep.contraction_ratio > bound + 1e-12:
                msgs.append(f"contraction {rep.contraction_ratio:.4f} > {bound:.4f}")
        status = "ok" if not msgs else "VIOLATION: " + "; ".join(msgs)
        print(f"  x[{v}]: bias_norm={rep.bias_norm:.3e} "
              f"second_moment={rep.second_moment_ratio:.4f}"
              f"(se {rep.second_moment_stderr:.1e}) "
              f"contraction={rep.contraction_ratio:.4f}"
              f"(se {rep.contraction_stderr:.1e})  {status}")
        failures.extend(msgs)
    if failures:
        raise InvariantViolation(f"{len(failures)} moment bound(s) violated")
    return 0


def _cmd_tune(args) -> int:
    cfg = load_experiment_config(args.config)
    suite = build_suite(cfg)
    algo = build_algo_config(cfg, suite, cfg.seeds[0])
    x0 = default_x0(suite, algo)
    dx = x0 - suite.x_star
    params = tuning.SuiteParams(L=suite.L, mu=suite.mu, sigma=suite.sigma,
                                zeta_sq=suite.zeta_star_sq, Z_sq=1.0, n=suite.n,
                                zeta_star_sq=suite.zeta_star_sq,
                                x0_dist_sq=float(dx @ dx),
                                f0_gap=float(f_value(suite, x0) - suite.f_star))
    comp = tuning.CompressorParams(
        delta=algo.compressor.delta if algo.compressor else 1.0,
        omega=algo.quantizer.omega if algo.quantizer else 0.0,
        alpha=algo.alpha, beta=algo.beta)
    consts = tuning.theorem_constants(algo.algorithm, params, comp, args.objective)
    if args.objective == tuning.STRONGLY_CONVEX:
        tuned = tuning.tune_strongly_convex(consts, cfg.run["T"])
    else:
        tuned = tuning.tune_sublinear(consts, cfg.run["T"])
    cap = tuning.theorem_stepsize_cap(algo.algorithm, params, comp)
    print(f"algorithm        {algo.algorithm}")
    print(f"objective        {args.objective}")
    print(f"constants        A={consts.A:.6g} B={consts.B:.6g} C={consts.C:.6g} "
          f"D={consts.D:.6g} E={consts.E:.6g} F={consts.F:.6g} r0={consts.r0:.6g}")
    print(f"tuned gamma      {tuned.gamma:.12g}")
    print(f"tau              {'-' if tuned.tau is None else format(tuned.tau, '.12g')}")
    print(f"branch           {tuned.branch}")
    print(f"theorem cap      {cap:.12g}")
    return 0


_COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep,
             "verify-compressor": _cmd_verify_compressor, "tune": _cmd_tune}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
