"""Command-line front end.

    refracted-stopping solve --config case1.yaml --out-dir out
    refracted-stopping compare-mc --config case1.yaml --m-list 1,2,3 --seed 7
    refracted-stopping eval --config out/summary.json 5.2 5.8 6.1

Exit codes: 0 success, 2 configuration error, 3 model assumption violated,
4 numerical failure. Failures print ``<ErrorClass>: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from .config import load_config, parse_grid, parse_m_list
from .errors import AssumptionViolated, ConfigError, NumericalError, SolverError
from .recursion import base_case, erlang_expectation, evaluate, solve
from .simulation import ConstantHorizon, ErlangHorizon, SimulationConfig, estimate_expectation


def fmt(value):
    """Full double precision with a '.' separator, independent of locale."""
    return format(float(value), ".17g")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        writer.writerows(rows)


def _complex_pair(z):
    return [float(np.real(z)), float(np.imag(z))]


def _diagnostics_record(diag):
    return {
        "stage": diag.stage,
        "substep": diag.substep,
        "continuity": diag.continuity,
        "imag_residue": diag.imag_residue,
        "conjugacy": diag.conjugacy,
        "threshold_residual": diag.threshold_residual,
        "sign_changes": diag.sign_changes,
    }


def _apply_overrides(cfg, args):
    if getattr(args, "out_dir", None):
        cfg.out_dir = Path(args.out_dir)
    if getattr(args, "seed", None) is not None:
        cfg.mc["seed"] = args.seed
    if getattr(args, "grid", None):
        cfg.grid = parse_grid(args.grid)
    if getattr(args, "m_list", None):
        cfg.mc["m_list"] = parse_m_list(args.m_list)
    return cfg


def _solve(cfg):
    return solve(cfg.model, cfg.alpha_rate, cfg.K, cfg.delta, cfg.N, cfg.M, cfg.continuity_tol)


def cmd_solve(cfg):
    result = _solve(cfg)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)

    stage_thresholds = list(result.thresholds)
    _write_csv(out / "thresholds.csv", ["stage", "threshold"], [[n, fmt(a)] for n, a in enumerate(stage_thresholds, 1)])

    xs = cfg.grid_points(result.thresholds)
    header = ["x"] + [f"v{n}" for n in range(1, len(result.stages) + 1)]
    rows = [[fmt(x)] + [fmt(evaluate(g, x)) for g in result.stages] for x in xs]
    _write_csv(out / "values.csv", header, rows)

    spec = result.spec
    summary = dict(cfg.raw)
    summary["results"] = {
        "thresholds": stage_thresholds,
        "drift_tilde": cfg.model.drift_tilde,
        "p": spec.p,
        "phi_p": spec.phi_p,
        "phi_prime_p": spec.phi_prime_p,
        "phi_alpha": result.phi_alpha,
        "roots": [_complex_pair(z) for z in spec.roots],
        "weights": [_complex_pair(k) for k in spec.weights],
        "root_residual": spec.max_residual,
        "timings": result.timings,
        "diagnostics": [_diagnostics_record(d) for d in result.diagnostics],
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    t = result.timings
    print(f"thresholds: {' '.join(fmt(a) for a in stage_thresholds)}")
    print(f"timings: {t['roots']:.3f}+{t['recursion']:.3f} s; wrote {out}")
    return 0


def _simulate(cfg, gamma, horizon, workers):
    mc = cfg.mc
    sim = SimulationConfig(
        paths=int(mc["paths"]),
        horizon=horizon,
        seed=int(mc["seed"]),
        steps_per_interarrival=int(mc["steps_per_interarrival"]),
        increments=mc["increments"],
        block_size=int(mc["block_size"]),
    )
    base = base_case(gamma.spec, gamma.phi_alpha, cfg.K, gamma.lam)
    t0 = time.perf_counter()
    est = estimate_expectation(cfg.model, base, gamma.thresholds[0], cfg.alpha_rate, sim, workers=workers)
    return est, time.perf_counter() - t0


def cmd_compare_mc(cfg, workers=1):
    """One row per Erlang shape: closed form at the first threshold against Monte Carlo."""
    rows = []
    for M in cfg.mc["m_list"]:
        gamma, _, timings = erlang_expectation(cfg.model, cfg.alpha_rate, cfg.K, cfg.delta, M, cfg.continuity_tol)
        closed = evaluate(gamma, gamma.thresholds[0])
        est, mc_time = _simulate(cfg, gamma, ErlangHorizon(M, M / cfg.delta), workers)
        rows.append([M, fmt(closed), fmt(est.mean), fmt(est.ci_low), fmt(est.ci_high),
                     fmt(timings["roots"]), fmt(timings["recursion"]), fmt(mc_time)])
        print(f"M={M}: closed {closed:.2f}  MC {est.mean:.2f} ({est.ci_low:.2f}, {est.ci_high:.2f})")
    if cfg.mc.get("constant"):
        gamma, _, _ = erlang_expectation(cfg.model, cfg.alpha_rate, cfg.K, cfg.delta, 1, cfg.continuity_tol)
        est, mc_time = _simulate(cfg, gamma, ConstantHorizon(cfg.delta), workers)
        rows.append(["const", "", fmt(est.mean), fmt(est.ci_low), fmt(est.ci_high), "", "", fmt(mc_time)])
        print(f"const: MC {est.mean:.2f} ({est.ci_low:.2f}, {est.ci_high:.2f})")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    header = ["M", "closed_form", "mc_mean", "ci_low", "ci_high", "root_time", "recursion_time", "mc_time"]
    _write_csv(cfg.out_dir / "compare.csv", header, rows)
    return 0


def cmd_eval(cfg, xs):
    if not xs:
        return 0
    result = _solve(cfg)
    for x in xs:
        print(fmt(evaluate(result.value, x)))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="refracted-stopping", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML or JSON configuration (a summary.json works too)")
        p.add_argument("--out-dir", help="override outputs.dir")
        p.add_argument("--seed", type=int, help="override numerics.mc.seed")
        p.add_argument("--grid", help="value grid as lo:hi:n")
        p.add_argument("--m-list", help="comma-separated Erlang shapes for compare-mc")

    common(sub.add_parser("solve", help="thresholds, value grids and summary"))
    p = sub.add_parser("compare-mc", help="closed form against Monte Carlo at the first threshold")
    common(p)
    p.add_argument("--workers", type=int, default=1, help="processes for the simulation")
    p = sub.add_parser("eval", help="print the N-th value function at the given points")
    common(p)
    p.add_argument("x", nargs="*", type=float)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "compare-mc":
            return cmd_compare_mc(cfg, workers=args.workers)
        return cmd_eval(cfg, args.x)
    except (ConfigError, AssumptionViolated, NumericalError, SolverError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
