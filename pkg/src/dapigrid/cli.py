"""Command-line front end.

Modes: simulate (trajectory + events log + summary), analyze (stability
report), trace (gain sweep eigenvalues), plot (render CSVs already in the
output directory). Exit codes: 1 parse, 2 validation, 3 numeric,
4 no-convergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (build_linear_voltage_system, check_stability_conditions,
                       eigen_trace, trace_to_csv)
from .errors import DapigridError, ValidationError, exit_code_for
from .metrics import trajectory_metrics
from .plots import emit_plots
from .scenario import GAIN_NAMES, parse_scenario
from .simulation import integrate, write_events_log


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dapigrid",
        description="Droop/DAPI microgrid simulator and small-signal toolkit")
    p.add_argument("mode", choices=("simulate", "analyze", "trace", "plot"))
    p.add_argument("--scenario", help="scenario JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--gain", choices=GAIN_NAMES, help="gain to sweep (trace mode)")
    p.add_argument("--from", dest="sweep_from", type=float, metavar="V",
                   help="sweep start (trace mode)")
    p.add_argument("--to", dest="sweep_to", type=float, metavar="V",
                   help="sweep end (trace mode)")
    p.add_argument("--points", type=int, help="sweep grid size (trace mode)")
    p.add_argument("--seed", type=int, help="echoed into report metadata")
    p.add_argument("--version", action="version", version=f"dapigrid {__version__}")
    return p


def _apply_tol_env(scn):
    tol = os.environ.get("DAPIGRID_TOL")
    if not tol:
        return scn
    try:
        val = float(tol)
    except ValueError:
        raise ValidationError(f"DAPIGRID_TOL is not a number: {tol!r}") from None
    if val <= 0:
        raise ValidationError("DAPIGRID_TOL must be positive")
    return replace(scn, sim=replace(scn.sim, rtol=val, atol=val))


def _summary(rows):
    width = max(len(label) for label, _ in rows)
    for label, value in rows:
        print(f"{label:<{width}}  {value}")


def _fmt(x, unit=""):
    return f"{x:.6e}{(' ' + unit) if unit else ''}"


def _run_simulate(scn, out: Path) -> int:
    traj = integrate(scn)
    traj.to_csv(out / "trajectory.csv")
    write_events_log(traj.events, out / "events.log")
    met = trajectory_metrics(scn.controllers, traj)
    report = check_stability_conditions(
        build_linear_voltage_system(scn.network, scn.controllers, scn.graph_b))
    _summary([
        ("scenario", scn.name),
        ("samples", str(traj.t.size)),
        ("final f deviation", _fmt(met.frequency_deviation_hz, "Hz")),
        ("P sharing spread", f"{_fmt(met.p_spread)} (rel {met.p_spread_rel:.3e})"),
        ("Q sharing spread", _fmt(met.q_spread)),
        ("max |E - E*|", _fmt(met.voltage_spread, "V")),
        ("voltage condition W1", "pass" if report.w1_condition else "FAIL"),
        ("voltage condition W2", "pass" if report.w2_condition else "FAIL"),
    ])
    return 0


def _run_analyze(scn, out: Path, seed) -> int:
    report = check_stability_conditions(
        build_linear_voltage_system(scn.network, scn.controllers, scn.graph_b))
    doc = {
        "scenario": scn.name,
        "report": report.to_dict(),
        "metadata": {
            "seed": seed,
            "rtol": scn.sim.rtol,
            "atol": scn.sim.atol,
        },
    }
    (out / "stability.json").write_text(json.dumps(doc, indent=2) + "\n")
    _summary([
        ("scenario", scn.name),
        ("lambda_min(W1+W1')", _fmt(report.lambda_min_w1)),
        ("lambda_min(W2+W2')", _fmt(report.lambda_min_w2)),
        ("condition W1", "pass" if report.w1_condition else "FAIL"),
        ("condition W2", "pass" if report.w2_condition else "FAIL"),
        ("max Re(eig W)", _fmt(float(np.max(report.eigenvalues.real)))),
    ])
    return 0


def _run_trace(scn, out: Path, args) -> int:
    gain = args.gain
    if gain is None and scn.analysis is not None:
        gain = scn.analysis.gain
    if gain is None:
        raise ValidationError("trace mode needs --gain (or an analysis section)")
    explicit = [args.sweep_from, args.sweep_to, args.points]
    grid = None
    if any(v is not None for v in explicit):
        if any(v is None for v in explicit):
            raise ValidationError("--from, --to and --points must be given together")
        if args.sweep_from <= 0 or args.sweep_to <= args.sweep_from:
            raise ValidationError("sweep range must satisfy 0 < from < to")
        if args.points < 2:
            raise ValidationError("--points must be at least 2")
        grid = np.geomspace(args.sweep_from, args.sweep_to, args.points)
    trace = eigen_trace(scn, gain, grid=grid)
    trace_to_csv(trace, out / "trace.csv")
    rows = [
        ("scenario", scn.name),
        ("gain", gain),
        ("grid points", str(trace.grid.size)),
    ]
    if trace.eigenvalues.size:
        rows.append(("max Re over trace",
                     _fmt(float(np.max(trace.eigenvalues.real)))))
    for wmsg in trace.warnings:
        rows.append(("warning", wmsg))
    _summary(rows)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.mode == "plot":
            for path in emit_plots(out):
                print(path)
            return 0
        if not args.scenario:
            raise ValidationError(f"mode {args.mode!r} requires --scenario")
        scn = _apply_tol_env(parse_scenario(args.scenario))
        if args.mode == "simulate":
            return _run_simulate(scn, out)
        if args.mode == "analyze":
            return _run_analyze(scn, out, args.seed)
        return _run_trace(scn, out, args)
    except DapigridError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
