"""Command-line front end: ``cbso {run,check,sweep,oracle,export}``.

Exit codes: 0 success, 1 failed check, 2 configuration or input error,
3 non-finite iterate.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import checks as _checks
from . import logio
from .config import (AXIS_ALIASES, ConfigError, build_experiment, build_probe, cmdp_sup_norms, config_text,
                     parse_override, resolve_config)
from .core import NonFiniteIterate, epsilon_lambda, violation_terms
from .driver import run_cbso

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NONFINITE = 0, 1, 2, 3
OUTPUT_ROOT_ENV = "CBSO_OUTPUT_ROOT"
COMMANDS = ("run", "check", "sweep", "oracle", "export")


@dataclass
class ExperimentManifest:
    command: str
    config_path: Optional[str] = None
    output_dir: Optional[str] = None
    overrides: list = field(default_factory=list)
    suite: str = "default"
    axis: Optional[str] = None
    values: Optional[str] = None
    log_path: Optional[str] = None

    def out(self) -> Path:
        if self.output_dir:
            p = Path(self.output_dir)
        else:
            p = Path(os.environ.get(OUTPUT_ROOT_ENV, "cbso_runs")) / self.command
        p.mkdir(parents=True, exist_ok=True)
        return p


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


# ---------------------------------------------------------------- run

def execute_run(cp, out: Path) -> dict:
    """Run one experiment into ``out``; returns a summary dict. Raises ConfigError/NonFiniteIterate."""
    exp = build_experiment(cp)
    probe = build_probe(cp, exp)
    (out / "config.ini").write_text(config_text(cp), encoding="utf-8")
    ckpt = out / "checkpoint.bin"
    inner_path = out / "inner.jsonl"

    def on_checkpoint(st):
        logio.write_checkpoint(ckpt, st.x, st.y, st.z, st.t)

    try:
        state = run_cbso(exp.cfg, exp.problem, exp.x0, exp.y0, exp.z0, probe=probe, on_checkpoint=on_checkpoint)
    except NonFiniteIterate as e:
        dump = {k: np.asarray(v).tolist() if v is not None else None for k, v in (e.state or {}).items()}
        (out / "nonfinite_state.json").write_text(json.dumps({"error": str(e), "state": dump}, sort_keys=True),
                                                  encoding="utf-8")
        raise
    records = [r.as_dict() for r in state.log]
    logio.write_log(out / "log.jsonl", records)
    logio.write_metrics(out / "metrics.csv", records)
    logio.write_checkpoint(ckpt, state.x, state.y, state.z, state.t)
    if exp.cfg.log_inner:
        logio.write_log(inner_path, [s.as_dict() for s in state.inner_log])
    final = records[-1]
    summary = {
        "track": exp.track,
        "problem": exp.name,
        "T": exp.cfg.T,
        "x_T": [float(v) for v in state.x],
        "h_of_y": final["h_of_y"],
        "h_plus_y": final["h_plus_y"],
        "h_plus_z": final["h_plus_z"],
        "g_gap": final["g_y"] - final["g_z"],
        "phi_hat_grad_norm": final["phi_hat_grad_norm"],
    }
    c_f, c_g = _sup_norms(exp)
    summary["epsilon_lambda"] = epsilon_lambda(c_f, c_g, exp.cfg.coeffs)
    summary["violation_bounds"] = list(violation_terms(c_f, c_g, exp.cfg.coeffs))
    env = [r["envelope_grad_norm"] for r in records if r["envelope_grad_norm"] is not None]
    if len(env) >= 2:
        from .analysis import fit_rate, running_average
        ts = [r["t"] + 1 for r in records if r["envelope_grad_norm"] is not None]
        ra = running_average(np.square(env))
        try:
            summary["rate_slope"] = fit_rate(list(zip(ts, ra)), (min(20, ts[-1] // 2), ts[-1])).slope
        except ValueError:
            summary["rate_slope"] = None
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return summary


def _sup_norms(exp):
    if exp.track == "synthetic":
        from .synthetic import sup_norms
        c_f, c_g, _ = sup_norms(exp.problem.problem)
        return c_f, c_g
    return cmdp_sup_norms(exp.problem)


def cmd_run(m: ExperimentManifest) -> int:
    try:
        cp = resolve_config(m.config_path, m.overrides)
        out = m.out()
        s = execute_run(cp, out)
    except ConfigError as e:
        _err(e)
        return EXIT_CONFIG
    except NonFiniteIterate as e:
        _err(e)
        return EXIT_NONFINITE
    print(f"x_T = {s['x_T']}  h(y_T) = {s['h_of_y']:.6g}  -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- check

def cmd_check(m: ExperimentManifest) -> int:
    try:
        names = _checks.parse_suite(m.suite)
        seed = int(resolve_config(m.config_path, m.overrides)["run"]["seed"])
        rep = _checks.run_suites(names, seed=seed)
    except (ConfigError, KeyError, ValueError) as e:
        _err(e)
        return EXIT_CONFIG
    table = rep.to_table()
    (m.out() / "check_report.csv").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return EXIT_OK if rep.passed else EXIT_CHECK_FAILED


# ---------------------------------------------------------------- sweep

SWEEP_COLUMNS = ["axis", "value", "h_plus_y", "h_plus_z", "g_gap", "phi_hat_grad_norm", "epsilon_lambda",
                 "bound_h_plus_z", "bound_g_gap", "bound_h_plus_y", "rate_slope", "x_T"]


def cmd_sweep(m: ExperimentManifest) -> int:
    if not m.axis:
        _err("sweep needs --axis")
        return EXIT_CONFIG
    values = [v.strip() for v in (m.values or "").split(",") if v.strip()]
    if not values:
        _err("sweep needs a non-empty --values list")
        return EXIT_CONFIG
    key = AXIS_ALIASES.get(m.axis, m.axis)
    out = m.out()
    rows = []
    for v in values:
        child = out / f"{m.axis}={v}"
        child.mkdir(exist_ok=True)
        try:
            parse_override(f"{key}={v}")
            cp = resolve_config(m.config_path, list(m.overrides) + [f"{key}={v}"])
            s = execute_run(cp, child)
        except ConfigError as e:
            _err(f"{m.axis}={v}: {e}")
            return EXIT_CONFIG
        except NonFiniteIterate as e:
            _err(f"{m.axis}={v}: {e}")
            return EXIT_NONFINITE
        b = s["violation_bounds"]
        rows.append([m.axis, v] + [logio._fmt(s[k]) for k in ("h_plus_y", "h_plus_z", "g_gap",
                                                                "phi_hat_grad_norm", "epsilon_lambda")]
                    + [logio._fmt(x) for x in b] + [logio._fmt(s.get("rate_slope")),
                                                    " ".join(logio._fmt(x) for x in s["x_T"])])
    with open(out / "sweep_summary.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        w.writerows(rows)
    with open(out / "sweep_summary.csv", encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    return EXIT_OK


# ---------------------------------------------------------------- oracle

def cmd_oracle(m: ExperimentManifest) -> int:
    from .synthetic import InfeasibleEverywhere, grid_bilevel_oracle
    try:
        cp = resolve_config(m.config_path, m.overrides)
        exp = build_experiment(cp)
        if exp.track != "synthetic":
            raise ConfigError("the grid oracle needs run.track = synthetic")
        res = grid_bilevel_oracle(exp.problem.problem, exp.cfg.coeffs)
    except (ConfigError, InfeasibleEverywhere) as e:
        _err(e)
        return EXIT_CONFIG
    out = m.out()
    res.to_csv(out / "oracle.csv")
    print(f"{exp.name}: best_x = {np.asarray(res.best_x).tolist()}  "
          f"best_x_original = {np.asarray(res.best_x_original).tolist()}  -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- export

def cmd_export(m: ExperimentManifest) -> int:
    out = m.out()
    log = Path(m.log_path) if m.log_path else out / "log.jsonl"
    if not log.is_file():
        _err(f"run log {log} not found")
        return EXIT_CONFIG
    try:
        records = logio.read_log(log)
    except logio.MalformedLog as e:
        _err(e)
        return EXIT_CONFIG
    logio.write_metrics(out / "metrics.csv", records)
    logio.write_long_metrics(out / "metrics_long.csv", records)
    print(f"{len(records)} records -> {out / 'metrics.csv'}, {out / 'metrics_long.csv'}")
    return EXIT_OK


HANDLERS = {"run": cmd_run, "check": cmd_check, "sweep": cmd_sweep, "oracle": cmd_oracle, "export": cmd_export}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cbso", description="Constrained bilevel subgradient optimization runs and checks.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override section.key (repeatable)")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV}/<command>)")
        p.add_argument("--seed", type=int, help="shorthand for --set run.seed=N")
        if name == "check":
            p.add_argument("--suite", default="default", help="default, none, or comma-separated suite names")
        if name == "sweep":
            p.add_argument("--axis", help="sigma1, sigma2, sigma3, a, B, K or section.key")
            p.add_argument("--values", help="comma-separated values")
        if name == "export":
            p.add_argument("--log", help="run log to convert (default <out>/log.jsonl)")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    m = ExperimentManifest(args.command, args.config, args.out, overrides,
                           suite=getattr(args, "suite", "default"), axis=getattr(args, "axis", None),
                           values=getattr(args, "values", None), log_path=getattr(args, "log", None))
    return HANDLERS[args.command](m)


if __name__ == "__main__":
    sys.exit(main())
