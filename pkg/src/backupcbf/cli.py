"""Command-line front end.

    backupcbf run <config.json> [--out-dir DIR] [--quiet]
    backupcbf verify {kkt,oracle,sensitivity,invariance,all} [--quiet]

Exit codes: 0 success, 1 failed verification, 2 invalid config, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .config import ConfigError, load_plan
from .sim import SimulationAborted, compute_metrics, max_state_deviation, simulate
from .verify import SUITES, run_suite

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


def _fmt(v) -> str:
    return format(float(v) + 0.0, ".17g")


def csv_header(n: int, m: int) -> str:
    cols = ["t"] + [f"x{i}" for i in range(n)] + [f"u{j}" for j in range(m)]
    cols += ["mu", "h", "h_b", "h_I", "binding_index", "status", "step_wall_us"]
    return ",".join(cols)


def trajectory_csv(log, record_wall_time: bool = False) -> str:
    """Render a log; wall time is written as 0 unless requested, so output is reproducible."""
    lines = [csv_header(log.n, log.m)]
    for k in range(len(log)):
        row = [_fmt(log.t[k])]
        row += [_fmt(v) for v in log.x[k]]
        row += [_fmt(v) for v in log.u[k]]
        row += [_fmt(log.mu[k]), _fmt(log.h[k]), _fmt(log.h_b[k]), _fmt(log.h_I[k])]
        row += [str(log.binding_index[k]), log.status[k]]
        row.append(_fmt(log.step_wall_us[k] if record_wall_time else 0.0))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj) -> str:
    return json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n"


def cmd_run(config_path: str, out_dir: str | None, quiet: bool) -> int:
    try:
        plan = load_plan(config_path)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    base = Path(out_dir) if out_dir else (plan.out_dir or Path("."))
    bundle = len(plan.configs) > 1
    logs, metrics, code = {}, {}, EXIT_OK
    for name, cfg in plan.configs.items():
        stem = f"{plan.prefix}_{name}" if bundle else plan.prefix
        try:
            log = simulate(cfg)
            aborted = None
        except SimulationAborted as exc:
            log, aborted = exc.log, str(exc)
            print(f"error: {name}: {aborted}", file=sys.stderr)
            code = EXIT_NUMERICAL
        write_atomic(base / f"{stem}.csv", trajectory_csv(log, plan.record_wall_time))
        met = compute_metrics(log, cfg.plant.box, after_contact=True).as_dict() if len(log) else {}
        met.update(controller=name, scenario=plan.scenario, rows=len(log), aborted=aborted)
        logs[name], metrics[name] = log, met
        if not bundle:
            write_atomic(base / f"{stem}_summary.json", _dump(met))
        if not quiet:
            print(f"{name:10s} rows={len(log):6d} min_h={met.get('min_h', float('nan')):+.6g} "
                  f"input_violations={met.get('input_violations')} out_of_domain={met.get('out_of_domain_count')}")
        if aborted:
            break
    if bundle:
        names = list(logs)
        dev = {}
        for i, p in enumerate(names):
            for q in names[i + 1:]:
                if len(logs[p]) == len(logs[q]):
                    dev[f"{p}|{q}"] = max_state_deviation(logs[p], logs[q])
        write_atomic(base / f"{plan.prefix}_comparison.json",
                     _dump({"scenario": plan.scenario, "metrics": metrics, "max_state_deviation": dev}))
    return code


def cmd_verify(suite: str, seed: int, quiet: bool) -> int:
    results = run_suite(suite, seed)
    width = max(len(r.name) for r in results)
    for r in results:
        if not quiet or not r.passed:
            print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def _seed(default: int = 0) -> int:
    env = os.environ.get("SAFETY_SEED")
    if env is None:
        return default
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"SAFETY_SEED must be an integer, got {env!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="backupcbf", description="Input-bounded backup-CBF controllers.")
    p.add_argument("--quiet", action="store_true", help="print only errors and failures")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="simulate a scenario file")
    r.add_argument("config")
    r.add_argument("--out-dir", default=None, help="directory for CSV and JSON output")
    r.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    v = sub.add_parser("verify", help="run randomized property suites")
    v.add_argument("suite", choices=SUITES + ("all",))
    v.add_argument("--seed", type=int, default=0, help="RNG seed (SAFETY_SEED overrides)")
    v.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.config, args.out_dir, args.quiet)
        return cmd_verify(args.suite, _seed(args.seed), args.quiet)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
