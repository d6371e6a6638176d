"""Command line entry point: ``mdlab run``, ``mdlab list`` and ``mdlab check-losses``."""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .experiments import EXPERIMENTS, ExperimentConfig, list_experiments, run_experiment
from .losses import loss_property_suite

RUN_KEYS = {"experiment": str, "seed": int, "trials": int, "t": int, "eta": float, "eta_scale": float, "delta": float, "jobs": int, "out": str}


class ConfigError(ValueError):
    pass


def _coerce(key: str, value, where: str):
    if key not in RUN_KEYS:
        raise ConfigError(f"{where}: unknown field {key!r}")
    try:
        return RUN_KEYS[key](value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: field {key!r} has invalid value {value!r}") from None


def _parse_override(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def load_config(path: Path) -> tuple[dict, dict]:
    """Read a run config: JSON or ``key = value`` text with ``[run]`` and ``[source]`` sections.

    Returns the run fields and the source overrides.
    """
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from None
        overrides = raw.pop("source_overrides", {})
        if "output_dir" in raw:
            raw["out"] = raw.pop("output_dir")
        return {k: _coerce(k, v, str(path)) for k, v in raw.items()}, dict(overrides)
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for section in parser.sections():
        if section not in ("run", "source"):
            raise ConfigError(f"{path}: unknown section [{section}]")
    fields = {}
    if parser.has_section("run"):
        for key, value in parser.items("run"):
            fields[key] = _coerce(key, value, f"{path} [run]")
    overrides = {}
    if parser.has_section("source"):
        overrides = {k: _parse_override(v) for k, v in parser.items("source")}
    return fields, overrides


def _print_constants(report: dict) -> None:
    bound = report.get("bound")
    if not bound:
        return
    print(f"  {'constant':<16}value")
    for key in ("theorem", "eta_ceiling", "B_w", "failure_budget", "horizon_ceiling", "rhs_at_t"):
        if key in bound:
            print(f"  {key:<16}{bound[key]}")


def cmd_run(args) -> int:
    fields, overrides = {}, {}
    if args.config:
        fields, overrides = load_config(args.config)
    experiment = args.experiment or fields.pop("experiment", None)
    fields.pop("experiment", None)
    if experiment is None:
        raise ConfigError("no experiment given")
    for key in ("seed", "trials", "t", "eta", "eta_scale", "delta", "jobs", "out"):
        value = getattr(args, key)
        if value is not None:
            fields[key] = value
    out = fields.pop("out", None)
    cfg = ExperimentConfig(experiment, output_dir=Path(out) if out else None, source_overrides=overrides, **fields)
    result = run_experiment(cfg)
    print(f"{experiment}: {'PASS' if result.exit_code == 0 else 'FAIL'}")
    for name, ok in result.outcome.checks.items():
        print(f"  [{'ok' if ok else 'FAIL'}] {name}")
    _print_constants(result.outcome.report)
    print(f"artifacts in {result.out_dir}")
    if result.exit_code:
        print(f"see {result.report_path}", file=sys.stderr)
    return result.exit_code


def cmd_list(args) -> int:
    rows = list_experiments()
    if args.json:
        print(json.dumps(rows, indent=2))
        return 0
    width = max(len(r["name"]) for r in rows)
    for r in rows:
        defaults = " ".join(f"{k}={v}" for k, v in r["defaults"].items())
        print(f"{r['name']:<{width}}  {r['anchor']:<45}  {defaults}")
    return 0


def cmd_check_losses(args) -> int:
    reports = loss_property_suite()
    for r in reports:
        print(f"[{'ok' if r.passed else 'FAIL'}] {r.loss:<9} {r.prop:<32} max violation {r.max_violation:.3e}")
    return 0 if all(r.passed for r in reports) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdlab", description="Mirror descent and TD experiment harness.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a named experiment")
    run.add_argument("experiment", nargs="?", choices=sorted(EXPERIMENTS))
    run.add_argument("--seed", type=int)
    run.add_argument("--trials", type=int)
    run.add_argument("--t", type=int)
    run.add_argument("--eta", type=float)
    run.add_argument("--eta-scale", dest="eta_scale", type=float)
    run.add_argument("--delta", type=float)
    run.add_argument("--jobs", type=int)
    run.add_argument("--config", type=Path)
    run.add_argument("--out", type=str, help="output directory (default $MDLAB_OUT/<experiment>)")
    run.set_defaults(func=cmd_run)

    lst = sub.add_parser("list", help="list experiments")
    lst.add_argument("--json", action="store_true")
    lst.set_defaults(func=cmd_list)

    chk = sub.add_parser("check-losses", help="check the declared loss constants")
    chk.set_defaults(func=cmd_check_losses)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        parser.error(str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())
