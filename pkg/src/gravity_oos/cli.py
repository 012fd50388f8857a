"""Command-line entry point: ``run``, ``summary`` and ``synth`` subcommands."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from .dgp import DgpParams, generate_panel
from .harness import METHODS, ExperimentConfig, ExperimentError, emit_report, run_experiment
from .panel import PanelError, Schema, balance_panel, load_panel, write_panel
from .sampling import SCENARIOS

# flag destination -> config key; only flags actually given override the file
_OVERRIDES = {
    "data": "data",
    "synth": "synth",
    "scenario": "scenario",
    "a": "a",
    "b": "b",
    "reps": "reps",
    "methods": "methods",
    "seed": "seed",
    "r2_mode": "r2_mode",
    "out": "out",
    "format": "format",
    "jobs": "jobs",
    "levels": "levels",
    "window": "window",
    "required_count": "required_count",
    "year_rule": "year_rule",
}


def _load_yaml(path: str | Path) -> dict:
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise SystemExit(f"{path}: expected a mapping at the top level")
    return data


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Merge the optional config file with command-line flags (flags win)."""
    base_dir = None
    raw: dict = {}
    if args.config:
        raw = _load_yaml(args.config)
        base_dir = Path(args.config).resolve().parent
    given = {key: getattr(args, dest) for dest, key in _OVERRIDES.items() if getattr(args, dest) is not None}
    if "data" in given:
        raw.pop("synth", None)
    if "synth" in given:
        raw.pop("data", None)
        given["synth"] = _load_yaml(given["synth"])
    if "levels" in given:
        given["levels"] = [s for s in given["levels"].split(",") if s]
    raw.update(given)
    if "scenario" not in raw and "a" in raw and "b" in raw:
        raw["scenario"] = "custom"
    return ExperimentConfig.from_mapping(raw, base_dir)


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = build_config(args)
    except (ValueError, TypeError) as err:
        print(f"invalid configuration: {err}", file=sys.stderr)
        return 2
    try:
        result = run_experiment(config)
    except (PanelError, ExperimentError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    if config.out:
        print(f"wrote results to {config.out}", file=sys.stderr)
    print(emit_report(result.report, config.format), end="")
    return 0


def cmd_summary(args: argparse.Namespace) -> int:
    levels = [s for s in (args.levels or "").split(",") if s]
    panel = load_panel(args.path, Schema.default(levels), on_invalid="skip" if args.skip_invalid else "raise")
    if args.window:
        lo, hi = args.window
        panel = balance_panel(panel, (lo, hi), args.required_count or hi - lo + 1)
    print(panel.summary())
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    params = DgpParams.from_mapping(_load_yaml(args.params)) if args.params else DgpParams()
    if args.seed is not None:
        params = DgpParams.from_mapping({**_as_mapping(params), "seed": args.seed})
    panel, _ = generate_panel(params)
    write_panel(panel, args.out)
    print(f"wrote {len(panel)} rows to {args.out}", file=sys.stderr)
    return 0


def _as_mapping(params: DgpParams) -> dict:
    return {f: getattr(params, f) for f in params.__dataclass_fields__}


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gravity-oos", description="Out-of-sample evaluation of gravity models")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the repeated train/test experiment")
    src = r.add_mutually_exclusive_group()
    src.add_argument("--data", help="panel CSV")
    src.add_argument("--synth", help="YAML file with synthetic DGP parameters")
    r.add_argument("--config", help="YAML file mirroring these flags; flags override it")
    r.add_argument("--scenario", choices=sorted(SCENARIOS) + ["custom"])
    r.add_argument("--a", type=float, help="selection intercept (custom scenario)")
    r.add_argument("--b", type=float, help="selection slope on the standardized pair effect")
    r.add_argument("--reps", type=int, help="number of repetitions K")
    r.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    r.add_argument("--seed", type=int)
    r.add_argument("--r2-mode", dest="r2_mode", choices=["per-rep", "pooled"])
    r.add_argument("--out", help="output directory")
    r.add_argument("--format", choices=["markdown", "csv"])
    r.add_argument("--jobs", type=int)
    r.add_argument("--levels", help="comma-separated fields stored in levels (ln_gdp_o,ln_gdp_d,ln_dist)")
    r.add_argument("--window", type=int, nargs=2, metavar=("FIRST", "LAST"))
    r.add_argument("--required-count", dest="required_count", type=int)
    r.add_argument("--year-rule", dest="year_rule", choices=["position", "percentile"])
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("summary", help="print panel summary statistics")
    s.add_argument("path")
    s.add_argument("--levels")
    s.add_argument("--window", type=int, nargs=2, metavar=("FIRST", "LAST"))
    s.add_argument("--required-count", dest="required_count", type=int)
    s.add_argument("--skip-invalid", action="store_true")
    s.set_defaults(func=cmd_summary)

    g = sub.add_parser("synth", help="write a synthetic panel as CSV")
    g.add_argument("--params", help="YAML file with DGP parameters")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_synth)
    return p


def main(argv: list[str] | None = None) -> int:
    args = parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
