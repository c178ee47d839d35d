"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 discovery-degenerate.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pdegen
from .errors import (
    AssemblyError,
    CflError,
    ConfigError,
    DegeneratePopulationError,
    DegenerateSystemError,
    ExtrapolationError,
    HeteroSolveError,
    InstabilityError,
    IntPdeError,
    RootSearchError,
    TrainingDivergedError,
    UnsupportedOrderError,
)
from .pipeline import (
    SWEEPS,
    DiscoveryReport,
    Pipeline,
    StageError,
    config_from_dict,
    list_presets,
    load_config,
    sweep,
    write_sweep_csv,
)

log = logging.getLogger("intpde")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_DEGENERATE = 0, 2, 3, 4
NUMERIC = (TrainingDivergedError, InstabilityError, CflError, AssemblyError, DegenerateSystemError,
           HeteroSolveError, RootSearchError, ExtrapolationError, UnsupportedOrderError)


def exit_code(exc: BaseException) -> int:
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, ConfigError):
        return EXIT_CONFIG
    if isinstance(cause, DegeneratePopulationError):
        return EXIT_DEGENERATE
    if isinstance(cause, NUMERIC):
        return EXIT_NUMERIC
    if isinstance(cause, (ValueError, TypeError)) and not isinstance(cause, IntPdeError):
        # bad solver keyword or value coming straight from the config
        return EXIT_CONFIG
    return EXIT_NUMERIC


def _config(args):
    if args.report:
        report = DiscoveryReport.from_json(Path(args.report).read_text(encoding="utf-8"))
        cfg = config_from_dict(report.config)
    elif args.config:
        cfg = load_config(args.config)
    else:
        raise ConfigError("pass --config (file or preset name) or --report")
    if args.seed is not None:
        cfg = cfg.replace(**{"dataset.seed": args.seed, "surrogate.seed": args.seed, "discovery.seed": args.seed})
    return cfg


def _write_report(report: DiscoveryReport, out: Path, stem: str = "report") -> Path:
    path = out / f"{stem}.json"
    path.write_text(report.to_json(), encoding="utf-8")
    return path


def cmd_generate(args, cfg, out):
    pipe = Pipeline(cfg, out, args.threads)
    ds = pipe.dataset()
    path = out / f"{cfg.name}-dataset.csv"
    pdegen.write_dataset(ds, path)
    print(path)


def cmd_train(args, cfg, out):
    pipe = Pipeline(cfg, out, args.threads)
    pipe.network()
    print(out / "cache" / f"train-{pipe.hashes['train']}.json")


def _discover(args, cfg, out, hetero: bool):
    if hetero and cfg.discovery.mode != "hetero":
        raise ConfigError("discover-hetero needs discovery.mode: hetero")
    if not hetero and cfg.discovery.mode == "hetero":
        raise ConfigError("use discover-hetero for hetero configs")
    report = Pipeline(cfg, out, args.threads).run()
    path = _write_report(report, out)
    print(report.equation)
    if report.stability is not None:
        print(f"stability S = {report.stability:.2f}")
    for row in report.cv_table or []:
        print(f"  {row['term']}: mean {row['mean']:.4g}  cv {row['cv_percent']:.2f}%  {row['kind']}")
    print(path)


def cmd_discover(args, cfg, out):
    _discover(args, cfg, out, hetero=False)


def cmd_discover_hetero(args, cfg, out):
    _discover(args, cfg, out, hetero=True)


def cmd_evaluate(args, cfg, out):
    report = Pipeline(cfg, out, args.threads).run()
    path = _write_report(report, out, "evaluation")
    print(json.dumps({k: getattr(report, k) for k in (
        "equation", "solution_error_percent", "coefficient_error_percent", "support_recovered", "field_error_median")},
        indent=1))
    print(path)


def cmd_sweep(args, cfg, out):
    values = [int(v) if args.param == "samples" else (v if v == "2dx" else float(v)) for v in args.values]
    rows = sweep(cfg, args.param, values, out, args.threads)
    path = out / f"sweep-{args.param}.csv"
    write_sweep_csv(rows, path)
    for row in rows:
        print(f"{row[args.param]}: {row['equation']}  support={row['support_recovered']}  "
              f"error={row['solution_error_percent']}")
    print(path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="intpde", description="Integral-form PDE discovery experiments.")
    parser.add_argument("--seed", type=int, default=None, help="override every seed in the config")
    parser.add_argument("--out-dir", default="runs", help="artifact directory (default: runs)")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for GA fitness and windows")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help=f"YAML file or preset ({', '.join(list_presets())})")
        p.add_argument("--report", help="reuse the config echoed in a previous report")
        p.set_defaults(func=fn)
        return p

    add("generate", cmd_generate, "solve the reference PDE and write the dataset CSV")
    add("train", cmd_train, "train the surrogate network")
    add("discover", cmd_discover, "constant-coefficient discovery (integral or differential mode)")
    add("discover-hetero", cmd_discover_hetero, "window vote plus coefficient-series solve")
    add("evaluate", cmd_evaluate, "run and report the posterior errors")
    p = add("sweep", cmd_sweep, "repeat discovery over one varied setting")
    p.add_argument("--param", required=True, choices=sorted(SWEEPS))
    p.add_argument("--values", nargs="*", default=[])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "sweep" and not args.values:
        parser.error("sweep needs at least one value in --values")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    out = Path(args.out_dir)
    try:
        cfg = _config(args)
        out.mkdir(parents=True, exist_ok=True)
        args.func(args, cfg, out)
    except (IntPdeError, ValueError, TypeError) as exc:
        code = exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
