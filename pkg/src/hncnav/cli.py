"""Command-line entry point: simulate, train, fuse, evaluate, plotdata."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, NumericalFailure, TrainingDiverged
from .evaluation import RECOVERY_S, evaluate_suite, load_report, render_table, save_report
from .harness import STRATEGY_KINDS, FilterConfig, FusionStrategy, run_fusion
from .io import load_runlog, load_scenario, save_runlog, save_scenario, write_output_csv
from .plotdata import export_plot_data
from .regressor import MissingPattern, TrainConfig, load_model, save_model
from .geometry import build_beam_geometry
from .pipeline import TEST_OUTAGE_START, train_pattern
from .sim import outage_scenario, simulate, training_corpus, validation_corpus

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("hncnav")


def _pattern(text: str) -> MissingPattern:
    try:
        return MissingPattern(tuple(int(b) for b in text.replace(" ", "").split(",")))
    except ValueError as exc:
        raise ConfigurationError(f"bad missing-beam list {text!r}: {exc}") from exc


def cmd_simulate(args) -> int:
    if args.scenario:
        configs = [load_scenario(args.scenario)]
    elif args.preset == "test":
        configs = [outage_scenario(_pattern(args.missing), start=args.outage_start, seed=args.seed)]
    elif args.preset == "train":
        configs = training_corpus(args.seed)
    elif args.preset == "val":
        configs = validation_corpus()
    else:
        raise ConfigurationError("give --scenario FILE or --preset {test,train,val}")
    out = Path(args.out)
    for cfg in configs:
        target = out if len(configs) == 1 else out / cfg.name
        save_runlog(simulate(cfg), target)
        print(f"wrote {target}")
    return EXIT_OK


def cmd_scenario(args) -> int:
    cfg = outage_scenario(_pattern(args.missing), start=args.outage_start, seed=args.seed)
    save_scenario(cfg, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    pattern = _pattern(args.missing)
    logs = [load_runlog(d) for d in args.runs]
    val = [load_runlog(d) for d in args.val] if args.val else []
    cfg = TrainConfig(epochs=args.epochs, learning_rate=args.lr, seed=args.seed)
    trained = train_pattern(logs, pattern, cfg, val, seed=args.seed)
    save_model(trained.model, args.out)
    print(f"loss {trained.result.losses[0]:.6f} -> {trained.result.losses[-1]:.6f}; wrote {args.out}")
    if val:
        print(f"validation mse {trained.val_mse:.6f} (average estimator {trained.val_mse_average:.6f})")
    return EXIT_OK


def _load_models(paths):
    models = {}
    for p in paths or ():
        m = load_model(p)
        models[m.pattern] = m
    return models


def cmd_fuse(args) -> int:
    run = load_runlog(args.run)
    models = _load_models(args.model)
    strategy = FusionStrategy(args.strategy, models=models, regressed_R_inflation=args.r_inflation)
    cfg = run.config
    fcfg = FilterConfig.for_imu(cfg.imu, cfg.imu_rate_hz) if cfg is not None else None
    if fcfg is None:
        raise ConfigurationError("run log has no scenario manifest to derive the filter noise from")
    geom = build_beam_geometry(np.radians(cfg.theta_deg))
    out = run_fusion(run, strategy, fcfg, geom)
    write_output_csv(out, args.out)
    err = out.vel - run.truth.vel
    print(f"velocity rms error {np.sqrt(np.mean(np.sum(err * err, axis=1))):.4f} m/s; "
          f"{out.regressor_calls} regressor calls; wrote {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    items = [load_runlog(d) for d in args.runs or ()] + [load_scenario(s) for s in args.scenarios or ()]
    if not items:
        raise ConfigurationError("nothing to evaluate: give --runs and/or --scenarios")
    strategies = args.strategies or STRATEGY_KINDS
    reports = evaluate_suite(items, strategies, _load_models(args.models), recovery=args.recovery,
                             workers=args.workers)
    save_report(reports, args.out, args.recovery)
    table = render_table(reports, args.recovery)
    if args.table:
        Path(args.table).write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


def cmd_plotdata(args) -> int:
    for path in export_plot_data(load_report(args.report), args.out):
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hncnav", description="INS/DVL fusion with missing-beam regression")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="scenario -> run log directory")
    p.add_argument("--scenario", help="scenario JSON")
    p.add_argument("--preset", choices=("test", "train", "val"))
    p.add_argument("--missing", default="1,3", help="missing beams for the test preset")
    p.add_argument("--outage-start", type=float, default=TEST_OUTAGE_START)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("scenario", help="write the test scenario JSON for editing")
    p.add_argument("--missing", default="1,3")
    p.add_argument("--outage-start", type=float, default=TEST_OUTAGE_START)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("train", help="run logs + pattern -> model JSON")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--val", nargs="*")
    p.add_argument("--missing", required=True, help="e.g. 1,3 or 1,3,4")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fuse", help="run log + strategy -> filter output CSV")
    p.add_argument("--run", required=True)
    p.add_argument("--strategy", choices=STRATEGY_KINDS, required=True)
    p.add_argument("--model", nargs="*")
    p.add_argument("--r-inflation", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", help="strategy x scenario cross product -> report JSON + table")
    p.add_argument("--runs", nargs="*")
    p.add_argument("--scenarios", nargs="*")
    p.add_argument("--models", nargs="*")
    p.add_argument("--strategies", nargs="*", choices=STRATEGY_KINDS)
    p.add_argument("--recovery", type=float, default=RECOVERY_S)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--table")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plotdata", help="report -> per-figure CSVs")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, TrainingDiverged) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
