"""Command-line surface: ``train``, ``analyze <job>`` and ``report``.

Exit codes: 0 on success, 1 for usage and configuration errors (including
missing files), 2 when a run is aborted for numerical reasons.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd

from .analysis import (
    aggregate_distribution,
    bbar_sweep,
    dist_stats,
    divergence_experiment,
    ergodic_sample,
    evaluate_states,
    generalized_irf,
    mpc_profile,
    normalization_constants,
    penalty_weight_sweep,
)
from .config import OUTPUT_DIR, REPORT_WINDOW, logger
from .dataset import (
    build_aggdist_long_df,
    build_diverge_df,
    build_dist_df,
    build_irf_long_df,
    build_mpc_df,
    build_sweep_df,
    write_csv,
    write_tables,
)
from .errors import NumericalError
from .model import SHOCKS, ConstraintRegime
from .network import load_checkpoint, save_checkpoint
from .reporting import compare_reports, format_report, loss_report
from .run_config import CONFIG_FILE, RunConfig
from .trainer import TrainLog, fit

CHECKPOINT_FILE = "checkpoint.bin"
TRAINLOG_FILE = "trainlog.csv"
LOSS_REPORT_FILE = "loss_report.csv"
ANALYSIS_JOBS = ("irf", "mpc", "dist", "sweep", "diverge", "aggdist", "weights")
REGIME_CHOICES = [regime.value for regime in ConstraintRegime]


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hardhank", description="Hard-constrained neural solver for a HANK model.")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="fit the policy networks")
    train.add_argument("--config", type=Path, help="run configuration file")
    train.add_argument("--regime", choices=REGIME_CHOICES)
    train.add_argument("--out", type=Path, default=Path(OUTPUT_DIR), help="output directory")
    train.add_argument("--seed", type=int)
    train.add_argument("--penalty-weight", type=float, help="weight on every penalty the regime uses")
    train.add_argument("--iterations", type=int)

    analyze = commands.add_parser("analyze", help="run a diagnostic on a trained policy")
    analyze.add_argument("job", choices=ANALYSIS_JOBS)
    analyze.add_argument("--out", type=Path, default=Path(OUTPUT_DIR), help="run directory with the checkpoint")
    analyze.add_argument("--config", type=Path, help=f"defaults to <out>/{CONFIG_FILE}")
    analyze.add_argument("--regime", choices=REGIME_CHOICES)
    analyze.add_argument("--seed", type=int)
    analyze.add_argument("--shock", choices=SHOCKS)
    analyze.add_argument("--size", type=float, help="impulse size in standard deviations")
    analyze.add_argument("--horizons", type=int)
    analyze.add_argument("--states", type=int, help="initial states drawn from the ergodic distribution")
    analyze.add_argument("--draws", type=int, help="shock histories per initial state")
    analyze.add_argument("--periods", type=int)
    analyze.add_argument("--bbar-min", type=float)
    analyze.add_argument("--bbar-max", type=float)
    analyze.add_argument("--points", type=int)
    analyze.add_argument("--weights", type=_float_list, help="comma-separated penalty weights")

    report = commands.add_parser("report", help="summarise one or more training logs")
    report.add_argument("logs", nargs="+", help="trainlog.csv paths, optionally as label=path")
    report.add_argument("--window", type=int, default=REPORT_WINDOW)
    report.add_argument("--out", type=Path, help="CSV file for the report table")
    return parser


def _attach_console_handler() -> None:
    if any(getattr(handler, "_hardhank_console", False) for handler in logger.handlers):
        return
    handler = logging.StreamHandler(sys.stderr)
    handler.setLevel(logging.WARNING)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    handler._hardhank_console = True
    logger.addHandler(handler)


def _load_run_config(path: Optional[Path], overrides: Dict[str, object]) -> RunConfig:
    config = RunConfig.read(path) if path is not None else RunConfig()
    return config.with_overrides(**overrides)


def cmd_train(args: argparse.Namespace) -> int:
    config = _load_run_config(
        args.config,
        {
            "regime": args.regime,
            "seed": args.seed,
            "penalty_weight": args.penalty_weight,
            "iterations": args.iterations,
        },
    )
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    config.write(out / CONFIG_FILE)

    nets = config.networks()
    theta, log = fit(config.trainer_config(out / CHECKPOINT_FILE), nets)
    save_checkpoint(out / CHECKPOINT_FILE, theta, nets.specs, config.seed)
    write_csv(log.to_frame(), out / TRAINLOG_FILE)

    if len(log) == 0:
        logger.warning("No iterations run; %s not written", LOSS_REPORT_FILE)
        return 0
    window = min(REPORT_WINDOW, len(log))
    if window < REPORT_WINDOW:
        logger.warning("Only %s iteration(s) logged; loss report averages all of them", len(log))
    report = loss_report(log, window)
    write_csv(report, out / LOSS_REPORT_FILE)
    print(format_report(report, title=f"Loss Report ({config.regime.value})"), end="")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    out: Path = args.out
    config = _load_run_config(
        args.config if args.config is not None else out / CONFIG_FILE,
        {
            "regime": args.regime,
            "seed": args.seed,
            "shock": args.shock,
            "size": args.size,
            "horizons": args.horizons,
            "states": args.states,
            "draws": args.draws,
            "periods": args.periods,
            "bbar_min": args.bbar_min,
            "bbar_max": args.bbar_max,
            "points": args.points,
            "weights": args.weights,
        },
    )
    tables = _analysis_tables(args.job, config, out)
    write_tables(tables, out)
    return 0


def _analysis_tables(job: str, config: RunConfig, out: Path) -> Dict[str, pd.DataFrame]:
    """Run one analysis job and return its tables keyed by file stem."""
    nets = config.networks()
    params = config.analysis_params()
    settings = config.analyze
    regime, seed, idio_mode = config.regime, config.seed, config.train.idio_mode

    if job == "diverge":
        result = divergence_experiment(
            nets, params, regime, seed, settings.periods, init_scale=config.train.init_scale, idio_mode=idio_mode
        )
        return {"diverge": build_diverge_df(result)}

    checkpoint = out / CHECKPOINT_FILE
    if not checkpoint.is_file():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    theta = load_checkpoint(checkpoint, nets.specs)

    if job == "weights":
        return {"weights": penalty_weight_sweep(config.trainer_config(), nets, theta, settings.weights)}
    if job == "aggdist":
        result = aggregate_distribution(theta, nets, params, regime, settings.periods, settings.burn_in, seed, idio_mode)
        return {"aggdist": build_aggdist_long_df(result)}

    states = ergodic_sample(theta, nets, params, regime, settings.burn_in, settings.states, seed, settings.stride, idio_mode)
    if job == "irf":
        norm = normalization_constants(theta, nets, params, regime, settings.norm_periods, seed, idio_mode)
        result = generalized_irf(
            theta, nets, params, regime, settings.shock, settings.size, settings.horizons, states, settings.draws, seed, norm=norm, idio_mode=idio_mode
        )
        return {"irf": build_irf_long_df(result)}
    if job == "mpc":
        return {"mpc": build_mpc_df(mpc_profile(theta, nets, params, regime, states, seed, idio_mode))}
    if job == "dist":
        bundle = evaluate_states(theta, nets, params, regime, states, seed, idio_mode)
        return {"dist": build_dist_df(dist_stats(bundle, params))}
    result = bbar_sweep(theta, nets, params, regime, config.bbar_grid(), states, seed, idio_mode)
    return {"sweep": build_sweep_df(result)}


def _labelled_logs(entries: Sequence[str]) -> Dict[str, Path]:
    logs: Dict[str, Path] = {}
    for entry in entries:
        label, sep, path = entry.partition("=")
        path = Path(path) if sep else Path(entry)
        if not sep:
            label = path.parent.name or path.stem
        if not path.is_file():
            raise FileNotFoundError(f"training log not found: {path}")
        logs[label] = path
    return logs


def cmd_report(args: argparse.Namespace) -> int:
    reports = {
        label: loss_report(TrainLog.from_frame(pd.read_csv(path)), args.window)
        for label, path in _labelled_logs(args.logs).items()
    }
    if len(reports) == 1:
        table = next(iter(reports.values()))
        text = format_report(table)
    else:
        table = compare_reports(reports)
        text = format_report(reports, title="Loss Comparison")
    print(text, end="")
    if args.out is not None:
        write_csv(table, args.out)
    return 0


COMMANDS = {"train": cmd_train, "analyze": cmd_analyze, "report": cmd_report}


def run_cli(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv`` and run the command; returns the process exit code."""
    _attach_console_handler()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1

    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        logger.error("%s aborted: %s", args.command, exc)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        return 1


__all__ = ["ANALYSIS_JOBS", "build_parser", "cmd_analyze", "cmd_report", "cmd_train", "run_cli"]
