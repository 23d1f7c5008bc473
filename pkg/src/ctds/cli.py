"""Command line front end.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np

from .config import OUT_DIR_ENV, ExperimentConfig, identity_to_configs, parse_config
from .errors import ConfigurationError, CTDSError, NumericError
from .learner import LearnerState

log = logging.getLogger("ctds")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def sight_value(text: str) -> float | int:
    if text.strip().lower() in ("inf", "infinity"):
        return math.inf
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or 'inf', got {text!r}") from None
    return value


def u64(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an unsigned integer, got {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed {value} is outside the unsigned 64-bit range")
    return value


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML experiment file (built-in defaults when omitted)")
    p.add_argument("--seed", type=u64, action="append", dest="seeds", help="repeatable")
    p.add_argument("--out", help=f"output directory (default: ${OUT_DIR_ENV} or ./runs)")
    p.add_argument("--mode", choices=("ctds", "ctde"))
    p.add_argument("--mixer", choices=("vdn", "qmix", "qplex"))
    p.add_argument("--env", choices=("combat", "matrix"))
    p.add_argument("--sight-range", type=sight_value)
    p.add_argument("--perfect-sight-range", type=sight_value)
    p.add_argument("--steps", type=int, help="env steps to train (train.t_max)")
    p.add_argument("--eval-episodes", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctds", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train every seed and write metrics CSVs")
    _common(p)
    p.add_argument("--checkpoint-interval", type=int, help="env steps between checkpoints")
    p.add_argument("--resume", help="checkpoint to continue from (single seed)")

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint or of freshly initialised nets")
    _common(p)
    p.add_argument("--checkpoint", help="checkpoint written by train")

    p = sub.add_parser("sweep-sight", help="train both modes at several partial sight ranges")
    _common(p)
    p.add_argument("--ranges", default="1,2,4", help="comma separated sight ranges")

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable component")
    p.add_argument("--draws", type=int, default=5)
    p.add_argument("--seed", type=u64, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("theorem1", help="distillation identity and SGD convergence on random finite problems")
    p.add_argument("--problems", type=int, default=100)
    p.add_argument("--max-size", type=int, default=20)
    p.add_argument("--steps", type=int, default=200_000)
    p.add_argument("--seed", type=u64, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def overrides_from_args(args: argparse.Namespace) -> dict:
    pairs = {
        "experiment.seeds": args.seeds,
        "experiment.out_dir": args.out,
        "experiment.env": args.env,
        "train.mode": args.mode,
        "train.mixer": args.mixer,
        "env.sight_range": args.sight_range,
        "env.perfect_sight_range": args.perfect_sight_range,
        "train.t_max": args.steps,
        "train.eval_episodes": args.eval_episodes,
        "experiment.checkpoint_interval": getattr(args, "checkpoint_interval", None),
    }
    return {k: v for k, v in pairs.items() if v is not None}


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    return parse_config(args.config, overrides_from_args(args))


def cmd_train(args) -> int:
    from .harness import run_experiment

    config = config_from_args(args)
    result = run_experiment(config, resume=args.resume)
    for seed, row in result.final_rows().items():
        print(f"seed {seed}: t_env={row.t_env} teacher={row.win_rate_teacher} "
              f"student={row.win_rate_student} baseline={row.win_rate_baseline}")
    for seed, message in result.failures.items():
        print(f"seed {seed} FAILED: {message}", file=sys.stderr)
    print(f"summary: {result.summary_path}")
    if result.failures:
        return EXIT_NUMERIC if any(m.startswith("NumericError") for m in result.failures.values()) else EXIT_CONFIG
    return EXIT_OK


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint, restore
    from .harness import evaluate
    from .learner import Trainer

    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        kind, env_config, train_config, seed = identity_to_configs(ckpt.identity)
        trainer = restore(Trainer(env_config, train_config, seed), ckpt)
        learner = trainer.learner
        seeds = args.seeds or [seed]
        episodes = args.eval_episodes or train_config.eval_episodes
    else:
        config = config_from_args(args)
        env_config, train_config = config.env_config, config.train
        seeds = list(config.seeds)
        episodes = config.eval_episodes
        from .envs import make_env

        learner = LearnerState.create(make_env(env_config), train_config, np.random.default_rng(seeds[0]))
    report = {}
    for s in seeds:
        if train_config.mode == "ctds":
            report[s] = {
                "teacher": evaluate(learner.teacher, env_config, "perfect", episodes, s),
                "student": evaluate(learner.student, env_config, "partial", episodes, s),
            }
        else:
            report[s] = {"baseline": evaluate(learner.teacher, env_config, "partial", episodes, s)}
    for s, methods in report.items():
        for method, (win, ret) in methods.items():
            print(f"seed {s} {method}: win_rate={win!r} mean_return={ret!r} episodes={episodes}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .harness import sight_sweep

    config = config_from_args(args)
    try:
        ranges = [sight_value(r) for r in args.ranges.split(",") if r.strip()]
    except argparse.ArgumentTypeError as exc:
        raise ConfigurationError(f"--ranges: {exc}") from exc
    table = sight_sweep(config, ranges)
    for line in table:
        print(f"sight {line['sight_range']} {line['method']}: median {line['final_win_rate_median']!r} "
              f"[{line['final_win_rate_min']!r}, {line['final_win_rate_max']!r}]")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradchecks

    worst = run_gradchecks(draws=args.draws, seed=args.seed)
    for name, err in worst.items():
        print(f"{name}: max relative error {err:.3e}")
    if max(worst.values()) > args.tol:
        raise NumericError(f"gradient check exceeded tolerance {args.tol}")
    return EXIT_OK


def cmd_theorem(args) -> int:
    from .theory import theorem_report

    report = theorem_report(args.problems, args.max_size, args.steps, args.seed)
    print(json.dumps(report, indent=2))
    if report["max_identity_discrepancy"] > 1e-12 or report["max_sup_error"] > 1e-3:
        raise NumericError("distillation check outside tolerance")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep-sight": cmd_sweep,
    "gradcheck": cmd_gradcheck,
    "theorem1": cmd_theorem,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CTDSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
