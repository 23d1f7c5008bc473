"""Seeded experiment runs, metrics CSVs, cross-seed summaries and sight sweeps."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import AgentNetwork
from .checkpoint import load_checkpoint, restore, save_checkpoint, trainer_identity
from .config import ExperimentConfig, config_digest
from .envs import EnvConfig, MatrixGameConfig, make_env
from .errors import CheckpointError, ConfigurationError, CTDSError
from .learner import MetricsRow, Trainer, evaluate_policy, evaluation_seeds

log = logging.getLogger(__name__)

CSV_HEADER = MetricsRow.CSV_FIELDS
SUMMARY_METRICS = ("win_rate_teacher", "win_rate_student", "win_rate_baseline", "td_loss", "distill_loss")
SWEEP_HEADER = (
    "sight_range", "perfect_sight_range", "method", "seeds",
    "final_win_rate_median", "final_win_rate_min", "final_win_rate_max",
)
METHOD_COLUMNS = {"teacher": "win_rate_teacher", "student": "win_rate_student", "baseline": "win_rate_baseline"}


# ----------------------------------------------------------------------------
# CSV


def format_value(value) -> str:
    """Blank for missing values; ``repr`` for floats so reruns produce identical text."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(value)


def metrics_csv(rows: list[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in rows:
        w.writerow([format_value(getattr(row, name)) for name in CSV_HEADER])
    return buf.getvalue()


def write_metrics_csv(path: str | os.PathLike, rows: list[MetricsRow]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(metrics_csv(rows))
    return path


def _parse(text: str, integer: bool = False):
    if text == "":
        return None
    return int(text) if integer else float(text)


def read_metrics_csv(path: str | os.PathLike) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CSV_HEADER:
            raise CTDSError(f"{path}: unexpected header {header}")
        rows = []
        for rec in reader:
            values = dict(zip(CSV_HEADER, rec))
            rows.append(MetricsRow(
                t_env=int(values["t_env"]),
                episodes=int(values["episodes"]),
                td_loss=_parse(values["td_loss"]),
                distill_loss=_parse(values["distill_loss"]),
                win_rate_teacher=_parse(values["win_rate_teacher"]),
                win_rate_student=_parse(values["win_rate_student"]),
                win_rate_baseline=_parse(values["win_rate_baseline"]),
                epsilon=float(values["epsilon"]),
            ))
        return rows


# ----------------------------------------------------------------------------
# summaries


def median_min_max(values: list[float]) -> tuple[float, float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(np.median(arr)), float(arr.min()), float(arr.max())


def summary_header() -> list[str]:
    cols = ["eval_index", "seeds", "t_env_min", "t_env_max"]
    for m in SUMMARY_METRICS:
        cols += [f"{m}_median", f"{m}_min", f"{m}_max"]
    return cols


def summarize(per_seed: dict[int, list[MetricsRow]]) -> list[list]:
    """Median, min and max per evaluation point, merging seeds by row index."""
    if not per_seed:
        return []
    n_points = max(len(rows) for rows in per_seed.values())
    table = []
    for k in range(n_points):
        at_k = [rows[k] for rows in per_seed.values() if k < len(rows)]
        t = [r.t_env for r in at_k]
        line = [k, len(at_k), min(t), max(t)]
        for m in SUMMARY_METRICS:
            vals = [getattr(r, m) for r in at_k if getattr(r, m) is not None]
            line += list(median_min_max(vals)) if vals else [None, None, None]
        table.append(line)
    return table


def write_summary(path: Path, per_seed: dict[int, list[MetricsRow]], failures: dict[int, str]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(summary_header())
    for line in summarize(per_seed):
        w.writerow([format_value(v) for v in line])
    path.write_text(buf.getvalue())
    fail = io.StringIO()
    fw = csv.writer(fail, lineterminator="\n")
    fw.writerow(["seed", "error"])
    for seed, message in sorted(failures.items()):
        fw.writerow([seed, message])
    path.with_name("failures.csv").write_text(fail.getvalue())
    return path


# ----------------------------------------------------------------------------
# runs


@dataclass
class ExperimentResult:
    out_dir: Path
    rows: dict[int, list[MetricsRow]] = field(default_factory=dict)
    failures: dict[int, str] = field(default_factory=dict)
    csv_paths: dict[int, Path] = field(default_factory=dict)
    summary_path: Path | None = None

    def final_rows(self) -> dict[int, MetricsRow]:
        return {s: rows[-1] for s, rows in self.rows.items() if rows}


def checkpoint_path(out_dir: Path, seed: int) -> Path:
    return out_dir / f"seed_{seed}.ckpt"


def run_seed(config: ExperimentConfig, seed: int, out_dir: Path, resume: str | os.PathLike | None = None) -> list[MetricsRow]:
    """Train one seed, checkpointing every ``checkpoint_interval`` env steps when enabled."""
    trainer = Trainer(config.env_config, config.train, seed)
    if resume is not None:
        expected = config_digest(trainer_identity(trainer))
        restore(trainer, load_checkpoint(resume, expected_digest=expected))
        log.info("seed %d: resumed at t_env=%d", seed, trainer.learner.t_env)
    t_max = config.train.t_max
    interval = config.checkpoint_interval
    if interval:
        while trainer.learner.t_env < t_max:
            stop = min(t_max, (trainer.learner.t_env // interval + 1) * interval)
            for row in trainer.run(t_max=stop, final_eval=False):
                _log_row(seed, row)
            save_checkpoint(trainer, checkpoint_path(out_dir, seed))
    for row in trainer.run():
        _log_row(seed, row)
    return trainer.rows


def _log_row(seed: int, row: MetricsRow) -> None:
    log.info(
        "seed %d t_env %d: teacher %s student %s baseline %s",
        seed, row.t_env, row.win_rate_teacher, row.win_rate_student, row.win_rate_baseline,
    )


def run_experiment(
    config: ExperimentConfig,
    out_dir: str | os.PathLike | None = None,
    resume: str | os.PathLike | None = None,
) -> ExperimentResult:
    """Train every seed, write ``seed_<s>.csv`` each plus ``summary.csv`` and ``failures.csv``.

    Configuration and numeric errors of a seed are recorded and the remaining
    seeds still run.
    """
    out = Path(config.out_dir if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if resume is not None and len(config.seeds) != 1:
        raise CheckpointError("resuming needs exactly one seed")
    result = ExperimentResult(out_dir=out)
    for seed in config.seeds:
        try:
            rows = run_seed(config, seed, out, resume)
        except CheckpointError:
            raise
        except CTDSError as exc:
            log.error("seed %d failed: %s", seed, exc)
            result.failures[seed] = f"{type(exc).__name__}: {exc}"
            continue
        result.rows[seed] = rows
        result.csv_paths[seed] = write_metrics_csv(out / f"seed_{seed}.csv", rows)
    result.summary_path = write_summary(out / "summary.csv", result.rows, result.failures)
    return result


def evaluate(
    net: AgentNetwork,
    env_config: EnvConfig | MatrixGameConfig,
    view: str,
    episodes: int,
    seed: int,
) -> tuple[float, float]:
    """Greedy win rate and mean return of ``net`` over ``episodes`` seeded episodes.

    ``view="partial"`` executes through the decentralized interface only.
    """
    if episodes < 1:
        raise ConfigurationError("evaluate needs at least one episode")
    env = make_env(env_config)
    return evaluate_policy(env, net, view, evaluation_seeds(seed, 0, episodes))


def sight_config(config: ExperimentConfig, sight: float) -> ExperimentConfig:
    """Set the partial sight range, raising the perfect range when it would fall below it."""
    env = config.env
    return config.replace(env=dataclasses.replace(env, sight_range=sight,
                                                  perfect_sight_range=max(env.perfect_sight_range, sight)))


def sight_sweep(
    config: ExperimentConfig,
    ranges: list[float],
    out_dir: str | os.PathLike | None = None,
    modes: tuple[str, ...] = ("ctds", "ctde"),
) -> list[dict]:
    """Run both modes at every sight range; return and write the final win-rate table."""
    if not ranges:
        raise ConfigurationError("sight_sweep needs at least one range")
    if config.env_kind != "combat":
        raise ConfigurationError("sight_sweep needs the combat environment")
    out = Path(config.out_dir if out_dir is None else out_dir)
    table = []
    for r in ranges:
        cfg = sight_config(config, r)
        for mode in modes:
            res = run_experiment(cfg.with_train(mode=mode), out / f"sight_{format_value(r)}" / mode)
            finals = res.final_rows()
            for method, column in METHOD_COLUMNS.items():
                vals = [getattr(row, column) for row in finals.values() if getattr(row, column) is not None]
                if not vals:
                    continue
                med, lo, hi = median_min_max(vals)
                table.append({
                    "sight_range": r,
                    "perfect_sight_range": cfg.env.perfect_sight_range,
                    "method": method,
                    "seeds": len(vals),
                    "final_win_rate_median": med,
                    "final_win_rate_min": lo,
                    "final_win_rate_max": hi,
                })
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for line in table:
        w.writerow([format_value(line[c]) if c != "method" else line[c] for c in SWEEP_HEADER])
    out.mkdir(parents=True, exist_ok=True)
    (out / "sight_sweep.csv").write_text(buf.getvalue())
    return table
