"""Experiment configuration: TOML files, CLI overrides and validation.

A file has up to four tables::

    [experiment]  env ("combat" | "matrix"), seeds, out_dir, checkpoint_interval
    [env]         Combat fields (see EnvConfig)
    [matrix]      payoff table for the matrix game
    [train]       learner fields (see TrainConfig)

Every key is checked against the dataclass it feeds; unknown keys and type
mismatches are reported with their dotted path.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .envs import EnvConfig, MatrixGameConfig
from .errors import ConfigurationError
from .learner import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

OUT_DIR_ENV = "CTDS_OUT_DIR"
ENV_KINDS = ("combat", "matrix")
SECTIONS = ("experiment", "env", "matrix", "train")
# sight ranges may be the string "inf"
INFINITE_OK = {"sight_range", "perfect_sight_range"}


def default_out_dir() -> str:
    return os.environ.get(OUT_DIR_ENV, "runs")


@dataclass(frozen=True)
class ExperimentConfig:
    env_kind: str = "combat"
    env: EnvConfig = field(default_factory=EnvConfig)
    matrix: MatrixGameConfig = field(default_factory=MatrixGameConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple[int, ...] = (0,)
    out_dir: str = field(default_factory=default_out_dir)
    # env steps between checkpoints; 0 disables them
    checkpoint_interval: int = 0

    def __post_init__(self) -> None:
        if self.env_kind not in ENV_KINDS:
            raise ConfigurationError(f"experiment.env must be one of {ENV_KINDS}, got {self.env_kind!r}")
        if not self.seeds:
            raise ConfigurationError("experiment.seeds needs at least one seed")
        for s in self.seeds:
            if isinstance(s, bool) or not isinstance(s, int) or not 0 <= s < 2**64:
                raise ConfigurationError(f"experiment.seeds: {s!r} is not an unsigned 64-bit integer")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("experiment.seeds contains duplicates")
        if self.checkpoint_interval < 0:
            raise ConfigurationError("experiment.checkpoint_interval must be >= 0")

    @property
    def env_config(self) -> EnvConfig | MatrixGameConfig:
        return self.env if self.env_kind == "combat" else self.matrix

    @property
    def mixer(self) -> str:
        return self.train.mixer

    @property
    def mode(self) -> str:
        return self.train.mode

    @property
    def eval_episodes(self) -> int:
        return self.train.eval_episodes

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)

    def with_train(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, train=dataclasses.replace(self.train, **changes))

    def with_env(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, env=dataclasses.replace(self.env, **changes))


# ----------------------------------------------------------------------------
# serialisation helpers


def _plain(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def run_identity(env_kind: str, env_config, train: TrainConfig, seed: int) -> dict:
    """Everything that determines one seeded training trajectory."""
    return {
        "env_kind": env_kind,
        "env": _plain(dataclasses.asdict(env_config)),
        "train": _plain(dataclasses.asdict(train)),
        "seed": int(seed),
    }


def config_digest(identity: dict) -> bytes:
    blob = json.dumps(identity, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).digest()


def identity_to_configs(identity: dict) -> tuple[str, EnvConfig | MatrixGameConfig, TrainConfig, int]:
    kind = identity["env_kind"]
    if kind == "combat":
        env = _build(EnvConfig, identity["env"], "env")
    else:
        env = _build(MatrixGameConfig, identity["env"], "matrix")
    return kind, env, _build(TrainConfig, identity["train"], "train"), int(identity["seed"])


# ----------------------------------------------------------------------------
# parsing


def _type_error(path: str, expected: str, value) -> ConfigurationError:
    return ConfigurationError(f"{path}: expected {expected}, got {value!r}")


def _coerce(path: str, name: str, annotation: str, value):
    if name in INFINITE_OK:
        if isinstance(value, str) and value.strip().lower() in ("inf", "infinity"):
            return math.inf
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise _type_error(path, "a number or 'inf'", value)
        return value
    if annotation.startswith("int"):
        if value is None and "None" in annotation:
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            raise _type_error(path, "an integer", value)
        return value
    if annotation == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise _type_error(path, "a number", value)
        return float(value)
    if annotation == "str":
        if not isinstance(value, str):
            raise _type_error(path, "a string", value)
        return value
    if annotation.startswith("tuple[tuple"):
        if not isinstance(value, (list, tuple)) or not all(isinstance(r, (list, tuple)) for r in value):
            raise _type_error(path, "a table of numbers", value)
        rows = []
        for i, row in enumerate(value):
            for j, x in enumerate(row):
                if isinstance(x, bool) or not isinstance(x, (int, float)):
                    raise _type_error(f"{path}[{i}][{j}]", "a number", x)
            rows.append(tuple(float(x) for x in row))
        return tuple(rows)
    raise ConfigurationError(f"{path}: unsupported field type {annotation}")


def _build(cls, raw: dict, section: str):
    if not isinstance(raw, dict):
        raise _type_error(section, "a table", raw)
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        path = f"{section}.{key}"
        if key not in known:
            raise ConfigurationError(f"{path}: unknown key")
        kwargs[key] = _coerce(path, key, str(known[key].type), value)
    try:
        return cls(**kwargs)
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{section}: {exc}") from exc


EXPERIMENT_KEYS = {"env", "seeds", "out_dir", "checkpoint_interval"}


def _set_dotted(raw: dict, dotted: str, value) -> None:
    section, _, key = dotted.partition(".")
    if section not in SECTIONS or not key:
        raise ConfigurationError(f"override {dotted!r}: expected <section>.<key> with section in {SECTIONS}")
    table = raw.setdefault(section, {})
    if not isinstance(table, dict):
        raise _type_error(section, "a table", table)
    table[key] = value


def load_toml(path: str | os.PathLike) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file {str(p)!r} does not exist")
    try:
        with p.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{p}: malformed TOML: {exc}") from exc


def config_from_dict(raw: dict) -> ExperimentConfig:
    for section in raw:
        if section not in SECTIONS:
            raise ConfigurationError(f"{section}: unknown section; expected one of {SECTIONS}")
    exp = raw.get("experiment", {})
    if not isinstance(exp, dict):
        raise _type_error("experiment", "a table", exp)
    for key in exp:
        if key not in EXPERIMENT_KEYS:
            raise ConfigurationError(f"experiment.{key}: unknown key")
    kind = exp.get("env", "combat")
    if not isinstance(kind, str):
        raise _type_error("experiment.env", "a string", kind)
    seeds = exp.get("seeds", [0])
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        seeds = [seeds]
    if not isinstance(seeds, list):
        raise _type_error("experiment.seeds", "a list of integers", seeds)
    for i, s in enumerate(seeds):
        if isinstance(s, bool) or not isinstance(s, int):
            raise _type_error(f"experiment.seeds[{i}]", "an integer", s)
    out_dir = exp.get("out_dir", default_out_dir())
    if not isinstance(out_dir, str):
        raise _type_error("experiment.out_dir", "a string", out_dir)
    interval = exp.get("checkpoint_interval", 0)
    if isinstance(interval, bool) or not isinstance(interval, int):
        raise _type_error("experiment.checkpoint_interval", "an integer", interval)
    return ExperimentConfig(
        env_kind=kind,
        env=_build(EnvConfig, raw.get("env", {}), "env"),
        matrix=_build(MatrixGameConfig, raw.get("matrix", {}), "matrix"),
        train=_build(TrainConfig, raw.get("train", {}), "train"),
        seeds=tuple(seeds),
        out_dir=out_dir,
        checkpoint_interval=interval,
    )


def parse_config(path: str | os.PathLike | None = None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Read ``path`` (built-in defaults when None), apply dotted-key overrides, validate."""
    raw = load_toml(path) if path is not None else {}
    for dotted, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(raw, dotted, value)
    return config_from_dict(raw)
