"""Versioned binary checkpoints of a training run.

Layout (little endian)::

    magic      8 bytes   b"CTDSCKPT"
    version    uint32
    digest     32 bytes  sha256 of the run identity (env, train config, seed)
    length     uint64    size of the JSON manifest
    manifest   JSON, sorted keys: identity, counters, RNG states, metrics rows,
               and (name, dtype, shape, offset, nbytes) for every array
    payload    raw array bytes in manifest order

Replay-buffer episodes are stored as reset seed plus joint actions and are
rebuilt by replaying them in the environment on load, which is exact
because the environments are deterministic given those two inputs.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import config_digest, identity_to_configs, run_identity
from .envs import MatrixGameConfig
from .errors import CheckpointError
from .learner import MetricsRow, Trainer, replay_episode
from .numeric import ParameterSet

MAGIC = b"CTDSCKPT"
VERSION = 1
_HEADER = struct.Struct("<8sI32sQ")


@dataclass
class Checkpoint:
    identity: dict
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    version: int = VERSION

    @property
    def digest(self) -> bytes:
        return config_digest(self.identity)


# ----------------------------------------------------------------------------
# bytes


def encode(ckpt: Checkpoint) -> bytes:
    entries, chunks, offset = [], [], 0
    for name in sorted(ckpt.arrays):
        arr = np.ascontiguousarray(ckpt.arrays[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        entries.append([name, arr.dtype.str, list(arr.shape), offset, len(raw)])
        chunks.append(raw)
        offset += len(raw)
    manifest = {"identity": ckpt.identity, "meta": ckpt.meta, "arrays": entries}
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()
    header = _HEADER.pack(MAGIC, ckpt.version, ckpt.digest, len(blob))
    return header + blob + b"".join(chunks)


def decode(data: bytes, expected_digest: bytes | None = None) -> Checkpoint:
    if len(data) < _HEADER.size:
        raise CheckpointError("checkpoint is truncated (no header)")
    magic, version, digest, length = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {VERSION})")
    start = _HEADER.size
    try:
        manifest = json.loads(data[start : start + length])
    except ValueError as exc:
        raise CheckpointError(f"checkpoint manifest is corrupt: {exc}") from exc
    identity = manifest["identity"]
    if config_digest(identity) != digest:
        raise CheckpointError("checkpoint header digest does not match its embedded configuration")
    if expected_digest is not None and digest != expected_digest:
        raise CheckpointError(
            "checkpoint was written for a different configuration or seed "
            f"(digest {digest.hex()[:16]}..., expected {expected_digest.hex()[:16]}...)"
        )
    payload = start + length
    arrays = {}
    for name, dtype, shape, offset, nbytes in manifest["arrays"]:
        lo = payload + offset
        if lo + nbytes > len(data):
            raise CheckpointError(f"checkpoint is truncated inside array {name!r}")
        arrays[name] = np.frombuffer(data, dtype=np.dtype(dtype), count=nbytes // np.dtype(dtype).itemsize,
                                     offset=lo).reshape(shape).copy()
    return Checkpoint(identity=identity, arrays=arrays, meta=manifest["meta"], version=version)


# ----------------------------------------------------------------------------
# trainer state


def _put_params(arrays: dict, prefix: str, params: ParameterSet) -> None:
    for name, value in params.values().items():
        arrays[f"{prefix}/{name}"] = value


def _get_params(arrays: dict, prefix: str, params: ParameterSet) -> None:
    values = {}
    for name in params.names():
        key = f"{prefix}/{name}"
        if key not in arrays:
            raise CheckpointError(f"checkpoint lacks array {key!r}")
        values[name] = arrays[key]
    params.load_values(values)


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def trainer_identity(trainer: Trainer) -> dict:
    kind = "matrix" if isinstance(trainer.env_config, MatrixGameConfig) else "combat"
    return run_identity(kind, trainer.env_config, trainer.config, trainer.seed)


def capture(trainer: Trainer) -> Checkpoint:
    """Snapshot every piece of state that influences the rest of the run."""
    L = trainer.learner
    arrays: dict[str, np.ndarray] = {}
    _put_params(arrays, "teacher", L.teacher.params)
    _put_params(arrays, "mixer", L.mixer.params)
    _put_params(arrays, "target_teacher", L.target_teacher.params)
    _put_params(arrays, "target_mixer", L.target_mixer.params)
    for name, value in L.teacher_opt.square_avg.items():
        arrays[f"teacher_opt/{name}"] = value
    if L.student is not None:
        _put_params(arrays, "student", L.student.params)
        for name, value in L.student_opt.square_avg.items():
            arrays[f"student_opt/{name}"] = value
    episodes = trainer.buffer.episodes
    if episodes:
        arrays["buffer/seeds"] = np.array([ep.seed for ep in episodes], dtype=np.uint64)
        arrays["buffer/lengths"] = np.array([ep.filled for ep in episodes], dtype=np.int64)
        arrays["buffer/actions"] = np.concatenate([ep.actions for ep in episodes], axis=0)
    meta = {
        "counters": {"t_env": L.t_env, "episodes": L.episodes, "updates": L.updates, "syncs": L.syncs},
        "next_eval": trainer.next_eval,
        "eval_index": trainer.eval_index,
        "loss_sums": dict(trainer.loss_sums),
        "rng": {"collect": _rng_state(trainer.collect_rng), "sample": _rng_state(trainer.sample_rng)},
        "buffer": {"inserted": trainer.buffer.inserted, "size": len(episodes)},
        "rows": [asdict(r) for r in trainer.rows],
    }
    return Checkpoint(identity=trainer_identity(trainer), arrays=arrays, meta=meta)


def restore(trainer: Trainer, ckpt: Checkpoint) -> Trainer:
    """Load ``ckpt`` into a freshly built trainer of the same run identity."""
    if ckpt.digest != config_digest(trainer_identity(trainer)):
        raise CheckpointError("checkpoint does not belong to this configuration and seed")
    L = trainer.learner
    a, m = ckpt.arrays, ckpt.meta
    _get_params(a, "teacher", L.teacher.params)
    _get_params(a, "mixer", L.mixer.params)
    _get_params(a, "target_teacher", L.target_teacher.params)
    _get_params(a, "target_mixer", L.target_mixer.params)
    for name, value in L.teacher_opt.square_avg.items():
        value[...] = a[f"teacher_opt/{name}"]
    if L.student is not None:
        _get_params(a, "student", L.student.params)
        for name, value in L.student_opt.square_avg.items():
            value[...] = a[f"student_opt/{name}"]
    counters = m["counters"]
    L.t_env, L.episodes, L.updates, L.syncs = (
        counters["t_env"], counters["episodes"], counters["updates"], counters["syncs"]
    )
    trainer.next_eval = m["next_eval"]
    trainer.eval_index = m["eval_index"]
    trainer.loss_sums = dict(m["loss_sums"])
    trainer.collect_rng.bit_generator.state = m["rng"]["collect"]
    trainer.sample_rng.bit_generator.state = m["rng"]["sample"]
    trainer.rows = [MetricsRow(**row) for row in m["rows"]]
    buf = trainer.buffer
    buf.episodes = []
    buf.inserted = m["buffer"]["inserted"]
    if m["buffer"]["size"]:
        seeds, lengths, actions = a["buffer/seeds"], a["buffer/lengths"], a["buffer/actions"]
        start = 0
        for seed, length in zip(seeds.tolist(), lengths.tolist()):
            buf.episodes.append(replay_episode(trainer.env, int(seed), actions[start : start + length]))
            start += length
    return trainer


def save_checkpoint(trainer: Trainer, path: str | os.PathLike) -> Path:
    """Write atomically: a crash mid-write leaves the previous checkpoint intact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(capture(trainer)))
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | os.PathLike, expected_digest: bytes | None = None) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {str(path)!r} does not exist")
    return decode(path.read_bytes(), expected_digest)


def resume_trainer(path: str | os.PathLike) -> Trainer:
    """Rebuild the trainer a checkpoint was written from, positioned where it stopped."""
    ckpt = load_checkpoint(path)
    _, env_config, train_config, seed = identity_to_configs(ckpt.identity)
    return restore(Trainer(env_config, train_config, seed), ckpt)
