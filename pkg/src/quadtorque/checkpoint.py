"""Versioned binary checkpoint: network parameters, fixed log-std, running
normalization state, and a config fingerprint.

Byte layout (all little-endian):

    magic   b"QTCK"
    u32     format version (1)
    u32     meta length in bytes
    bytes   meta JSON (sizes, iteration, seed, fingerprint, counts)
    f32[]   policy weights, layer by layer, row-major (out, in)
    f32[]   policy biases, layer by layer
    f32[]   policy log_std
    f32[]   value weights, then biases, same order
    f64[]   normalization mean, then m2 (sum of squared deviations)

The meta block stores every array size, so a reader never assumes shapes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nets import MlpParams
from .ppo import RunningNorm

MAGIC = b"QTCK"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class PolicyCheckpoint:
    policy: MlpParams
    value: MlpParams
    norm: RunningNorm
    iteration: int
    seed: int
    fingerprint: str
    lr: float
    total_steps: int

    @property
    def obs_dim(self) -> int:
        return self.policy.sizes[0]

    @property
    def act_dim(self) -> int:
        return self.policy.sizes[-1]


def _write_f32(fh, arr):
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def save_checkpoint(path, ckpt: PolicyCheckpoint) -> None:
    meta = {
        "format_version": FORMAT_VERSION,
        "policy_sizes": list(ckpt.policy.sizes),
        "value_sizes": list(ckpt.value.sizes),
        "iteration": int(ckpt.iteration),
        "seed": int(ckpt.seed),
        "fingerprint": ckpt.fingerprint,
        "lr": float(ckpt.lr),
        "total_steps": int(ckpt.total_steps),
        "norm_count": float(ckpt.norm.count),
        "norm_dim": len(ckpt.norm.mean),
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for net in (ckpt.policy, ckpt.value):
            for w in net.weights:
                _write_f32(fh, w)
            for b in net.biases:
                _write_f32(fh, b)
            if net.log_std is not None:
                _write_f32(fh, net.log_std)
        fh.write(np.ascontiguousarray(ckpt.norm.mean, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ckpt.norm.m2, dtype="<f8").tobytes())


def _read_exact(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("checkpoint truncated")
    return data


def _read_net(fh, sizes, with_log_std):
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        rows, cols = sizes[i + 1], sizes[i]
        buf = _read_exact(fh, 4 * rows * cols)
        weights.append(np.frombuffer(buf, dtype="<f4").reshape(rows, cols).copy())
    for i in range(len(sizes) - 1):
        buf = _read_exact(fh, 4 * sizes[i + 1])
        biases.append(np.frombuffer(buf, dtype="<f4").copy())
    log_std = None
    if with_log_std:
        buf = _read_exact(fh, 4 * sizes[-1])
        log_std = np.frombuffer(buf, dtype="<f4").copy()
    return MlpParams(weights=weights, biases=biases, log_std=log_std)


def load_checkpoint(path, expect_fingerprint: str = None,
                    force: bool = False) -> PolicyCheckpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no checkpoint at {path}")
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise CheckpointError(f"{path} is not a quadtorque checkpoint")
        version, meta_len = struct.unpack("<II", _read_exact(fh, 8))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        meta = json.loads(_read_exact(fh, meta_len))
        policy = _read_net(fh, meta["policy_sizes"], with_log_std=True)
        value = _read_net(fh, meta["value_sizes"], with_log_std=False)
        dim = meta["norm_dim"]
        mean = np.frombuffer(_read_exact(fh, 8 * dim), dtype="<f8").copy()
        m2 = np.frombuffer(_read_exact(fh, 8 * dim), dtype="<f8").copy()
    norm = RunningNorm.from_state({"mean": mean, "m2": m2, "count": meta["norm_count"]})
    ckpt = PolicyCheckpoint(
        policy=policy, value=value, norm=norm,
        iteration=meta["iteration"], seed=meta["seed"],
        fingerprint=meta["fingerprint"], lr=meta["lr"],
        total_steps=meta["total_steps"],
    )
    if expect_fingerprint is not None and ckpt.fingerprint != expect_fingerprint:
        if not force:
            raise CheckpointError(
                "checkpoint was trained under a different effective config "
                f"(fingerprint {ckpt.fingerprint[:12]}… != {expect_fingerprint[:12]}…); "
                "pass force=True / --force to load anyway")
    return ckpt
