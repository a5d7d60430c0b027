import numpy as np
import pytest

from quadtorque import nets
from quadtorque.checkpoint import (CheckpointError, PolicyCheckpoint,
                                   load_checkpoint, save_checkpoint)
from quadtorque.ppo import RunningNorm


def make_checkpoint(seed=0, obs_dim=48, act_dim=12):
    rng = np.random.default_rng(seed)
    policy = nets.init_mlp((obs_dim, 32, 16, act_dim), rng, out_gain=0.01,
                           log_std=0.0, dtype=np.float32)
    value = nets.init_mlp((obs_dim, 32, 16, 1), rng, dtype=np.float32)
    norm = RunningNorm(obs_dim)
    norm.update(rng.normal(2.0, 1.5, size=(100, obs_dim)))
    return PolicyCheckpoint(policy=policy, value=value, norm=norm,
                            iteration=123, seed=seed, fingerprint="abc123",
                            lr=3.5e-4, total_steps=98304)


def test_round_trip_bit_identical(tmp_path):
    ck = make_checkpoint()
    path = tmp_path / "model.qtck"
    save_checkpoint(path, ck)
    loaded = load_checkpoint(path)
    for a, b in zip(ck.policy.weights, loaded.policy.weights):
        assert a.dtype == b.dtype == np.float32
        assert np.array_equal(a, b)
    for a, b in zip(ck.policy.biases, loaded.policy.biases):
        assert np.array_equal(a, b)
    assert np.array_equal(ck.policy.log_std, loaded.policy.log_std)
    for a, b in zip(ck.value.weights, loaded.value.weights):
        assert np.array_equal(a, b)
    assert np.array_equal(ck.norm.mean, loaded.norm.mean)
    assert np.array_equal(ck.norm.m2, loaded.norm.m2)
    assert ck.norm.count == loaded.norm.count
    assert loaded.iteration == 123
    assert loaded.fingerprint == "abc123"
    assert loaded.lr == pytest.approx(3.5e-4)


def test_save_load_save_stable(tmp_path):
    ck = make_checkpoint()
    p1, p2 = tmp_path / "a.qtck", tmp_path / "b.qtck"
    save_checkpoint(p1, ck)
    save_checkpoint(p2, load_checkpoint(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_fingerprint_guard(tmp_path):
    ck = make_checkpoint()
    path = tmp_path / "model.qtck"
    save_checkpoint(path, ck)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expect_fingerprint="other")
    loaded = load_checkpoint(path, expect_fingerprint="other", force=True)
    assert loaded.fingerprint == "abc123"


def test_truncated_file_rejected(tmp_path):
    ck = make_checkpoint()
    path = tmp_path / "model.qtck"
    save_checkpoint(path, ck)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_not_a_checkpoint(tmp_path):
    path = tmp_path / "noise.bin"
    path.write_bytes(b"definitely not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.qtck")
