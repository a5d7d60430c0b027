import csv
import hashlib
from pathlib import Path

import numpy as np
import pytest

from quadtorque.cli import main
from quadtorque.config import dumps_toml, load_experiment

MICRO_CONFIG = {
    "terrain": {"min_height": 0.0, "max_height": 0.0, "extent": [4.0, 4.0]},
    "env": {"episode_seconds": 0.5, "noise_multiplier": 0.0,
            "latency_steps": 0, "push_interval_s": 1e9},
    "policy": {"hidden": [32, 32]},
    "ppo": {"n_envs": 4, "minibatches": 4, "iterations": 3, "seed": 5,
            "checkpoint_every": 2},
}


@pytest.fixture
def micro_config(tmp_path):
    path = tmp_path / "micro.toml"
    path.write_text(dumps_toml(MICRO_CONFIG))
    return path


def metrics_hash(path):
    """Hash of the metrics file with the volatile wall-clock column removed."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][-1] == "wall_s"
    body = "\n".join(",".join(r[:-1]) for r in rows)
    return hashlib.sha256(body.encode()).hexdigest()


def test_train_iterations_and_checkpoints(micro_config, tmp_path):
    out = tmp_path / "run"
    rc = main(["train", "--config", str(micro_config), "--out", str(out),
               "--quiet"])
    assert rc == 0
    with open(out / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    assert (out / "checkpoint_final.qtck").exists()
    assert (out / "checkpoint_000002.qtck").exists()
    assert (out / "effective_config.toml").exists()
    # echoed config reloads to the same fingerprint
    exp = load_experiment(micro_config)
    exp2 = load_experiment(out / "effective_config.toml")
    assert exp.fingerprint() == exp2.fingerprint()


def test_metrics_header_is_stable(micro_config, tmp_path):
    from quadtorque.config import REWARD_TERMS
    out = tmp_path / "run"
    main(["train", "--config", str(micro_config), "--out", str(out), "--quiet"])
    with open(out / "metrics.csv", newline="") as fh:
        header = fh.readline().strip().split(",")
    expected = (
        ["iteration", "env_steps", "mean_step_reward", "mean_episode_return",
         "mean_episode_length", "episodes_done", "diverged_envs", "kl", "lr",
         "clip_fraction", "policy_loss", "value_loss", "entropy"]
        + [f"rew_{t}" for t in REWARD_TERMS] + ["wall_s"]
    )
    assert header == expected


def test_train_deterministic_same_seed(micro_config, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--config", str(micro_config), "--out",
                     str(out), "--quiet"]) == 0
        outs.append(metrics_hash(out / "metrics.csv"))
    assert outs[0] == outs[1]


def test_train_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[env]\nnot_a_key = 1\n")
    assert main(["train", "--config", str(bad), "--out",
                 str(tmp_path / "x"), "--quiet"]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.toml"),
                 "--out", str(tmp_path / "y"), "--quiet"]) == 2


def test_eval_with_profile(micro_config, tmp_path):
    out = tmp_path / "run"
    main(["train", "--config", str(micro_config), "--out", str(out), "--quiet"])
    profile = tmp_path / "profile.csv"
    profile.write_text("t,vx,vy,wz\n0.0,0.3,0.0,0.0\n0.2,0.0,0.0,0.5\n")
    rc = main(["eval", "--checkpoint", str(out / "checkpoint_final.qtck"),
               "--config", str(micro_config), "--profile", str(profile),
               "--episodes", "2", "--out", str(tmp_path / "ev")])
    assert rc == 0
    with open(tmp_path / "ev" / "eval.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert "tracking_error" in rows[0]
    assert "rew_track_lin_vel" in rows[0]


def test_validate_cli(micro_config, tmp_path):
    out = tmp_path / "run"
    main(["train", "--config", str(micro_config), "--out", str(out), "--quiet"])
    fine = tmp_path / "fine.toml"
    cfg = dict(MICRO_CONFIG)
    cfg["sim"] = {"substeps": 2}
    fine.write_text(dumps_toml(cfg))
    rc = main(["validate", "--checkpoint", str(out / "checkpoint_final.qtck"),
               "--config-a", str(micro_config), "--config-b", str(fine),
               "--episodes", "20", "--seed", "1",
               "--out", str(tmp_path / "report.csv"), "--force"])
    assert rc in (0, 1)
    assert (tmp_path / "report.csv").exists()


def test_export_heightfield(tmp_path):
    out = tmp_path / "field.csv"
    rc = main(["export-heightfield", "--config", "builtin:quadruped_rough",
               "--seed", "3", "--out", str(out)])
    assert rc == 0
    grid = np.loadtxt(out, delimiter=",")
    assert grid.shape == (50, 50)
    assert grid.min() >= -0.075 and grid.max() <= 0.025


def test_resume_continues(micro_config, tmp_path):
    out = tmp_path / "run"
    main(["train", "--config", str(micro_config), "--out", str(out), "--quiet"])
    rc = main(["train", "--config", str(micro_config), "--out", str(out),
               "--resume", str(out / "checkpoint_final.qtck"),
               "--iterations", "5", "--quiet"])
    assert rc == 0
    with open(out / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["iteration"]) for r in rows] == [1, 2, 3, 4, 5]


def test_checkpoint_config_mismatch(micro_config, tmp_path):
    out = tmp_path / "run"
    main(["train", "--config", str(micro_config), "--out", str(out), "--quiet"])
    other = tmp_path / "other.toml"
    cfg = dict(MICRO_CONFIG)
    cfg["env"] = dict(cfg["env"], action_scale=5.0)
    other.write_text(dumps_toml(cfg))
    profile = tmp_path / "profile.csv"
    profile.write_text("t,vx,vy,wz\n0.0,0.3,0.0,0.0\n")
    rc = main(["eval", "--checkpoint", str(out / "checkpoint_final.qtck"),
               "--config", str(other), "--profile", str(profile),
               "--episodes", "1", "--out", str(tmp_path / "ev2")])
    assert rc == 2
