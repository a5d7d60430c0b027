"""Sim-to-sim cross-validation: replay one trained policy under two physics
configurations and report how much performance survives the dynamics shift.

Both configurations run the identical env/reward code path; only the loaded
experiment (contact constants, substeps, terrain, ...) differs. Evaluation
is deterministic: mean actions, no observation noise, no latency, fixed
command profile shared between the two configurations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .checkpoint import CheckpointError, PolicyCheckpoint
from .config import OBS_DIM, REWARD_TERMS, ExperimentConfig
from .env import REASON_FALL_HEIGHT, REASON_FALL_TILT, REASON_DIVERGED, VecQuadEnv
from . import nets

TRACK_IDX = REWARD_TERMS.index("track_lin_vel")

DEFAULT_THRESHOLDS = {
    "tracking_reward": 0.5,      # B must retain at least this fraction of A
    "episode_length": 0.5,
}


@dataclass
class EvalMetrics:
    episodes: int
    mean_tracking_reward: float   # weighted velocity-tracking term, per step
    mean_episode_length: float    # steps
    fall_rate: float              # episodes ended by fall or divergence
    velocity_error: float         # mean |v_cmd - v_base,xy| over steps, m/s

    def as_dict(self) -> dict:
        return {
            "episodes": self.episodes,
            "mean_tracking_reward": self.mean_tracking_reward,
            "mean_episode_length": self.mean_episode_length,
            "fall_rate": self.fall_rate,
            "velocity_error": self.velocity_error,
        }


@dataclass
class ValidationReport:
    config_a: EvalMetrics
    config_b: EvalMetrics
    retention: dict
    thresholds: dict
    passed: bool

    def summary(self) -> str:
        lines = ["sim-to-sim cross-validation", ""]
        header = f"{'metric':24s} {'config A':>12s} {'config B':>12s} {'B/A':>8s}"
        lines.append(header)
        a, b = self.config_a.as_dict(), self.config_b.as_dict()
        for key in ("mean_tracking_reward", "mean_episode_length", "fall_rate",
                    "velocity_error"):
            ratio = self.retention.get(key)
            ratio_s = f"{ratio:8.3f}" if ratio is not None else "     n/a"
            lines.append(f"{key:24s} {a[key]:12.5g} {b[key]:12.5g} {ratio_s}")
        lines.append("")
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"thresholds {self.thresholds} -> {verdict}")
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        a, b = self.config_a.as_dict(), self.config_b.as_dict()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "config_a", "config_b", "retention_b_over_a"])
            for key in a:
                w.writerow([key, a[key], b[key], self.retention.get(key, "")])
            w.writerow(["passed", "", "", int(self.passed)])


def _check_schema(ckpt: PolicyCheckpoint) -> None:
    if ckpt.obs_dim != OBS_DIM or ckpt.act_dim != 12:
        raise CheckpointError(
            f"checkpoint expects {ckpt.obs_dim}-d observations and "
            f"{ckpt.act_dim}-d actions; this environment uses {OBS_DIM}/12")


def evaluate_policy(ckpt: PolicyCheckpoint, exp: ExperimentConfig,
                    episodes: int, seed: int, commands=None,
                    max_steps: int = None) -> EvalMetrics:
    """Deterministic rollouts of `episodes` parallel environments, one
    episode each. `commands` (episodes, 3) pins the command profile."""
    _check_schema(ckpt)
    env = VecQuadEnv(exp, episodes, seed=seed, mode="eval", auto_reset=False)
    obs = env.reset(seed=seed)
    if commands is None:
        commands = env.commands.copy()
    env.set_commands(commands, lock=True)
    obs = env._observe().vector  # re-observe after pinning commands
    horizon = env.horizon if max_steps is None else min(env.horizon, max_steps)

    alive = np.ones(episodes, dtype=bool)
    track_sum = 0.0
    verr_sum = 0.0
    step_count = 0
    lengths = np.zeros(episodes, dtype=np.int64)
    fell = np.zeros(episodes, dtype=bool)
    for _ in range(horizon):
        act, _ = nets.forward(ckpt.policy, ckpt.norm.normalize(obs).astype(
            ckpt.policy.dtype))
        obs, reward, done, info = env.step(act.astype(float))
        terms = info["reward_terms"]
        raw = info["obs_raw"]
        track_sum += terms[alive, TRACK_IDX].sum()
        v_xy = raw[alive][:, 0:2]
        verr_sum += np.linalg.norm(env.commands[alive, :2] - v_xy, axis=-1).sum()
        step_count += int(alive.sum())
        lengths[alive] += 1
        newly_done = alive & done
        fell |= newly_done & np.isin(info["reasons"],
                                     (REASON_FALL_HEIGHT, REASON_FALL_TILT,
                                      REASON_DIVERGED))
        alive &= ~done
        if not alive.any():
            break
    return EvalMetrics(
        episodes=episodes,
        mean_tracking_reward=track_sum / max(step_count, 1),
        mean_episode_length=float(lengths.mean()),
        fall_rate=float(fell.mean()),
        velocity_error=verr_sum / max(step_count, 1),
    )


def cross_validate(ckpt: PolicyCheckpoint, exp_a: ExperimentConfig,
                   exp_b: ExperimentConfig, episodes: int = 20, seed: int = 0,
                   thresholds: dict = None, max_steps: int = None) -> ValidationReport:
    """Evaluate under A and B with an identical command profile and report
    B/A retention ratios (computed only where the A metric is nonzero)."""
    thresholds = dict(DEFAULT_THRESHOLDS if thresholds is None else thresholds)
    probe = VecQuadEnv(exp_a, episodes, seed=seed, mode="eval")
    probe.reset(seed=seed)
    commands = probe.commands.copy()

    a = evaluate_policy(ckpt, exp_a, episodes, seed, commands=commands,
                        max_steps=max_steps)
    b = evaluate_policy(ckpt, exp_b, episodes, seed, commands=commands,
                        max_steps=max_steps)

    retention = {}
    for key, av in a.as_dict().items():
        bv = b.as_dict()[key]
        if key == "episodes":
            continue
        retention[key] = bv / av if av != 0 else None

    passed = True
    for key, floor in thresholds.items():
        metric_key = {"tracking_reward": "mean_tracking_reward",
                      "episode_length": "mean_episode_length"}.get(key, key)
        r = retention.get(metric_key)
        if r is not None and r < floor:
            passed = False
    return ValidationReport(config_a=a, config_b=b, retention=retention,
                            thresholds=thresholds, passed=passed)
