"""Torque-controlled pendulum swing-up: a 1-DoF sanity task for the trainer.

Shares the batched-env interface of VecQuadEnv (reset/step with the same
info contract) so the PPO machinery runs unchanged. The reward mirrors the
exponential tracking form used by the quadruped terms and stays in (0, 1],
which makes ratio-based learning checks meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PendulumConfig:
    dt: float = 0.05
    horizon: int = 200
    mass: float = 1.0
    length: float = 0.75        # pivot-to-mass distance
    gravity: float = 9.81
    damping: float = 0.1
    action_scale: float = 6.0
    torque_limit: float = 12.0
    reward_sigma: float = 1.0   # exp(-err^2 / sigma)
    init_angle: float = 2.5     # reset draws theta from +/- this, away from upright


class PendulumVecEnv:
    """theta = 0 hanging down, target theta = pi (upright)."""

    obs_dim = 3
    act_dim = 1

    def __init__(self, cfg: PendulumConfig, n_envs: int, seed: int = 0):
        self.cfg = cfg
        self.n = n_envs
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.theta = np.zeros(n_envs)
        self.theta_dot = np.zeros(n_envs)
        self.steps = np.zeros(n_envs, dtype=np.int64)
        self.episode_return = np.zeros(n_envs)
        self._pending_obs = None

    def _observe(self):
        return np.stack(
            [np.cos(self.theta), np.sin(self.theta), 0.25 * self.theta_dot],
            axis=-1,
        )

    def reset(self, seed=None):
        if seed is not None:
            self.rng = np.random.Generator(np.random.PCG64(seed))
        self._reset_envs(np.arange(self.n))
        return self._observe()

    def _reset_envs(self, idx):
        k = len(idx)
        a = self.cfg.init_angle
        self.theta[idx] = self.rng.uniform(-a, a, size=k)
        self.theta_dot[idx] = self.rng.uniform(-1.0, 1.0, size=k)
        self.steps[idx] = 0
        self.episode_return[idx] = 0.0

    def step(self, actions):
        cfg = self.cfg
        actions = np.asarray(actions, dtype=float)
        tau = np.clip(actions[:, 0] * cfg.action_scale,
                      -cfg.torque_limit, cfg.torque_limit)
        inertia = cfg.mass * cfg.length**2
        acc = (tau - cfg.mass * cfg.gravity * cfg.length * np.sin(self.theta)
               - cfg.damping * self.theta_dot) / inertia
        self.theta_dot = self.theta_dot + cfg.dt * acc
        self.theta = self.theta + cfg.dt * self.theta_dot
        self.steps += 1

        # wrapped angular distance to upright (theta = pi); the velocity term
        # rewards balancing rather than spinning through the top
        err = np.mod(self.theta, 2.0 * np.pi) - np.pi
        reward = np.exp(-(err**2 + 0.1 * self.theta_dot**2) / cfg.reward_sigma)
        self.episode_return += reward
        done = self.steps >= cfg.horizon
        obs_now = self._observe()
        info = {
            "reasons": np.where(done, 1, 0),
            "time_outs": done.copy(),
            "terminal_obs": obs_now.copy(),
            "episode_return": np.where(done, self.episode_return, np.nan),
            "episode_length": np.where(done, self.steps, -1),
        }
        if np.any(done):
            idx = np.nonzero(done)[0]
            self._reset_envs(idx)
            obs_now[idx] = self._observe()[idx]
        return obs_now, reward, done, info
