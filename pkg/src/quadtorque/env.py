"""RL environment around the quadruped physics.

Implements the 48-element observation (fixed block order, per-block scales,
train-time Gaussian noise in physical units before scaling), the direct
torque action pipeline (x9.0, clamp to +/-30 N·m), the 14-term reward,
observation latency, periodic base-velocity pushes, per-episode friction and
command randomization, and termination. A batched vector env steps N
instances in lockstep with a fixed environment order; a single-env wrapper
exposes the one-robot lifecycle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import (
    OBS_DIM,
    REWARD_TERMS,
    EnvConfig,
    ExperimentConfig,
)
from .physics import ArticulatedModel, SimState, step_batch
from .terrain import TerrainBatch
from . import spatial as sp

# joint vector layout is (FL, FR, RL, RR) x (hip, thigh, calf)
DIAG_PAIRS = ((1, 10), (2, 11), (4, 7), (5, 8))   # FLT-RRT, FLC-RRC, FRT-RLT, FRC-RLC
HIP_INDICES = (0, 3, 6, 9)

DONE_REASONS = ("running", "timeout", "fall_height", "fall_tilt", "diverged",
                "action_invalid")
REASON_TIMEOUT = 1
REASON_FALL_HEIGHT = 2
REASON_FALL_TILT = 3
REASON_DIVERGED = 4
REASON_ACTION_INVALID = 5


class ActionInvalid(ValueError):
    pass


@dataclass
class Observation:
    """Policy input plus the pre-noise, pre-scale physical values."""

    vector: np.ndarray   # (..., 48) noised and scaled
    raw: np.ndarray      # (..., 48) physical units


@dataclass
class RewardBreakdown:
    """Per-term reward record for one step of one environment."""

    unweighted: dict     # term name -> value as written in the table
    weighted: dict       # term name -> weight * dt * value

    @property
    def total(self) -> float:
        return float(sum(self.weighted.values()))


def apply_action(raw, cfg: EnvConfig):
    """Scale the policy output into torques and clamp to the actuator range."""
    raw = np.asarray(raw, dtype=float)
    if not np.isfinite(raw).all():
        raise ActionInvalid("policy emitted a non-finite action")
    return np.clip(raw * cfg.action_scale, -cfg.torque_limit, cfg.torque_limit)


# ---------------------------------------------------------------------------
# observation assembly


def _observation_raw(state: SimState, commands, last_action):
    """(N, 48) physical-unit observation blocks in the documented order."""
    R0 = sp.quat_to_rot(state.base_quat)
    v_base = np.einsum("nji,nj->ni", R0, state.base_lin_vel)
    g_proj = -R0[:, 2, :]   # R^T @ (0,0,-1)
    return np.concatenate(
        [v_base, state.base_ang_vel, g_proj, state.joint_pos, state.joint_vel,
         commands, last_action],
        axis=-1,
    )


def build_observation_batch(state, commands, last_action, mode, rng, cfg,
                            scale_vec=None, noise_std=None) -> Observation:
    raw = _observation_raw(state, commands, last_action)
    if scale_vec is None:
        scale_vec = cfg.scale_vector()
    vec = raw
    if mode == "train":
        if noise_std is None:
            noise_std = cfg.noise_std_vector(cfg.noise_multiplier)
        if np.any(noise_std > 0):
            vec = raw + rng.standard_normal(raw.shape) * noise_std
    return Observation(vector=vec * scale_vec, raw=raw)


def build_observation(state, cmd, last_action, mode, rng, cfg) -> Observation:
    """Single-robot contract: state is a 1-batch SimState; returns 48-vectors."""
    obs = build_observation_batch(state, np.atleast_2d(cmd),
                                  np.atleast_2d(last_action), mode, rng, cfg)
    return Observation(vector=obs.vector[0], raw=obs.raw[0])


# ---------------------------------------------------------------------------
# reward


def _reward_terms_batch(prev, nxt, torques, action, last_action, commands,
                        report, cfg, dt, hip_targets, terrain):
    """(N, 14) unweighted term values, ordered as REWARD_TERMS."""
    n = nxt.n
    R0 = sp.quat_to_rot(nxt.base_quat)
    v_base = np.einsum("nji,nj->ni", R0, nxt.base_lin_vel)
    g_proj = -R0[:, 2, :]

    terms = np.zeros((n, len(REWARD_TERMS)))
    err_xy = commands[:, :2] - v_base[:, :2]
    terms[:, 0] = np.exp(-np.sum(err_xy**2, axis=-1) / cfg.tracking_sigma)
    terms[:, 1] = v_base[:, 2] ** 2
    terms[:, 2] = np.sum(nxt.base_ang_vel[:, :2] ** 2, axis=-1)
    terms[:, 3] = np.exp(-((commands[:, 2] - nxt.base_ang_vel[:, 2]) ** 2)
                         / cfg.tracking_sigma)
    terms[:, 4] = np.sum(g_proj[:, :2] ** 2, axis=-1)
    terms[:, 5] = np.sum(torques**2, axis=-1)
    terms[:, 6] = np.sum((prev.joint_vel - nxt.joint_vel) ** 2, axis=-1)
    if terrain is None:
        ground = np.zeros(n)
    else:
        ground = _terrain_under(terrain, nxt.base_pos)
    terms[:, 7] = (cfg.base_height_target - (nxt.base_pos[:, 2] - ground)) ** 2
    touchdown = nxt.foot_contact & ~prev.foot_contact
    landed_air = (prev.swing_time + dt - cfg.air_time_offset) * touchdown
    terms[:, 8] = np.sum(landed_air, axis=-1)
    terms[:, 9] = np.sum(nxt.knee_contact, axis=-1)
    terms[:, 10] = np.sum((last_action - action) ** 2, axis=-1)
    terms[:, 11] = np.sum(~nxt.foot_contact, axis=-1)   # phi flips the contact state
    qp = nxt.joint_pos
    for a, b in DIAG_PAIRS:
        terms[:, 12] += np.abs(qp[:, a] - qp[:, b])
    terms[:, 13] = np.sum(np.abs(hip_targets[None, :] - qp[:, HIP_INDICES]), axis=-1)
    return terms


def _terrain_under(terrain, base_pos):
    if hasattr(terrain, "n_env"):
        return terrain.height_at(base_pos[:, None, :2])[:, 0]
    return terrain.height_at(base_pos[:, 0], base_pos[:, 1])


def reward_weight_vector(cfg: EnvConfig, dt: float) -> np.ndarray:
    """Table weights x dt, ordered as REWARD_TERMS."""
    return np.array([cfg.reward_weights[t] for t in REWARD_TERMS]) * dt


def compute_reward(prev, nxt, torques, action, last_action, cmd, report, cfg,
                   dt, hip_targets, terrain=None) -> RewardBreakdown:
    """Single-robot contract over 1-batch inputs."""
    terms = _reward_terms_batch(prev, nxt, np.atleast_2d(torques),
                                np.atleast_2d(action), np.atleast_2d(last_action),
                                np.atleast_2d(cmd), report, cfg, dt,
                                np.asarray(hip_targets), terrain)[0]
    w = reward_weight_vector(cfg, dt)
    return RewardBreakdown(
        unweighted=dict(zip(REWARD_TERMS, terms)),
        weighted=dict(zip(REWARD_TERMS, terms * w)),
    )


# ---------------------------------------------------------------------------
# batched environment


class VecQuadEnv:
    """N quadrupeds stepped in lockstep; observations come back in fixed
    environment order regardless of per-env episode boundaries."""

    def __init__(self, exp: ExperimentConfig, n_envs: int, seed: int = 0,
                 mode: str = "train", auto_reset: bool = True, terrain=None):
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be train or eval, got {mode!r}")
        self.exp = exp
        self.cfg = exp.env
        self.sim = exp.sim
        self.mode = mode
        self.auto_reset = auto_reset
        self.n = n_envs
        self.obs_dim = OBS_DIM
        self.act_dim = 12
        self.model = ArticulatedModel.from_robot(exp.robot)
        self.terrain = terrain if terrain is not None else TerrainBatch.sample(
            exp.terrain, n_envs)
        self.horizon = self.cfg.horizon_steps(self.sim.dt)
        self.latency = self.cfg.latency_steps if mode == "train" else 0
        self.nominal = exp.nominal_pose.vector()
        self.hip_targets = exp.nominal_pose.hip_targets()
        self.scale_vec = self.cfg.scale_vector()
        self.noise_std = (self.cfg.noise_std_vector(self.cfg.noise_multiplier)
                          if mode == "train" else np.zeros(OBS_DIM))
        self.weight_vec = reward_weight_vector(self.cfg, self.sim.dt)
        self.reward_names = REWARD_TERMS

        self.state = SimState.zeros(n_envs)
        self.commands = np.zeros((n_envs, 3))
        self.commands_locked = np.zeros(n_envs, dtype=bool)  # teleop/eval override
        self.last_action = np.zeros((n_envs, 12))
        self.mu = np.full(n_envs, 0.5 * sum(self.cfg.friction_range))
        self.steps = np.zeros(n_envs, dtype=np.int64)
        self.next_push_step = np.full(n_envs, np.iinfo(np.int64).max, dtype=np.int64)
        self.episode_return = np.zeros(n_envs)
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self._queue: list[Observation] = []
        self._pending_obs = None

    # -- helpers

    def _sample_commands(self, k):
        r = self.cfg.command_ranges
        cols = [self.rng.uniform(*r[key], size=k) for key in ("vx", "vy", "yaw_rate")]
        return np.stack(cols, axis=-1)

    def _push_period_steps(self) -> int:
        period = self.cfg.push_interval_s / self.sim.dt
        if not np.isfinite(period) or period > 2**62:
            return np.iinfo(np.int64).max
        return max(1, int(round(period)))

    def set_commands(self, commands, env_ids=None, lock: bool = True) -> None:
        """Drive commands externally (teleop / scripted profiles)."""
        idx = slice(None) if env_ids is None else env_ids
        self.commands[idx] = commands
        self.commands_locked[idx] = lock

    # -- lifecycle

    def reset(self, seed=None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.Generator(np.random.PCG64(seed))
        self._pending_obs = None
        self._reset_envs(np.arange(self.n))
        obs = self._observe()
        self._queue = [Observation(obs.vector.copy(), obs.raw.copy())
                       for _ in range(self.latency)]
        return obs.vector.copy()

    def _reset_envs(self, idx) -> None:
        k = len(idx)
        if k == 0:
            return
        fresh = SimState.zeros(k)
        amp = self.cfg.init_joint_noise
        fresh.joint_pos[:] = self.nominal[None, :]
        if amp > 0 and self.mode == "train":
            fresh.joint_pos += self.rng.uniform(-amp, amp, size=(k, 12))
        # place the base so the lowest foot just touches its terrain cell
        from .physics import contact_point_positions
        cp = contact_point_positions(self.model, fresh)
        feet = cp[:, : self.model.n_feet, :]
        ground = self.terrain.height_at(feet[..., :2], env_ids=idx)
        clearance = ground - (feet[..., 2] - self.model.contact_radius[: self.model.n_feet])
        fresh.base_pos[:, 2] = clearance.max(axis=-1) - 1e-3  # embed 1 mm so stance registers
        self.state.assign(idx, fresh)
        # settle contact flags from actual penetration
        cp2 = contact_point_positions(self.model, self.state.select(idx))
        g2 = self.terrain.height_at(cp2[..., :2], env_ids=idx)
        pen = g2 - (cp2[..., 2] - self.model.contact_radius[None, :])
        self.state.foot_contact[idx] = pen[:, : self.model.n_feet] > 0
        self.state.knee_contact[idx] = pen[:, self.model.n_feet:] > 0
        self.state.swing_time[idx] = 0.0
        self.state.time[idx] = 0.0

        lo, hi = self.cfg.friction_range
        self.mu[idx] = self.rng.uniform(lo, hi, size=k) if self.mode == "train" \
            else 0.5 * (lo + hi)
        keep = self.commands_locked[idx]
        sampled = self._sample_commands(k)
        self.commands[idx] = np.where(keep[:, None], self.commands[idx], sampled)
        self.last_action[idx] = 0.0
        self.steps[idx] = 0
        self.next_push_step[idx] = self._push_period_steps()
        self.episode_return[idx] = 0.0

    def _observe(self) -> Observation:
        return build_observation_batch(
            self.state, self.commands, self.last_action, self.mode, self.rng,
            self.cfg, self.scale_vec, self.noise_std)

    # -- stepping

    def step(self, actions):
        """actions: (N, 12) raw policy outputs.

        Returns (obs (N,48), reward (N,), done (N,), info). info carries
        "reasons", "time_outs", "terminal_obs", "reward_terms" (N,14 weighted)
        and per-episode stats for environments that finished this step.
        """
        actions = np.asarray(actions, dtype=float)
        invalid = ~np.isfinite(actions).all(axis=-1)
        safe_actions = np.where(invalid[:, None], 0.0, actions)
        torques = np.clip(safe_actions * self.cfg.action_scale,
                          -self.cfg.torque_limit, self.cfg.torque_limit)

        prev = self.state
        state, report, diverged = step_batch(self.model, prev, torques,
                                             self.terrain, self.mu, self.sim)
        self.steps += 1

        # scheduled pushes overwrite the base x-y velocity right after the step
        due = self.steps >= self.next_push_step
        if self.mode == "train" and np.any(due):
            pv = self.cfg.push_velocity
            push = self.rng.uniform(-pv, pv, size=(int(due.sum()), 2))
            state.base_lin_vel[due, 0] = push[:, 0]
            state.base_lin_vel[due, 1] = push[:, 1]
            self.next_push_step[due] += self._push_period_steps()

        # mid-episode command resampling (optional, evaluation aid)
        if self.cfg.command_resample_s > 0:
            period = max(1, int(round(self.cfg.command_resample_s / self.sim.dt)))
            redo = (self.steps % period == 0) & ~self.commands_locked
            if np.any(redo):
                self.commands[redo] = self._sample_commands(int(redo.sum()))

        terms = _reward_terms_batch(prev, state, torques, safe_actions,
                                    self.last_action, self.commands, report,
                                    self.cfg, self.sim.dt, self.hip_targets,
                                    self.terrain)
        terms_weighted = terms * self.weight_vec
        reward = terms_weighted.sum(axis=-1)

        ground = _terrain_under(self.terrain, state.base_pos)
        height = state.base_pos[:, 2] - ground
        R22 = sp.quat_to_rot(state.base_quat)[:, 2, 2]
        fall_h = height < self.cfg.terminate_base_height
        fall_t = R22 < np.cos(self.cfg.terminate_tilt)
        timeout = self.steps >= self.horizon

        reasons = np.zeros(self.n, dtype=np.int64)
        reasons[timeout] = REASON_TIMEOUT
        reasons[fall_h] = REASON_FALL_HEIGHT
        reasons[fall_t] = REASON_FALL_TILT
        reasons[diverged] = REASON_DIVERGED
        reasons[invalid] = REASON_ACTION_INVALID
        done = reasons > 0

        self.state = state
        self.last_action = safe_actions.copy()
        self.episode_return += reward

        obs_now = self._observe()
        info = {
            "reasons": reasons,
            "time_outs": reasons == REASON_TIMEOUT,
            "terminal_obs": obs_now.vector.copy(),
            "reward_terms": terms_weighted,
            "reward_terms_unweighted": terms,
            "episode_return": np.where(done, self.episode_return, np.nan),
            "episode_length": np.where(done, self.steps, -1),
        }

        if self.auto_reset and np.any(done):
            idx = np.nonzero(done)[0]
            self._reset_envs(idx)
            fresh = self._observe()
            obs_now.vector[idx] = fresh.vector[idx]
            obs_now.raw[idx] = fresh.raw[idx]
            for q in self._queue:
                q.vector[idx] = fresh.vector[idx]
                q.raw[idx] = fresh.raw[idx]

        if self.latency:
            self._queue.append(obs_now)
            out = self._queue.pop(0)
        else:
            out = obs_now
        info["obs_raw"] = out.raw
        return out.vector.copy(), reward, done, info


class QuadrupedEnv:
    """Single-robot facade with the explicit reset/step lifecycle."""

    def __init__(self, exp: ExperimentConfig, seed: int = 0, mode: str = "train"):
        self.vec = VecQuadEnv(exp, 1, seed=seed, mode=mode, auto_reset=False)
        self._was_reset = False

    @property
    def state(self) -> SimState:
        return self.vec.state

    def reset_env(self, seed=None) -> np.ndarray:
        obs = self.vec.reset(seed=seed)
        self._was_reset = True
        return obs[0]

    def step_env(self, action):
        if not self._was_reset:
            raise RuntimeError("step_env called before reset_env")
        action = np.asarray(action, dtype=float)
        if not np.isfinite(action).all():
            raise ActionInvalid("policy emitted a non-finite action")
        obs, reward, done, info = self.vec.step(action[None, :])
        terms_w = info["reward_terms"][0]
        terms_u = info["reward_terms_unweighted"][0]
        breakdown = RewardBreakdown(
            unweighted=dict(zip(REWARD_TERMS, terms_u)),
            weighted=dict(zip(REWARD_TERMS, terms_w)),
        )
        reason = DONE_REASONS[int(info["reasons"][0])]
        return obs[0], breakdown, (bool(done[0]), reason)
