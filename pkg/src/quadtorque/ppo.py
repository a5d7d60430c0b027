"""PPO with clipped surrogate, GAE, KL-adaptive learning rate, and running
observation normalization.

Rollouts are collected over a batched environment in fixed env order; the
update consumes shuffled minibatches for several epochs with gradients
assembled analytically through the MLP backward pass. Samples from
environments that fail mid-rollout (divergence) are excised from the update
and counted.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .config import PPOConfig, PolicyConfig
from . import nets


class NonFiniteLoss(RuntimeError):
    """A loss or gradient went non-finite; parameters were not written."""


class RunningNorm:
    """Per-dimension running mean/variance with count-weighted merging.

    Merging statistics of two disjoint batches reproduces the statistics of
    their concatenation (population variance, ddof=0).
    """

    def __init__(self, dim: int, eps: float = 1e-8):
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)       # sum of squared deviations
        self.count = 0.0
        self.eps = eps

    def update(self, batch) -> None:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or len(batch) == 0:
            raise ValueError("update expects a non-empty (n, dim) batch")
        bn = float(len(batch))
        bmean = batch.mean(axis=0)
        bm2 = batch.var(axis=0) * bn
        if self.count == 0.0:
            self.mean, self.m2, self.count = bmean, bm2, bn
            return
        tot = self.count + bn
        delta = bmean - self.mean
        self.mean = self.mean + delta * (bn / tot)
        self.m2 = self.m2 + bm2 + delta * delta * (self.count * bn / tot)
        self.count = tot

    @property
    def variance(self) -> np.ndarray:
        if self.count == 0.0:
            return np.ones_like(self.m2)
        return np.maximum(self.m2 / self.count, self.eps)

    def normalize(self, x):
        if self.count == 0.0:
            return np.asarray(x).copy()
        return (x - self.mean) / np.sqrt(self.m2 / self.count + self.eps)

    def state_dict(self) -> dict:
        return {"mean": self.mean.copy(), "m2": self.m2.copy(), "count": self.count}

    @classmethod
    def from_state(cls, state) -> "RunningNorm":
        out = cls(len(state["mean"]))
        out.mean = np.asarray(state["mean"], dtype=np.float64).copy()
        out.m2 = np.asarray(state["m2"], dtype=np.float64).copy()
        out.count = float(state["count"])
        return out


@dataclass
class RolloutBuffer:
    """Rectangular (steps, envs) rollout storage."""

    obs: np.ndarray            # (T, N, obs) as fed to the policy, pre-normalization
    obs_norm: np.ndarray       # (T, N, obs) normalized input actually consumed
    actions: np.ndarray        # (T, N, act)
    means: np.ndarray          # (T, N, act) policy means at sampling time
    log_probs: np.ndarray      # (T, N)
    values: np.ndarray         # (T, N)
    rewards: np.ndarray        # (T, N)
    dones: np.ndarray          # (T, N) bool
    terminal_values: np.ndarray  # (T, N) bootstrap at done steps (0 for falls)
    bootstrap_value: np.ndarray  # (N,) value of the final observation
    valid: np.ndarray          # (T, N) bool; False = excised sample
    advantages: np.ndarray = None
    returns: np.ndarray = None

    @property
    def steps(self):
        return self.obs.shape[0]

    @property
    def n_envs(self):
        return self.obs.shape[1]


def gaussian_log_prob(mean, log_std, actions):
    z = (actions - mean) / np.exp(log_std)
    d = mean.shape[-1]
    return (-0.5 * np.sum(z * z, axis=-1) - np.sum(log_std)
            - 0.5 * d * nets.LOG_2PI)


def compute_gae(buffer: RolloutBuffer, gamma: float, lam: float,
                normalize: bool = True) -> None:
    """Standard GAE recursion with done masking; writes advantages/returns.

    At a done step the tail is cut: the bootstrap is the stored terminal
    value (value estimate for timeouts, 0 for terminal falls).
    """
    T, N = buffer.rewards.shape
    adv = np.zeros((T, N))
    carry = np.zeros(N)
    next_value = buffer.bootstrap_value
    for t in range(T - 1, -1, -1):
        done = buffer.dones[t]
        nv = np.where(done, buffer.terminal_values[t], next_value)
        delta = buffer.rewards[t] + gamma * nv - buffer.values[t]
        carry = delta + gamma * lam * np.where(done, 0.0, carry)
        adv[t] = carry
        next_value = buffer.values[t]
    buffer.returns = adv + buffer.values
    if normalize:
        flat = adv[buffer.valid]
        adv = (adv - flat.mean()) / (flat.std() + 1e-8)
    buffer.advantages = adv


def adapt_learning_rate(lr: float, observed_kl: float, cfg: PPOConfig) -> float:
    """Raise/lower the step size to chase the desired KL divergence."""
    if observed_kl > 2.0 * cfg.desired_kl:
        lr = lr / cfg.lr_factor
    elif observed_kl < 0.5 * cfg.desired_kl:
        lr = lr * cfg.lr_factor
    return float(np.clip(lr, cfg.lr_min, cfg.lr_max))


@dataclass
class UpdateStats:
    kl: float = 0.0
    clip_fraction: float = 0.0
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    lr: float = 0.0
    aborted: bool = False
    detail: str = ""


def ppo_update(policy, value, policy_opt, value_opt, buffer: RolloutBuffer,
               cfg: PPOConfig, lr: float, rng,
               entropy_trainable: bool = False) -> tuple[float, UpdateStats]:
    """Clipped-surrogate update over shuffled minibatches for cfg.epochs.

    Returns (new_lr, stats). On a non-finite loss or gradient the update is
    rolled back (no parameter write) and stats.aborted is set.
    """
    snapshot_p = policy.copy()
    snapshot_v = value.copy()
    obs = buffer.obs_norm[buffer.valid]
    actions = buffer.actions[buffer.valid]
    old_means = buffer.means[buffer.valid]
    old_logp = buffer.log_probs[buffer.valid]
    adv = buffer.advantages[buffer.valid]
    returns = buffer.returns[buffer.valid]
    M = len(obs)
    mb = min(cfg.minibatch_size, M)
    eps = cfg.clip
    log_std = policy.log_std.astype(np.float64)
    var = np.exp(2.0 * log_std)

    kls, clips, plosses, vlosses = [], [], [], []
    try:
        for _ in range(cfg.epochs):
            perm = rng.permutation(M)
            for start in range(0, M - mb + 1, mb):
                idx = perm[start:start + mb]
                o = obs[idx]
                a = actions[idx]
                adv_i = adv[idx]
                mean, cache = nets.forward(policy, o.astype(policy.dtype))
                mean64 = mean.astype(np.float64)
                logp = gaussian_log_prob(mean64, log_std, a)
                ratio = np.exp(logp - old_logp[idx])
                unclipped = ratio * adv_i
                clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv_i
                ploss = -np.mean(np.minimum(unclipped, clipped))
                ent = nets.entropy(policy)
                loss_reported = ploss - cfg.entropy_coef * ent

                # gradient of -min(unclipped, clipped) w.r.t. the mean:
                # the unclipped branch wins strict ties to the clipped one,
                # so at ratio exactly 1 +/- eps with the clip saturated the
                # gradient is exactly zero
                use_unclipped = unclipped < clipped
                inside = (ratio > 1.0 - eps) & (ratio < 1.0 + eps)
                coef = np.where(use_unclipped | inside, ratio * adv_i, 0.0)
                dlogp_dmean = (a - mean64) / var
                dmean = -(coef[:, None] * dlogp_dmean) / len(idx)
                grads = nets.backward(policy, cache, dmean.astype(policy.dtype))
                if entropy_trainable:
                    dlogp_dls = (a - mean64) ** 2 / var - 1.0
                    g_ls = -(coef[:, None] * dlogp_dls).mean(axis=0)
                    g_ls -= cfg.entropy_coef  # d(entropy)/d(log_std) = 1
                    grads.d_log_std = g_ls.astype(policy.dtype)

                v, vcache = nets.forward(value, o.astype(value.dtype))
                verr = v[:, 0].astype(np.float64) - returns[idx]
                vloss = 0.5 * float(np.mean(verr**2))
                dv = (cfg.value_coef * verr / len(idx))[:, None]
                vgrads = nets.backward(value, vcache, dv.astype(value.dtype))

                if not (np.isfinite(loss_reported) and np.isfinite(vloss)
                        and grads.allfinite() and vgrads.allfinite()):
                    raise NonFiniteLoss(
                        f"ploss={ploss} vloss={vloss} lr={lr}")

                policy_opt.step(policy, grads, lr)
                value_opt.step(value, vgrads, lr)

                kl = float(np.mean(
                    np.sum((mean64 - old_means[idx]) ** 2 / (2.0 * var), axis=-1)))
                lr = adapt_learning_rate(lr, kl, cfg)
                kls.append(kl)
                clips.append(float(np.mean(np.abs(ratio - 1.0) > eps)))
                plosses.append(float(ploss))
                vlosses.append(vloss)
    except NonFiniteLoss as exc:
        for i in range(len(policy.weights)):
            policy.weights[i][:] = snapshot_p.weights[i]
            policy.biases[i][:] = snapshot_p.biases[i]
            value.weights[i][:] = snapshot_v.weights[i]
            value.biases[i][:] = snapshot_v.biases[i]
        if policy.log_std is not None:
            policy.log_std[:] = snapshot_p.log_std
        return lr, UpdateStats(aborted=True, detail=str(exc), lr=lr)

    stats = UpdateStats(
        kl=float(np.mean(kls)), clip_fraction=float(np.mean(clips)),
        policy_loss=float(np.mean(plosses)), value_loss=float(np.mean(vlosses)),
        entropy=nets.entropy(policy), lr=lr,
    )
    return lr, stats


def collect_rollout(policy, value, env, norm: RunningNorm, cfg: PPOConfig,
                    rng) -> tuple[RolloutBuffer, dict]:
    """Roll cfg.steps_per_env steps over the batched env.

    Environments auto-reset mid-rollout; timeout terminations bootstrap with
    the value estimate of the terminal observation, falls with zero.
    Diverged environments have the offending step excised (valid=False).
    """
    T, N = cfg.steps_per_env, env.n
    obs_dim, act_dim = env.obs_dim, env.act_dim
    buf = RolloutBuffer(
        obs=np.zeros((T, N, obs_dim)), obs_norm=np.zeros((T, N, obs_dim)),
        actions=np.zeros((T, N, act_dim)), means=np.zeros((T, N, act_dim)),
        log_probs=np.zeros((T, N)), values=np.zeros((T, N)),
        rewards=np.zeros((T, N)), dones=np.zeros((T, N), dtype=bool),
        terminal_values=np.zeros((T, N)), bootstrap_value=np.zeros(N),
        valid=np.ones((T, N), dtype=bool),
    )
    log_std = policy.log_std.astype(np.float64)
    std = np.exp(log_std)
    ep_returns, ep_lengths, n_diverged = [], [], 0
    term_sums = None
    obs = env._pending_obs if getattr(env, "_pending_obs", None) is not None \
        else env.reset()

    for t in range(T):
        norm_obs = norm.normalize(obs)
        mean, _ = nets.forward(policy, norm_obs.astype(policy.dtype))
        mean = mean.astype(np.float64)
        actions = mean + std * rng.standard_normal(mean.shape)
        v, _ = nets.forward(value, norm_obs.astype(value.dtype))
        buf.obs[t] = obs
        buf.obs_norm[t] = norm_obs
        buf.actions[t] = actions
        buf.means[t] = mean
        buf.log_probs[t] = gaussian_log_prob(mean, log_std, actions)
        buf.values[t] = v[:, 0].astype(np.float64)

        obs, reward, done, info = env.step(actions)
        buf.rewards[t] = reward
        buf.dones[t] = done
        if "reward_terms" in info:
            term_sums = info["reward_terms"].sum(axis=0) if term_sums is None \
                else term_sums + info["reward_terms"].sum(axis=0)
        if np.any(done):
            timeouts = info["time_outs"]
            if np.any(timeouts):
                tv, _ = nets.forward(
                    value, norm.normalize(info["terminal_obs"][timeouts])
                    .astype(value.dtype))
                buf.terminal_values[t, timeouts] = tv[:, 0].astype(np.float64)
            diverged = info["reasons"] == 4
            if np.any(diverged):
                n_diverged += int(diverged.sum())
                buf.valid[t, diverged] = False
            fin = np.nonzero(done)[0]
            ep_returns.extend(info["episode_return"][fin].tolist())
            ep_lengths.extend(info["episode_length"][fin].tolist())

    env._pending_obs = obs
    tv, _ = nets.forward(value, norm.normalize(obs).astype(value.dtype))
    buf.bootstrap_value = tv[:, 0].astype(np.float64)
    stats = {
        "episode_returns": ep_returns,
        "episode_lengths": ep_lengths,
        "n_diverged": n_diverged,
        "reward_term_means": None if term_sums is None else term_sums / (T * N),
    }
    return buf, stats


# ---------------------------------------------------------------------------
# training loop


METRIC_COLUMNS = [
    "iteration", "env_steps", "mean_step_reward", "mean_episode_return",
    "mean_episode_length", "episodes_done", "diverged_envs", "kl", "lr",
    "clip_fraction", "policy_loss", "value_loss", "entropy",
]


class Trainer:
    """Owns policy/value networks, normalization state, and the PPO loop."""

    def __init__(self, env, ppo_cfg: PPOConfig, policy_cfg: PolicyConfig,
                 reward_term_names=()):
        self.env = env
        self.cfg = ppo_cfg
        self.policy_cfg = policy_cfg
        dtype = np.float32 if policy_cfg.dtype == "float32" else np.float64
        rng = np.random.default_rng(ppo_cfg.seed)
        sizes = (env.obs_dim, *policy_cfg.hidden)
        self.policy = nets.init_mlp((*sizes, env.act_dim), rng, out_gain=0.01,
                                    log_std=np.log(policy_cfg.action_std),
                                    dtype=dtype)
        self.value = nets.init_mlp((*sizes, 1), rng, out_gain=1.0, dtype=dtype)
        self.policy_opt = nets.Adam(self.policy, train_log_std=policy_cfg.train_std)
        self.value_opt = nets.Adam(self.value)
        self.norm = RunningNorm(env.obs_dim)
        self.lr = ppo_cfg.lr_init
        self.rng = rng
        self.iteration = 0
        self.total_steps = 0
        self.reward_term_names = tuple(reward_term_names)
        self._ep_window: list = []

    def metric_columns(self):
        return METRIC_COLUMNS + [f"rew_{n}" for n in self.reward_term_names] + ["wall_s"]

    def run_iteration(self) -> dict:
        t0 = time.perf_counter()
        buf, cstats = collect_rollout(self.policy, self.value, self.env,
                                      self.norm, self.cfg, self.rng)
        self.norm.update(buf.obs.reshape(-1, self.env.obs_dim)[buf.valid.reshape(-1)])
        compute_gae(buf, self.cfg.gamma, self.cfg.gae_lambda)
        self.lr, ustats = ppo_update(
            self.policy, self.value, self.policy_opt, self.value_opt, buf,
            self.cfg, self.lr, self.rng,
            entropy_trainable=self.policy_cfg.train_std)
        self.iteration += 1
        self.total_steps += int(buf.valid.sum())
        self._ep_window.extend(cstats["episode_returns"])
        self._ep_window = self._ep_window[-100:]
        row = {
            "iteration": self.iteration,
            "env_steps": self.total_steps,
            "mean_step_reward": float(buf.rewards[buf.valid].mean()),
            "mean_episode_return": float(np.mean(self._ep_window)) if self._ep_window else float("nan"),
            "mean_episode_length": float(np.mean(cstats["episode_lengths"])) if cstats["episode_lengths"] else float("nan"),
            "episodes_done": len(cstats["episode_returns"]),
            "diverged_envs": cstats["n_diverged"],
            "kl": ustats.kl, "lr": self.lr,
            "clip_fraction": ustats.clip_fraction,
            "policy_loss": ustats.policy_loss, "value_loss": ustats.value_loss,
            "entropy": ustats.entropy,
        }
        if self.reward_term_names:
            means = cstats["reward_term_means"]
            for i, name in enumerate(self.reward_term_names):
                row[f"rew_{name}"] = float(means[i]) if means is not None else float("nan")
        row["wall_s"] = time.perf_counter() - t0
        if ustats.aborted:
            row["kl"] = float("nan")
        return row
