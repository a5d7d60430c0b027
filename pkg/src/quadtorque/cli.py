"""Command-line entry points: train, eval, validate, serve, export-heightfield.

Exit codes: 0 success, 2 configuration error, 3 training diverged (the last
good checkpoint is retained).
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .checkpoint import (CheckpointError, PolicyCheckpoint, load_checkpoint,
                         save_checkpoint)
from .config import REWARD_TERMS, ConfigError, load_experiment
from .env import VecQuadEnv
from .ppo import Trainer
from .terrain import generate
from .validate import cross_validate
from . import nets

EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _load_exp(path, overrides=None):
    exp = load_experiment(path)
    if overrides:
        user = exp.effective
        for dotted, value in overrides.items():
            node = user
            *head, leaf = dotted.split(".")
            for key in head:
                node = node[key]
            node[leaf] = value
        from .config import build_experiment
        exp = build_experiment(user)
    return exp


def _checkpoint_from_trainer(trainer, exp) -> PolicyCheckpoint:
    return PolicyCheckpoint(
        policy=trainer.policy.astype(np.float32),
        value=trainer.value.astype(np.float32),
        norm=trainer.norm,
        iteration=trainer.iteration,
        seed=trainer.cfg.seed,
        fingerprint=exp.fingerprint(),
        lr=trainer.lr,
        total_steps=trainer.total_steps,
    )


def cmd_train(args) -> int:
    exp = _load_exp(args.config, _train_overrides(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    exp.write_effective(out / "effective_config.toml")

    env = VecQuadEnv(exp, exp.ppo.n_envs, seed=exp.ppo.seed, mode="train")
    trainer = Trainer(env, exp.ppo, exp.policy, reward_term_names=REWARD_TERMS)
    if args.resume:
        ck = load_checkpoint(args.resume, expect_fingerprint=exp.fingerprint(),
                             force=args.force)
        dtype = trainer.policy.dtype
        trainer.policy = ck.policy.astype(dtype)
        trainer.value = ck.value.astype(dtype)
        trainer.policy_opt = nets.Adam(trainer.policy,
                                       train_log_std=exp.policy.train_std)
        trainer.value_opt = nets.Adam(trainer.value)
        trainer.norm = ck.norm
        trainer.iteration = ck.iteration
        trainer.total_steps = ck.total_steps
        trainer.lr = ck.lr

    metrics_path = out / "metrics.csv"
    mode = "a" if args.resume and metrics_path.exists() else "w"
    aborted_streak = 0
    with open(metrics_path, mode, newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=trainer.metric_columns())
        if mode == "w":
            writer.writeheader()
        target = args.iterations if args.iterations is not None else exp.ppo.iterations
        while trainer.iteration < target:
            row = trainer.run_iteration()
            writer.writerow(row)
            fh.flush()
            aborted_streak = aborted_streak + 1 if np.isnan(row["kl"]) else 0
            if not args.quiet:
                print(f"it {row['iteration']:5d}  rew/step {row['mean_step_reward']:+.5f}  "
                      f"ep_ret {row['mean_episode_return']:8.3f}  kl {row['kl']:.4f}  "
                      f"lr {row['lr']:.2e}  wall {row['wall_s']:.1f}s", flush=True)
            if trainer.iteration % exp.ppo.checkpoint_every == 0:
                save_checkpoint(out / f"checkpoint_{trainer.iteration:06d}.qtck",
                                _checkpoint_from_trainer(trainer, exp))
            if aborted_streak >= 5:
                print("training diverged: 5 consecutive aborted updates",
                      file=sys.stderr)
                save_checkpoint(out / "checkpoint_final.qtck",
                                _checkpoint_from_trainer(trainer, exp))
                return EXIT_DIVERGED
    save_checkpoint(out / "checkpoint_final.qtck",
                    _checkpoint_from_trainer(trainer, exp))
    return 0


def _train_overrides(args) -> dict:
    over = {}
    if args.seed is not None:
        over["ppo.seed"] = args.seed
    if args.envs is not None:
        over["ppo.n_envs"] = args.envs
    if args.iterations is not None:
        over["ppo.iterations"] = args.iterations
    return over


def _read_profile(path):
    """Command profile CSV: t,vx,vy,wz rows sorted by time."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append((float(rec["t"]), float(rec["vx"]), float(rec["vy"]),
                         float(rec["wz"])))
    if not rows:
        raise ConfigError(f"command profile {path} is empty")
    return sorted(rows)


def cmd_eval(args) -> int:
    exp = _load_exp(args.config)
    ckpt = load_checkpoint(args.checkpoint,
                           expect_fingerprint=exp.fingerprint(),
                           force=args.force)
    profile = _read_profile(args.profile)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    n = args.episodes
    env = VecQuadEnv(exp, n, seed=args.seed, mode="eval", auto_reset=False)
    obs = env.reset(seed=args.seed)
    horizon = env.horizon
    dt = exp.sim.dt

    term_sums = np.zeros((n, len(REWARD_TERMS)))
    verr_sum = np.zeros(n)
    v_achieved = np.zeros(n, dtype=float)
    w_achieved = np.zeros(n, dtype=float)
    counts = np.zeros(n)
    fell = np.zeros(n, dtype=bool)
    alive = np.ones(n, dtype=bool)
    prof_idx = 0
    for step in range(horizon):
        t = step * dt
        while prof_idx < len(profile) and profile[prof_idx][0] <= t:
            _, vx, vy, wz = profile[prof_idx]
            env.set_commands(np.tile([vx, vy, wz], (n, 1)), lock=True)
            prof_idx += 1
        act, _ = nets.forward(ckpt.policy,
                              ckpt.norm.normalize(obs).astype(ckpt.policy.dtype))
        obs, reward, done, info = env.step(act.astype(float))
        raw = info["obs_raw"]
        term_sums[alive] += info["reward_terms"][alive]
        verr_sum[alive] += np.linalg.norm(env.commands[alive, :2] - raw[alive, 0:2],
                                          axis=-1)
        v_achieved[alive] += raw[alive, 0]
        w_achieved[alive] += raw[alive, 5]
        counts[alive] += 1
        fell |= alive & done & (info["reasons"] >= 2)
        alive &= ~done
        if not alive.any():
            break

    counts = np.maximum(counts, 1)
    with open(out / "eval.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "steps", "fell", "tracking_error",
                    "mean_vx", "mean_wz"] + [f"rew_{t}" for t in REWARD_TERMS])
        for i in range(n):
            w.writerow([i, int(counts[i]), int(fell[i]), verr_sum[i] / counts[i],
                        v_achieved[i] / counts[i], w_achieved[i] / counts[i]]
                       + list(term_sums[i] / counts[i]))
    print(f"episodes {n}  falls {int(fell.sum())}  "
          f"mean tracking error {float(np.mean(verr_sum / counts)):.4f} m/s  "
          f"mean achieved vx {float(np.mean(v_achieved / counts)):.4f} m/s  "
          f"mean achieved wz {float(np.mean(w_achieved / counts)):.4f} rad/s")
    return 0


def cmd_validate(args) -> int:
    exp_a = _load_exp(args.config_a)
    exp_b = _load_exp(args.config_b)
    ckpt = load_checkpoint(args.checkpoint,
                           expect_fingerprint=exp_a.fingerprint(),
                           force=args.force)
    report = cross_validate(ckpt, exp_a, exp_b, episodes=args.episodes,
                            seed=args.seed)
    print(report.summary())
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        report.write_csv(args.out)
    return 0 if report.passed else 1


def cmd_serve(args) -> int:
    from .serve import TeleopServer
    exp = _load_exp(args.config)
    ckpt = load_checkpoint(args.checkpoint,
                           expect_fingerprint=exp.fingerprint(),
                           force=args.force)
    server = TeleopServer(exp, ckpt, port=args.port, host=args.host,
                          fast=args.fast)
    print(f"serving on {args.host}:{server.port} "
          f"({'max speed' if args.fast else 'wall-clock paced'})", flush=True)
    server.serve_forever()
    return 0


def cmd_export_heightfield(args) -> int:
    exp = _load_exp(args.config)
    cfg = exp.terrain
    if args.seed is not None:
        from dataclasses import replace
        cfg = replace(cfg, seed=args.seed)
    field = generate(cfg)
    field.to_csv(args.out)
    print(f"wrote {field.shape[0]}x{field.shape[1]} grid to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="quadtorque",
        description="Torque-control quadruped locomotion: train, evaluate, "
                    "cross-validate, and teleoperate learned policies.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run PPO training")
    t.add_argument("--config", default="builtin:quadruped_rough",
                   help="experiment file or builtin:<name>")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--envs", type=int, default=None)
    t.add_argument("--iterations", type=int, default=None)
    t.add_argument("--out", default="runs/latest")
    t.add_argument("--resume", default=None, help="checkpoint to continue from")
    t.add_argument("--force", action="store_true",
                   help="accept checkpoints with a different config fingerprint")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="deterministic rollouts over a command profile")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", default="builtin:quadruped_rough")
    e.add_argument("--profile", required=True, help="CSV with t,vx,vy,wz rows")
    e.add_argument("--episodes", type=int, default=8)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default="runs/eval")
    e.add_argument("--force", action="store_true")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("validate", help="sim-to-sim cross-validation")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--config-a", required=True)
    v.add_argument("--config-b", required=True)
    v.add_argument("--episodes", type=int, default=20)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", default=None, help="report CSV path")
    v.add_argument("--force", action="store_true")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("serve", help="teleoperation/telemetry server")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config", default="builtin:quadruped_rough")
    s.add_argument("--port", type=int, default=8765)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--fast", action="store_true", help="run unpaced")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_serve)

    x = sub.add_parser("export-heightfield", help="dump a terrain grid as CSV")
    x.add_argument("--config", default="builtin:quadruped_rough")
    x.add_argument("--seed", type=int, default=None)
    x.add_argument("--out", default="heightfield.csv")
    x.set_defaults(func=cmd_export_heightfield)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
