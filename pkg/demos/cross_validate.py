"""Sim-to-sim retention: evaluate one policy under the training physics (A)
and under a finer, stiffer configuration (B), with identical commands.

Uses a quickly-trained policy so the demo is self-contained; swap in a real
checkpoint path for meaningful numbers.
"""

import numpy as np

from quadtorque import load_experiment
from quadtorque.checkpoint import PolicyCheckpoint
from quadtorque.config import REWARD_TERMS
from quadtorque.env import VecQuadEnv
from quadtorque.ppo import Trainer
from quadtorque.validate import cross_validate

exp_a = load_experiment("builtin:quadruped_flat")
exp_b = load_experiment("builtin:quadruped_flat_fine")

print("training a short policy for the demo (20 iterations)...")
env = VecQuadEnv(exp_a, 64, seed=0, mode="train")
from dataclasses import replace
trainer = Trainer(env, replace(exp_a.ppo, n_envs=64), exp_a.policy,
                  reward_term_names=REWARD_TERMS)
for _ in range(20):
    trainer.run_iteration()

ckpt = PolicyCheckpoint(
    policy=trainer.policy.astype(np.float32),
    value=trainer.value.astype(np.float32),
    norm=trainer.norm, iteration=trainer.iteration, seed=0,
    fingerprint=exp_a.fingerprint(), lr=trainer.lr,
    total_steps=trainer.total_steps)

report = cross_validate(ckpt, exp_a, exp_b, episodes=20, seed=0, max_steps=1500)
print()
print(report.summary())
