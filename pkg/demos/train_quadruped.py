"""Desk-scale quadruped training on flat ground.

Watch the episode length climb as the policy learns to stand, then the
velocity-tracking term as it starts following commands. A few hundred
iterations (~15 min CPU) shows clear progress; the rough-terrain preset
with full randomization is the longer-haul configuration.
"""

from quadtorque import load_experiment
from quadtorque.config import REWARD_TERMS
from quadtorque.env import VecQuadEnv
from quadtorque.ppo import Trainer

exp = load_experiment("builtin:quadruped_flat")
env = VecQuadEnv(exp, exp.ppo.n_envs, seed=exp.ppo.seed, mode="train")
trainer = Trainer(env, exp.ppo, exp.policy, reward_term_names=REWARD_TERMS)

print(f"{exp.ppo.n_envs} envs, batch {exp.ppo.batch_size}, "
      f"minibatch {exp.ppo.minibatch_size}, horizon {env.horizon} steps")
for i in range(300):
    row = trainer.run_iteration()
    if (i + 1) % 10 == 0:
        print(f"iter {row['iteration']:4d}  reward/step {row['mean_step_reward']:+.5f}  "
              f"track {row['rew_track_lin_vel']:.6f}  "
              f"ep len {row['mean_episode_length']:6.0f}  kl {row['kl']:.4f}  "
              f"{row['wall_s']:.1f}s")
