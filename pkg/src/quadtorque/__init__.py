"""quadtorque: a torque-control locomotion lab.

Batched floating-base quadruped physics at 500 Hz, the matching RL
environment (48-d observations, direct torque actions, 14-term reward),
a from-scratch MLP/PPO trainer, sim-to-sim cross-validation, and a live
teleoperation server.
"""

from .config import (
    ExperimentConfig,
    EnvConfig,
    PPOConfig,
    PolicyConfig,
    SimConfig,
    NominalPose,
    RobotModel,
    ConfigError,
    load_experiment,
)
from .terrain import TerrainConfig, Heightfield, TerrainBatch, generate
from .physics import (
    ArticulatedModel,
    ContactReport,
    SimState,
    SimulationDiverged,
    apply_push,
    step,
    step_batch,
)
from .env import (
    Observation,
    QuadrupedEnv,
    RewardBreakdown,
    VecQuadEnv,
    apply_action,
    build_observation,
    compute_reward,
)
from .ppo import RunningNorm, Trainer, adapt_learning_rate, compute_gae
from .checkpoint import PolicyCheckpoint, load_checkpoint, save_checkpoint
from .validate import ValidationReport, cross_validate
from . import nets

__version__ = "0.1.0"
