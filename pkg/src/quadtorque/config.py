"""Experiment configuration: robot description, simulation, environment,
training and terrain settings.

Everything numeric lives here (or in the shipped TOML files) exactly once;
the rest of the package reads these objects and hardcodes nothing.

Files are TOML. Unknown keys are rejected with their full path; omitted keys
take the documented defaults; the resolved ("effective") configuration can be
echoed back out as TOML and reloads to an identical experiment.
"""

from __future__ import annotations

import copy
import hashlib
import io
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .terrain import TerrainConfig

LEGS = ("FL", "FR", "RL", "RR")
JOINT_KINDS = ("hip", "thigh", "calf")
JOINT_NAMES = tuple(f"{leg}_{kind}" for leg in LEGS for kind in JOINT_KINDS)
NUM_JOINTS = 12
OBS_DIM = 48
TORQUE_LIMIT = 30.0

# Observation vector layout: (name, length, scale key, noise key or None)
OBS_LAYOUT = (
    ("base_lin_vel", 3, "lin_vel", "lin_vel"),
    ("base_ang_vel", 3, "ang_vel", "ang_vel"),
    ("projected_gravity", 3, "gravity", "gravity"),
    ("joint_pos", 12, "joint_pos", "joint_pos"),
    ("joint_vel", 12, "joint_vel", "joint_vel"),
    ("command", 3, "command", None),
    ("last_action", 12, "last_action", None),
)

REWARD_TERMS = (
    "track_lin_vel",
    "lin_vel_z",
    "ang_vel_xy",
    "track_ang_vel",
    "orientation",
    "torque",
    "joint_acc",
    "base_height",
    "air_time",
    "knee_collision",
    "action_rate",
    "foot_contact",
    "gait",
    "hip",
)


class ConfigError(ValueError):
    """Parse or validation failure; carries the offending key path."""

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


# ---------------------------------------------------------------------------
# robot description


@dataclass(frozen=True)
class LinkSpec:
    name: str
    mass: float
    com: np.ndarray        # (3,) link frame
    inertia: np.ndarray    # (3, 3) about the com


@dataclass(frozen=True)
class JointSpec:
    name: str
    parent: str
    child: str
    offset: np.ndarray     # attach point in the parent frame
    axis: np.ndarray       # unit rotation axis in the child frame
    pos_limits: tuple[float, float]
    vel_limit: float
    torque_limit: float


@dataclass(frozen=True)
class RobotModel:
    links: tuple[LinkSpec, ...]      # trunk first, then legs in joint order
    joints: tuple[JointSpec, ...]    # 12 actuated joints
    feet: tuple[tuple[str, np.ndarray], ...]          # (calf link, offset)
    knee_spheres: tuple[tuple[str, np.ndarray, float], ...]

    def validate(self):
        if len(self.joints) != NUM_JOINTS:
            raise ConfigError(
                f"expected {NUM_JOINTS} actuated joints, got {len(self.joints)}",
                "robot.joints",
            )
        for leg in LEGS:
            for kind in JOINT_KINDS:
                if f"{leg}_{kind}" not in [j.name for j in self.joints]:
                    raise ConfigError(f"missing joint {leg}_{kind}", "robot.joints")
        if len(self.feet) != 4:
            raise ConfigError(f"expected 4 feet, got {len(self.feet)}", "robot.feet")
        if len(self.knee_spheres) != 4:
            raise ConfigError(
                f"expected 4 knee spheres, got {len(self.knee_spheres)}",
                "robot.knee_spheres",
            )
        for link in self.links:
            if not link.mass > 0:
                raise ConfigError(f"mass must be > 0, got {link.mass}",
                                  f"robot.links.{link.name}.mass")
            I = link.inertia
            if not np.allclose(I, I.T, atol=1e-12):
                raise ConfigError("inertia tensor must be symmetric",
                                  f"robot.links.{link.name}.inertia")
            if np.min(np.linalg.eigvalsh(I)) <= 0:
                raise ConfigError("inertia tensor must be positive definite",
                                  f"robot.links.{link.name}.inertia")
        for j in self.joints:
            if j.torque_limit != TORQUE_LIMIT:
                raise ConfigError(
                    f"torque limit must be {TORQUE_LIMIT} N·m, got {j.torque_limit}",
                    f"robot.joints.{j.name}.torque_limit",
                )
            if abs(np.linalg.norm(j.axis) - 1.0) > 1e-9:
                raise ConfigError("joint axis must be a unit vector",
                                  f"robot.joints.{j.name}.axis")
        return self

    def joint_index(self, name: str) -> int:
        return JOINT_NAMES.index(name)


def _mirror_y(vec, right: bool):
    v = np.array(vec, dtype=float)
    if right:
        v[1] = -v[1]
    return v


def build_robot(raw: dict) -> RobotModel:
    """Expand the compact per-side robot description into the full model."""
    geo = raw["geometry"]
    base = raw["base"]
    links = [
        LinkSpec("trunk", float(base["mass"]), np.array(base["com"], dtype=float),
                 np.array(base["inertia"], dtype=float))
    ]
    joints = []
    feet = []
    knees = []
    limits = raw["joint_limits"]
    for leg in LEGS:
        front = leg[0] == "F"
        right = leg[1] == "R"
        sx = 1.0 if front else -1.0
        sy = -1.0 if right else 1.0
        hip_attach = np.array([sx * geo["hip_offset_x"], sy * geo["hip_offset_y"], 0.0])
        thigh_attach = np.array([0.0, sy * geo["hip_to_thigh_y"], 0.0])
        calf_attach = np.array([0.0, 0.0, -geo["thigh_length"]])
        for kind, attach, axis in (
            ("hip", hip_attach, np.array([1.0, 0.0, 0.0])),
            ("thigh", thigh_attach, np.array([0.0, 1.0, 0.0])),
            ("calf", calf_attach, np.array([0.0, 1.0, 0.0])),
        ):
            spec = raw["links"][kind]
            name = f"{leg}_{kind}"
            links.append(LinkSpec(name, float(spec["mass"]),
                                  _mirror_y(spec["com"], right),
                                  np.array(spec["inertia"], dtype=float)))
            parent = "trunk" if kind == "hip" else f"{leg}_{JOINT_KINDS[JOINT_KINDS.index(kind) - 1]}"
            joints.append(JointSpec(
                name=name, parent=parent, child=name, offset=attach, axis=axis,
                pos_limits=tuple(float(v) for v in limits[kind]),
                vel_limit=float(limits["velocity"]),
                torque_limit=float(limits["torque"]),
            ))
        feet.append((f"{leg}_calf", np.array([0.0, 0.0, -geo["calf_length"]])))
        knees.append((f"{leg}_calf", np.zeros(3), float(geo["knee_sphere_radius"])))
    return RobotModel(tuple(links), tuple(joints), tuple(feet), tuple(knees)).validate()


# ---------------------------------------------------------------------------
# scalar config blocks


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.002
    gravity: float = 9.81               # magnitude, applied along -z
    contact_stiffness: float = 20000.0  # N/m
    contact_damping: float = 80.0       # N·s/m
    friction_slip_velocity: float = 0.1  # m/s, viscous->saturated crossover
    joint_damping: float = 0.01
    joint_armature: float = 0.02        # reflected rotor inertia, kg·m²
    joint_limit_stiffness: float = 100.0
    joint_limit_damping: float = 2.0
    substeps: int = 1
    integrator: str = "semi_implicit_euler"

    def validate(self):
        if not self.dt > 0:
            raise ConfigError("dt must be > 0", "sim.dt")
        for key in ("contact_stiffness", "contact_damping"):
            if getattr(self, key) < 0:
                raise ConfigError("must be >= 0", f"sim.{key}")
        if self.substeps < 1:
            raise ConfigError("substeps must be >= 1", "sim.substeps")
        if self.integrator != "semi_implicit_euler":
            raise ConfigError(f"unknown integrator {self.integrator!r}", "sim.integrator")
        return self

    @property
    def control_frequency(self) -> float:
        return 1.0 / self.dt


@dataclass(frozen=True)
class NominalPose:
    """Standing joint configuration; reset mean and hip reward target."""

    hip_abduction: float = 0.1
    front_thigh: float = 0.8
    rear_thigh: float = 1.0
    calf: float = -1.5

    # these four values are load-bearing constants; reject edits
    def validate(self):
        ref = NominalPose()
        for key in ("hip_abduction", "front_thigh", "rear_thigh", "calf"):
            if getattr(self, key) != getattr(ref, key):
                raise ConfigError(
                    f"nominal pose {key} is fixed at {getattr(ref, key)}",
                    f"nominal_pose.{key}",
                )
        return self

    def vector(self) -> np.ndarray:
        q = np.zeros(NUM_JOINTS)
        for i, leg in enumerate(LEGS):
            right = leg[1] == "R"
            front = leg[0] == "F"
            q[3 * i + 0] = -self.hip_abduction if right else self.hip_abduction
            q[3 * i + 1] = self.front_thigh if front else self.rear_thigh
            q[3 * i + 2] = self.calf
        return q

    def hip_targets(self) -> np.ndarray:
        return self.vector()[[0, 3, 6, 9]]


@dataclass(frozen=True)
class EnvConfig:
    episode_seconds: float = 20.0
    action_scale: float = 9.0
    torque_limit: float = TORQUE_LIMIT
    noise_multiplier: float = 1.25
    latency_steps: int = 1
    push_interval_s: float = 15.0
    push_velocity: float = 1.0
    friction_range: tuple[float, float] = (0.5, 1.25)
    init_joint_noise: float = 0.05
    base_height_target: float = 0.30
    terminate_base_height: float = 0.15
    terminate_tilt: float = 1.0
    command_resample_s: float = 0.0      # 0 = sample once per episode
    command_ranges: dict = field(default_factory=lambda: {
        "vx": (-1.0, 1.0), "vy": (-1.0, 1.0), "yaw_rate": (-3.14, 3.14)})
    obs_scales: dict = field(default_factory=lambda: {
        "lin_vel": 2.0, "ang_vel": 0.25, "gravity": 1.0, "joint_pos": 1.0,
        "joint_vel": 0.05, "command": (2.0, 2.0, 0.25), "last_action": 1.0})
    obs_noise: dict = field(default_factory=lambda: {
        "lin_vel": 0.01, "ang_vel": 0.0001, "gravity": 0.00002,
        "joint_pos": 0.0005, "joint_vel": 0.01})
    reward_weights: dict = field(default_factory=lambda: {
        "track_lin_vel": 1.1, "lin_vel_z": -4.0, "ang_vel_xy": -0.05,
        "track_ang_vel": 1.0, "orientation": -2.4, "torque": -2e-05,
        "joint_acc": -0.0005, "base_height": -5.0, "air_time": 0.3,
        "knee_collision": -0.25, "action_rate": -0.01, "foot_contact": -0.05,
        "gait": -0.1, "hip": -0.25})
    tracking_sigma: float = 0.25          # denominator of the exp() terms
    air_time_offset: float = 0.5          # seconds subtracted per landed swing

    def validate(self):
        if not self.episode_seconds > 0:
            raise ConfigError("must be > 0", "env.episode_seconds")
        if not self.action_scale > 0:
            raise ConfigError("must be > 0", "env.action_scale")
        if self.latency_steps < 0:
            raise ConfigError("must be >= 0", "env.latency_steps")
        lo, hi = self.friction_range
        if not lo <= hi:
            raise ConfigError("empty range", "env.friction_range")
        for key, (a, b) in self.command_ranges.items():
            if not a <= b:
                raise ConfigError("empty range", f"env.command_ranges.{key}")
        if set(self.reward_weights) != set(REWARD_TERMS):
            raise ConfigError(
                f"reward weights must cover exactly {sorted(REWARD_TERMS)}",
                "env.reward",
            )
        return self

    def horizon_steps(self, dt: float) -> int:
        return int(round(self.episode_seconds / dt))

    def scale_vector(self) -> np.ndarray:
        out = []
        for _, length, scale_key, _ in OBS_LAYOUT:
            s = self.obs_scales[scale_key]
            out.extend([float(v) for v in s] if isinstance(s, (tuple, list)) else [float(s)] * length)
        return np.asarray(out)

    def noise_std_vector(self, multiplier: float = 1.0) -> np.ndarray:
        """Per-element Gaussian std (physical units); zero for command/action."""
        out = []
        for _, length, _, noise_key in OBS_LAYOUT:
            var = self.obs_noise[noise_key] if noise_key else 0.0
            out.extend([float(np.sqrt(var * multiplier))] * length)
        return np.asarray(out)


@dataclass(frozen=True)
class PolicyConfig:
    hidden: tuple[int, ...] = (512, 256, 128)
    action_std: float = 1.0
    train_std: bool = False
    dtype: str = "float32"

    def validate(self):
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype}", "policy.dtype")
        if not self.action_std > 0:
            raise ConfigError("must be > 0", "policy.action_std")
        return self


@dataclass(frozen=True)
class PPOConfig:
    n_envs: int = 256
    steps_per_env: int = 24
    minibatches: int = 6
    epochs: int = 5
    clip: float = 0.2
    entropy_coef: float = 0.001
    value_coef: float = 1.0
    gamma: float = 0.99
    gae_lambda: float = 0.95
    desired_kl: float = 0.008
    lr_init: float = 1.0e-3
    lr_min: float = 1.0e-6
    lr_max: float = 1.0e-2
    lr_factor: float = 1.5
    iterations: int = 300
    seed: int = 0
    checkpoint_every: int = 50

    def validate(self):
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must be in (0, 1]", "ppo.gamma")
        if not 0 <= self.gae_lambda <= 1:
            raise ConfigError("gae_lambda must be in [0, 1]", "ppo.gae_lambda")
        if not self.clip > 0:
            raise ConfigError("clip must be > 0", "ppo.clip")
        if self.batch_size % self.minibatches != 0:
            raise ConfigError(
                f"minibatch count {self.minibatches} must divide batch {self.batch_size}",
                "ppo.minibatches",
            )
        if not self.lr_min <= self.lr_init <= self.lr_max:
            raise ConfigError("lr_init outside [lr_min, lr_max]", "ppo.lr_init")
        return self

    @property
    def batch_size(self) -> int:
        return self.n_envs * self.steps_per_env

    @property
    def minibatch_size(self) -> int:
        return self.batch_size // self.minibatches


# ---------------------------------------------------------------------------
# TOML plumbing


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v)} to TOML")


def dumps_toml(data: dict, _prefix="") -> str:
    """Minimal TOML writer covering the schema used here (nested tables of
    scalars and arrays)."""
    out = io.StringIO()
    tables = []
    for key, value in data.items():
        if isinstance(value, dict):
            tables.append((key, value))
        else:
            out.write(f"{key} = {_toml_value(value)}\n")
    for key, value in tables:
        name = f"{_prefix}{key}"
        out.write(f"\n[{name}]\n")
        out.write(dumps_toml(value, _prefix=name + "."))
    return out.getvalue().lstrip("\n")


def _merge_with_defaults(user: dict, defaults: dict, path="") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError("unknown key", here)
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError("expected a table", here)
            out[key] = _merge_with_defaults(value, defaults[key], here)
        else:
            out[key] = value
    return out


def _default_experiment_dict() -> dict:
    env = EnvConfig()
    return {
        "robot": {"file": "builtin:a1_like"},
        "sim": {k: getattr(SimConfig(), k) for k in (
            "dt", "gravity", "contact_stiffness", "contact_damping",
            "friction_slip_velocity", "joint_damping", "joint_armature",
            "joint_limit_stiffness", "joint_limit_damping", "substeps",
            "integrator")},
        "terrain": {
            "min_height": -0.075, "max_height": 0.025, "step": 0.01,
            "downsample_scale": 0.2, "extent": [10.0, 10.0], "seed": 0,
        },
        "env": {
            **{k: getattr(env, k) for k in (
                "episode_seconds", "action_scale", "torque_limit",
                "noise_multiplier", "latency_steps", "push_interval_s",
                "push_velocity", "init_joint_noise", "base_height_target",
                "terminate_base_height", "terminate_tilt", "command_resample_s",
                "tracking_sigma", "air_time_offset")},
            "friction_range": list(env.friction_range),
            "command_ranges": {k: list(v) for k, v in env.command_ranges.items()},
            "obs_scales": {k: (list(v) if isinstance(v, tuple) else v)
                           for k, v in env.obs_scales.items()},
            "obs_noise": dict(env.obs_noise),
            "reward": dict(env.reward_weights),
        },
        "nominal_pose": {k: getattr(NominalPose(), k) for k in (
            "hip_abduction", "front_thigh", "rear_thigh", "calf")},
        "policy": {"hidden": [512, 256, 128], "action_std": 1.0,
                   "train_std": False, "dtype": "float32"},
        "ppo": {k: getattr(PPOConfig(), k) for k in (
            "n_envs", "steps_per_env", "minibatches", "epochs", "clip",
            "entropy_coef", "value_coef", "gamma", "gae_lambda", "desired_kl",
            "lr_init", "lr_min", "lr_max", "lr_factor", "iterations", "seed",
            "checkpoint_every")},
    }


def builtin_path(name: str) -> Path:
    p = Path(__file__).parent / "configs" / f"{name}.toml"
    if not p.exists():
        raise ConfigError(f"no builtin config named {name!r}")
    return p


def _resolve_robot(robot_section: dict, base_dir: Path) -> dict:
    """The [robot] table either points at a file or inlines the description."""
    if "file" in robot_section and len(robot_section) == 1:
        ref = robot_section["file"]
        path = builtin_path(ref[len("builtin:"):]) if ref.startswith("builtin:") \
            else (base_dir / ref)
        try:
            with open(path, "rb") as fh:
                return tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"robot file not found: {path}", "robot.file")
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"robot file parse error: {exc}", "robot.file")
    if "file" in robot_section:
        raise ConfigError("give either robot.file or an inline description, not both",
                          "robot")
    return robot_section


@dataclass(frozen=True)
class ExperimentConfig:
    robot: RobotModel
    sim: SimConfig
    env: EnvConfig
    ppo: PPOConfig
    policy: PolicyConfig
    terrain: TerrainConfig
    nominal_pose: NominalPose
    effective: dict = field(repr=False, default=None)

    def effective_toml(self) -> str:
        return dumps_toml(self.effective)

    def fingerprint(self) -> str:
        """Hash of the effective configuration, with run-length knobs
        (ppo.iterations, ppo.checkpoint_every) canonicalized out so resuming
        a run for more iterations still matches its checkpoints."""
        canon = copy.deepcopy(self.effective)
        canon["ppo"]["iterations"] = 0
        canon["ppo"]["checkpoint_every"] = 0
        return hashlib.sha256(dumps_toml(canon).encode()).hexdigest()

    def write_effective(self, path) -> None:
        Path(path).write_text(
            "# effective configuration (defaults resolved)\n" + self.effective_toml()
        )


def load_experiment(path) -> ExperimentConfig:
    """Parse, default-fill, and validate an experiment file.

    Accepts a filesystem path or a "builtin:<name>" reference.
    """
    ref = str(path)
    p = builtin_path(ref[len("builtin:"):]) if ref.startswith("builtin:") else Path(ref)
    try:
        with open(p, "rb") as fh:
            user = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error in {p}: {exc}")
    return build_experiment(user, base_dir=p.parent)


def build_experiment(user: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    robot_raw = _resolve_robot(user.get("robot", {"file": "builtin:a1_like"}),
                               base_dir)
    defaults = _default_experiment_dict()
    user = dict(user)
    user.pop("robot", None)
    merged = _merge_with_defaults(user, {k: v for k, v in defaults.items() if k != "robot"})
    merged["robot"] = robot_raw  # inline the resolved robot: echo is self-contained

    robot = build_robot(robot_raw)
    sim = SimConfig(**merged["sim"]).validate()
    env_tbl = merged["env"]
    env = EnvConfig(
        **{k: env_tbl[k] for k in (
            "episode_seconds", "action_scale", "torque_limit", "noise_multiplier",
            "latency_steps", "push_interval_s", "push_velocity", "init_joint_noise",
            "base_height_target", "terminate_base_height", "terminate_tilt",
            "command_resample_s", "tracking_sigma", "air_time_offset")},
        friction_range=tuple(env_tbl["friction_range"]),
        command_ranges={k: tuple(v) for k, v in env_tbl["command_ranges"].items()},
        obs_scales={k: (tuple(v) if isinstance(v, list) else v)
                    for k, v in env_tbl["obs_scales"].items()},
        obs_noise=dict(env_tbl["obs_noise"]),
        reward_weights=dict(env_tbl["reward"]),
    ).validate()
    policy = PolicyConfig(
        hidden=tuple(merged["policy"]["hidden"]),
        action_std=merged["policy"]["action_std"],
        train_std=merged["policy"]["train_std"],
        dtype=merged["policy"]["dtype"],
    ).validate()
    ppo = PPOConfig(**merged["ppo"]).validate()
    terrain = TerrainConfig(
        min_height=merged["terrain"]["min_height"],
        max_height=merged["terrain"]["max_height"],
        step=merged["terrain"]["step"],
        downsample_scale=merged["terrain"]["downsample_scale"],
        extent=tuple(merged["terrain"]["extent"]),
        seed=merged["terrain"]["seed"],
    )
    pose = NominalPose(**merged["nominal_pose"]).validate()
    return ExperimentConfig(robot=robot, sim=sim, env=env, ppo=ppo, policy=policy,
                            terrain=terrain, nominal_pose=pose, effective=merged)
