import copy

import numpy as np
import pytest

from quadtorque.config import (ConfigError, NominalPose, PPOConfig,
                               build_experiment, build_robot, load_experiment)


def test_shipped_default_dt():
    exp = load_experiment("builtin:quadruped_rough")
    assert exp.sim.dt == 0.002
    assert exp.sim.control_frequency == 500.0


def test_omitted_terrain_block_defaults():
    exp = build_experiment({})
    t = exp.terrain
    assert (t.min_height, t.max_height, t.step, t.downsample_scale) == \
        (-0.075, 0.025, 0.01, 0.2)


def test_eleven_joints_rejected():
    exp = load_experiment("builtin:quadruped_rough")
    bad = [j for j in exp.robot.joints if j.name != "RR_calf"]
    with pytest.raises(ConfigError) as err:
        type(exp.robot)(exp.robot.links, tuple(bad), exp.robot.feet,
                        exp.robot.knee_spheres).validate()
    assert "11" in str(err.value)


def test_unknown_key_rejected_with_path():
    with pytest.raises(ConfigError) as err:
        build_experiment({"env": {"no_such_knob": 1}})
    assert "env.no_such_knob" in str(err.value)


def test_round_trip_identical():
    import tomli
    exp = load_experiment("builtin:quadruped_flat")
    text = exp.effective_toml()
    exp2 = build_experiment(tomli.loads(text))
    assert exp2.effective == exp.effective
    assert exp2.fingerprint() == exp.fingerprint()
    assert exp2.effective_toml() == text


def test_paper_scale_batch_structure():
    exp = load_experiment("builtin:quadruped_paper")
    assert exp.ppo.n_envs == 4096
    assert exp.ppo.batch_size == 98304
    assert exp.ppo.minibatch_size == 16384


def test_nominal_pose_vector():
    q = NominalPose().vector()
    # (FL, FR, RL, RR) x (hip, thigh, calf)
    assert q[0] == 0.1 and q[3] == -0.1 and q[6] == 0.1 and q[9] == -0.1
    assert q[1] == 0.8 and q[4] == 0.8
    assert q[7] == 1.0 and q[10] == 1.0
    assert all(q[i] == -1.5 for i in (2, 5, 8, 11))


def test_nominal_pose_is_pinned():
    with pytest.raises(ConfigError):
        NominalPose(front_thigh=0.9).validate()


def test_torque_limit_must_be_30():
    exp = load_experiment("builtin:quadruped_rough")
    raw = copy.deepcopy(exp.effective["robot"])
    raw["joint_limits"]["torque"] = 25.0
    with pytest.raises(ConfigError) as err:
        build_robot(raw)
    assert "torque" in str(err.value)


def test_inertia_must_be_spd():
    exp = load_experiment("builtin:quadruped_rough")
    raw = copy.deepcopy(exp.effective["robot"])
    raw["links"]["calf"]["inertia"] = [[-1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]]
    with pytest.raises(ConfigError):
        build_robot(raw)


def test_minibatch_divisibility():
    with pytest.raises(ConfigError):
        PPOConfig(n_envs=10, steps_per_env=10, minibatches=7).validate()


def test_scale_vector_layout():
    exp = build_experiment({})
    s = exp.env.scale_vector()
    assert s.shape == (48,)
    assert np.all(s[0:3] == 2.0)
    assert np.all(s[3:6] == 0.25)
    assert np.all(s[6:9] == 1.0)
    assert np.all(s[9:21] == 1.0)
    assert np.all(s[21:33] == 0.05)
    assert list(s[33:36]) == [2.0, 2.0, 0.25]
    assert np.all(s[36:48] == 1.0)


def test_noise_vector_is_variance_based():
    exp = build_experiment({})
    std = exp.env.noise_std_vector(1.25)
    assert np.allclose(std[0:3], np.sqrt(0.01 * 1.25))
    assert np.allclose(std[3:6], np.sqrt(0.0001 * 1.25))
    assert np.allclose(std[6:9], np.sqrt(0.00002 * 1.25))
    assert np.allclose(std[9:21], np.sqrt(0.0005 * 1.25))
    assert np.allclose(std[21:33], np.sqrt(0.01 * 1.25))
    assert np.all(std[33:48] == 0.0)


def test_effective_echo_written(tmp_path):
    exp = load_experiment("builtin:quadruped_flat")
    path = tmp_path / "effective.toml"
    exp.write_effective(path)
    exp2 = load_experiment(path)
    assert exp2.fingerprint() == exp.fingerprint()


def test_missing_file_is_config_error():
    with pytest.raises(ConfigError):
        load_experiment("/nonexistent/path.toml")
