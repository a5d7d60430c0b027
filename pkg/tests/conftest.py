import numpy as np
import pytest

from quadtorque import spatial as sp
from quadtorque.config import SimConfig, load_experiment
from quadtorque.physics import ArticulatedModel


@pytest.fixture(scope="session")
def exp_flat():
    return load_experiment("builtin:quadruped_flat")


@pytest.fixture(scope="session")
def exp_rough():
    return load_experiment("builtin:quadruped_rough")


@pytest.fixture(scope="session")
def quad_model(exp_flat):
    return ArticulatedModel.from_robot(exp_flat.robot)


@pytest.fixture
def frictionless_cfg():
    return SimConfig(dt=0.002, gravity=0.0, joint_damping=0.0,
                     joint_armature=0.0, joint_limit_stiffness=0.0)


def make_pendulum_model(mass=1.2, length=0.35, inertia_com=1e-6):
    """Fixed-base single revolute joint about +y with a point mass."""
    return ArticulatedModel(
        floating=False,
        parents=np.array([-1, 0]),
        e_tree=np.tile(np.eye(3), (2, 1, 1)),
        r_tree=np.zeros((2, 3)),
        axes=np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        inertia=np.stack([
            np.zeros((6, 6)),
            sp.spatial_inertia(mass, [0, 0, -length], np.eye(3) * inertia_com),
        ]),
        masses=np.array([0.0, mass]),
        coms=np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -length]]),
    )


def make_free_body(com, inertia=None, mass=3.0):
    inertia = np.diag([0.02, 0.05, 0.04]) if inertia is None else inertia
    return ArticulatedModel(
        floating=True,
        parents=np.array([-1]),
        e_tree=np.tile(np.eye(3), (1, 1, 1)),
        r_tree=np.zeros((1, 3)),
        axes=np.zeros((1, 3)),
        inertia=sp.spatial_inertia(mass, com, inertia)[None],
        masses=np.array([mass]),
        coms=np.array([com], dtype=float),
    )
