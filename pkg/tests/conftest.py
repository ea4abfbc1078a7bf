import importlib.resources

import numpy as np
import pytest

from dualvic._native import available_backends
from dualvic.chain import ChainModel, LinkSpec, load_chains
from dualvic.geometry import Pose, quat_from_rotvec


@pytest.fixture(params=available_backends())
def backend(request):
    return request.param


def rod_inertia(mass, length, radius=0.02):
    """Slender-rod inertia about its COM, long axis = x."""
    ixx = 0.5 * mass * radius**2
    iyy = izz = mass * (3.0 * radius**2 + length**2) / 12.0
    return np.diag([ixx, iyy, izz])


def planar_link(mass, length, axis=(0.0, 0.0, 1.0), offset=None, joint_type="revolute"):
    origin = Pose.identity() if offset is None else Pose(np.asarray(offset, float), [1, 0, 0, 0])
    return LinkSpec(
        mass=mass,
        com=np.array([length / 2.0, 0.0, 0.0]),
        inertia=rod_inertia(mass, length),
        axis=np.asarray(axis, float),
        joint_type=joint_type,
        origin=origin,
    )


def make_chain(links, gravity=(0.0, 0.0, -9.81), ee_offset=None, limits_scale=1.0):
    n = len(links)
    return ChainModel(
        links=tuple(links),
        q_min=-3.1 * np.ones(n) * limits_scale,
        q_max=3.1 * np.ones(n) * limits_scale,
        dq_min=-10.0 * np.ones(n),
        dq_max=10.0 * np.ones(n),
        tau_min=-200.0 * np.ones(n),
        tau_max=200.0 * np.ones(n),
        gravity=np.asarray(gravity, float),
        ee_offset=ee_offset if ee_offset is not None else Pose.identity(),
    )


def planar_two_link(l1=1.0, l2=1.0, m1=1.0, m2=1.0, gravity=(0.0, 0.0, -9.81)):
    """2R planar chain in the x-y plane; EE at the tip of link 2."""
    links = [
        planar_link(m1, l1),
        planar_link(m2, l2, offset=(l1, 0.0, 0.0)),
    ]
    return make_chain(links, gravity=gravity, ee_offset=Pose([l2, 0.0, 0.0], [1, 0, 0, 0]))


def random_chain(rng, n=7, revolute_only=False):
    """Random serial chain with well-scaled masses/lengths and random axes."""
    links = []
    for i in range(n):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        jt = "revolute" if (revolute_only or rng.random() < 0.8) else "prismatic"
        rot = quat_from_rotvec(rng.normal(scale=0.6, size=3))
        offset = rng.normal(scale=0.25, size=3)
        if i == 0:
            offset = rng.normal(scale=0.1, size=3)
        mass = rng.uniform(0.5, 3.0)
        length = rng.uniform(0.2, 0.5)
        inertia = rod_inertia(mass, length) + np.diag(rng.uniform(0.001, 0.01, size=3))
        links.append(
            LinkSpec(
                mass=mass,
                com=rng.normal(scale=0.15, size=3),
                inertia=inertia,
                axis=axis,
                joint_type=jt,
                origin=Pose(offset, rot),
            )
        )
    ee = Pose(rng.normal(scale=0.1, size=3), quat_from_rotvec(rng.normal(scale=0.3, size=3)))
    return make_chain(links, ee_offset=ee)


def desk_chains():
    ref = importlib.resources.files("dualvic") / "configs" / "arms_desk.yaml"
    with importlib.resources.as_file(ref) as path:
        return load_chains(path)


def desk_scenario(object_name="crate", mass=1.0, durations=(0.3, 0.6, 0.6),
                  controller="qp", dt_sim=5e-4, **overrides):
    """Short-episode desk scenario for fast tests."""
    from dualvic.control import ControllerGains
    from dualvic.envs import Scenario
    from dualvic.reward import RewardConfig
    from dualvic.world import SimConfig

    chains = desk_chains()
    kw = dict(
        chain_left=chains["left"],
        chain_right=chains["right"],
        object_name=object_name,
        mass=mass,
        start_pose=Pose([0.0, 0.0, 0.35], [1, 0, 0, 0]),
        goal_box=([-0.2, 0.0, 0.3], [0.2, 0.0, 0.5]),
        waypoint_z_range=(0.45, 0.55),
        stage_durations=durations,
        sim=SimConfig(dt_sim=dt_sim, dt_ctrl=1e-2),
        gains=ControllerGains(),
        reward=RewardConfig(),
        controller_kind=controller,
    )
    kw.update(overrides)
    return Scenario(**kw)
