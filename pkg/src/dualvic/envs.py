"""Pick-and-place episode environment shared by training and the benchmark.

An episode: both arms start IK'd onto the object's grasp frames, couplings
attach at t=0, the three-stage object reference plays out, and a controller
(QP or classical impedance) turns per-tick stiffness commands into torques.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import dynamics
from .chain import ChainModel, JointState
from .control import ClassicalController, ControlFault, Controller, ControllerGains
from .geometry import Pose, Twist
from .impedance import Stiffness
from .policy import Observation, build_observation
from .reward import EMATracker, RewardConfig, compute_reward, ema_update
from .trajectory import ObjectTrajectory, TrajectorySpec, object_to_ee
from .world import (
    GraspCoupling,
    SimConfig,
    SimulationFault,
    WorldState,
    attach_grasps,
    ee_wrench_estimate,
    make_object,
    step as world_step,
)


def ik_solve(chain: ChainModel, target: Pose, q_seed, iters=300, tol=1e-10):
    """Damped least-squares IK on the 6-D pose error."""
    q = np.array(q_seed, dtype=float)
    for _ in range(iters):
        pose = dynamics.fk_pose(chain, q)
        err = dynamics.pose_error(target, pose)
        if np.linalg.norm(err) < tol:
            break
        J = dynamics.jacobian(chain, q)
        q = q + J.T @ np.linalg.solve(J @ J.T + 1e-8 * np.eye(6), err)
    return q


@dataclasses.dataclass(frozen=True)
class Scenario:
    """Static episode description (everything but the goal and the seed)."""

    chain_left: ChainModel
    chain_right: ChainModel
    object_name: str
    mass: float
    start_pose: Pose
    goal_box: tuple  # (lo (3,), hi (3,)) for goal sampling
    waypoint_z_range: tuple
    stage_durations: tuple
    sim: SimConfig
    gains: ControllerGains
    reward: RewardConfig
    coupling_linear: float = 1e4
    coupling_angular: float = 100.0
    coupling_breakaway: float = 0.05
    controller_kind: str = "qp"  # qp | classical
    ik_seed_left: tuple = (-1.0, 1.6, -0.6)
    ik_seed_right: tuple = (-1.0, 1.6, -0.6)
    catalog_path: str = None
    backend: str = None

    def sample_goal(self, rng) -> Pose:
        lo, hi = (np.asarray(v, dtype=float) for v in self.goal_box)
        pos = np.where(hi > lo, rng.uniform(lo, hi), lo)
        return Pose(pos, self.start_pose.orientation)


@dataclasses.dataclass
class TickRecord:
    time: float
    stage: int
    ref_obj: np.ndarray  # 7
    actual_obj: np.ndarray  # 7
    stiffness: np.ndarray  # 6 (or 12 per-arm)
    tau_left: np.ndarray
    tau_right: np.ndarray
    qp_status: str
    engaged: np.ndarray
    reward: float
    solve_iters: int = 0


class PickPlaceEnv:
    """Deterministic given (scenario, seed, goal); one controller per episode."""

    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.obj = make_object(scenario.object_name, scenario.mass,
                               scenario.catalog_path)
        self.coupling = GraspCoupling.critical(
            self.obj, scenario.coupling_linear, scenario.coupling_angular,
            scenario.coupling_breakaway,
        )
        if scenario.controller_kind == "qp":
            self.controller = Controller(
                scenario.chain_left, scenario.chain_right, scenario.gains,
                grasp_width=self.obj.grasp_width, dt=scenario.sim.dt_ctrl,
                backend=scenario.backend,
            )
        elif scenario.controller_kind == "classical":
            self.controller = ClassicalController(
                scenario.chain_left, scenario.chain_right, scenario.gains,
                dt=scenario.sim.dt_ctrl, backend=scenario.backend,
            )
        else:
            raise ValueError(f"unknown controller kind {scenario.controller_kind!r}")
        self.world = None
        self.traj = None

    @property
    def n_joints(self) -> int:
        return self.sc.chain_left.n

    @property
    def num_ticks(self) -> int:
        return self.traj.num_ticks

    def reset(self, seed: int, goal: Pose = None, audit: bool = False) -> Observation:
        sc = self.sc
        rng = np.random.default_rng(seed)
        goal = goal if goal is not None else sc.sample_goal(rng)
        spec = TrajectorySpec(
            start=sc.start_pose, goal=goal,
            waypoint_z_range=sc.waypoint_z_range,
            stage_durations=sc.stage_durations,
            dt_ctrl=sc.sim.dt_ctrl, seed=seed,
        )
        self.traj = ObjectTrajectory(spec, rng=rng)
        self.goal = goal
        self.audit = audit

        q0 = {}
        ee0 = {}
        for side, chain, ik_seed, grasp in (
            ("left", sc.chain_left, sc.ik_seed_left, self.obj.grasps[0]),
            ("right", sc.chain_right, sc.ik_seed_right, self.obj.grasps[1]),
        ):
            target = sc.start_pose.compose(grasp)
            q0[side] = ik_solve(chain, target, ik_seed)
            ee0[side] = dynamics.fk_pose(chain, q0[side], backend=sc.backend)
        base = WorldState(
            left=JointState(q0["left"], np.zeros(sc.chain_left.n)),
            right=JointState(q0["right"], np.zeros(sc.chain_right.n)),
            object_pose=sc.start_pose,
            object_twist=Twist.zero(),
        )
        self.world = attach_grasps(base, self.obj, ee0["left"], ee0["right"])
        # constant object->EE transforms for reference transport
        inv = sc.start_pose.inverse()
        self.grasp_offsets = (inv.compose(ee0["left"]), inv.compose(ee0["right"]))
        self.q_ref = (q0["left"].copy(), q0["right"].copy())
        self.prev_ee = (ee0["left"], ee0["right"])
        self.k_prev = np.zeros(6 if not self._per_arm() else 12)
        self.tracker = EMATracker()
        self.tick = 0
        self.records = []
        self.controller.reset()
        return self._observe()

    def _per_arm(self) -> bool:
        return False  # flipped by training config through stiffness size

    def _ee_poses(self):
        l = dynamics.fk_pose(self.sc.chain_left, self.world.left.q, backend=self.sc.backend)
        r = dynamics.fk_pose(self.sc.chain_right, self.world.right.q, backend=self.sc.backend)
        return l, r

    def _observe(self) -> Observation:
        ee_l, ee_r = self._ee_poses()
        obs = build_observation(
            ee_l, ee_r, self.prev_ee[0], self.prev_ee[1],
            self.world.object_pose,
            self.world.left.q, self.world.right.q,
            ee_wrench_estimate(self.world, "left").as_vector(),
            ee_wrench_estimate(self.world, "right").as_vector(),
            self.k_prev[:6],
            self.tick, self.sc.mass,
        )
        self._obs_ee = (ee_l, ee_r)
        return obs

    def step(self, stiffness: np.ndarray):
        """Apply one stiffness command; returns (obs, reward, done, info)."""
        if self.world is None:
            raise RuntimeError("call reset() first")
        sc = self.sc
        k = np.asarray(stiffness, dtype=float).reshape(-1)
        if k.shape[0] == 6:
            k_l = k_r = Stiffness(k)
        elif k.shape[0] == 12:
            k_l, k_r = Stiffness(k[:6]), Stiffness(k[6:])
        else:
            raise ValueError("stiffness must have 6 (shared) or 12 (per-arm) entries")

        ref_obj = self.traj.sample_tick(self.tick)
        ref_l = object_to_ee(ref_obj, self.grasp_offsets[0])
        ref_r = object_to_ee(ref_obj, self.grasp_offsets[1])

        fault = False
        try:
            out = self.controller.control_step(
                self.world, ref_l, ref_r, k_l, k_r,
                self.q_ref[0], self.q_ref[1], audit=self.audit,
            )
            prev_ee = self._obs_ee
            self.world, _ = world_step(
                self.world, sc.chain_left, sc.chain_right, self.obj, self.coupling,
                out.tau_left, out.tau_right, sc.sim, backend=sc.backend,
            )
        except (ControlFault, SimulationFault):
            fault = True
            out = None
            prev_ee = self._obs_ee

        self.tick += 1
        next_ref = self.traj.sample_tick(self.tick)
        done = fault or self.tick >= self.traj.num_ticks

        if fault:
            reward = -sc.reward.r_infeasible * 10.0  # terminal penalty
            info = {"fault": True, "record": None}
            self.prev_ee = prev_ee
            return None, reward, True, info

        ee_l, ee_r = self._ee_poses()
        nref_l = object_to_ee(next_ref, self.grasp_offsets[0])
        nref_r = object_to_ee(next_ref, self.grasp_offsets[1])
        err_l = dynamics.pose_error(nref_l.pose, ee_l)
        err_r = dynamics.pose_error(nref_r.pose, ee_r)
        obj_err = dynamics.pose_error(next_ref.pose, self.world.object_pose)
        goal_dist = float(np.linalg.norm(self.world.object_pose.position - self.goal.position))
        in_final = self.traj.stage_of_tick(self.tick) == 2
        infeasible = out.status != "optimal"
        reward = compute_reward(
            err_l, err_r, obj_err, goal_dist, in_final, infeasible,
            k, self.tracker, sc.reward,
        )
        self.tracker = ema_update(self.tracker, k, sc.reward.ema_alpha)

        rec = TickRecord(
            time=self.world.time,
            stage=self.traj.stage_of_tick(self.tick - 1),
            ref_obj=next_ref.pose.as_vector(),
            actual_obj=self.world.object_pose.as_vector(),
            stiffness=k.copy(),
            tau_left=out.tau_left.copy(),
            tau_right=out.tau_right.copy(),
            qp_status=out.status,
            engaged=self.world.engaged.copy(),
            reward=reward,
            solve_iters=out.solve.iterations if out.solve is not None else 0,
        )
        self.records.append(rec)

        self.prev_ee = prev_ee
        obs = self._observe() if not done else None
        info = {
            "fault": False,
            "record": rec,
            "qp_infeasible": infeasible,
            "audit": out.audit if self.audit else None,
            "goal_reached": goal_dist <= sc.reward.goal_radius,
        }
        return obs, reward, done, info
