"""Two arms and one rigid object coupled through compliant grasp attachments.

The grippers are abstracted by a stiff spring-damper weld between each
end-effector and its grasp frame on the object; exceeding the breakaway
displacement disengages the coupling permanently (the object "slips").
Integration is semi-implicit Euler at dt_sim with torques zero-order-held
over a control interval dt_ctrl.
"""

from __future__ import annotations

import dataclasses
import importlib.resources

import numpy as np
import yaml

from ._native import get_backend
from .chain import ChainModel, JointState
from .geometry import Pose, Twist, Wrench, mat_to_quat, quat_mul, quat_to_mat


class SimulationFault(RuntimeError):
    """Raised when integration produces non-finite state."""


@dataclasses.dataclass(frozen=True)
class ObjectSpec:
    name: str
    mass: float
    inertia: np.ndarray  # 3x3 about COM, body frame
    grasps: tuple  # exactly two Poses in the object frame

    def __post_init__(self):
        inertia = np.array(self.inertia, dtype=float).reshape(3, 3)
        if self.mass <= 0.0:
            raise ValueError("object mass must be > 0")
        if not np.allclose(inertia, inertia.T, atol=1e-12):
            raise ValueError("object inertia must be symmetric")
        if np.min(np.linalg.eigvalsh(inertia)) <= 0.0:
            raise ValueError("object inertia must be positive-definite")
        grasps = tuple(self.grasps)
        if len(grasps) != 2:
            raise ValueError("exactly two grasp frames are required")
        object.__setattr__(self, "inertia", inertia)
        object.__setattr__(self, "grasps", grasps)

    @property
    def grasp_width(self) -> float:
        return float(np.linalg.norm(self.grasps[0].position - self.grasps[1].position))


@dataclasses.dataclass(frozen=True)
class GraspCoupling:
    linear_stiffness: float = 1e4  # N/m
    angular_stiffness: float = 100.0  # N*m/rad
    linear_damping: float = 100.0  # N*s/m
    angular_damping: float = 2.0  # N*m*s/rad
    breakaway: float = 0.05  # m, linear slip threshold

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) <= 0.0:
                raise ValueError(f"{f.name} must be > 0")

    @staticmethod
    def critical(obj: ObjectSpec, linear_stiffness=1e4, angular_stiffness=100.0,
                 breakaway=0.05) -> "GraspCoupling":
        """Per-axis critical damping against the object's mass/mean inertia."""
        d_lin = 2.0 * np.sqrt(linear_stiffness * obj.mass)
        d_ang = 2.0 * np.sqrt(angular_stiffness * float(np.trace(obj.inertia)) / 3.0)
        return GraspCoupling(linear_stiffness, angular_stiffness, d_lin, d_ang, breakaway)

    def as_row(self) -> np.ndarray:
        return np.array(
            [
                self.linear_stiffness,
                self.angular_stiffness,
                self.linear_damping,
                self.angular_damping,
                self.breakaway,
            ]
        )


@dataclasses.dataclass(frozen=True)
class SimConfig:
    dt_sim: float = 1e-4
    dt_ctrl: float = 1e-2
    gravity: np.ndarray = dataclasses.field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    integrator: str = "semi_implicit_euler"

    def __post_init__(self):
        if self.dt_sim <= 0.0 or self.dt_ctrl <= 0.0:
            raise ValueError("time steps must be > 0")
        ratio = self.dt_ctrl / self.dt_sim
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("dt_ctrl must be an integer multiple of dt_sim")
        if self.integrator != "semi_implicit_euler":
            raise ValueError("only semi_implicit_euler is supported")
        object.__setattr__(self, "gravity", np.array(self.gravity, dtype=float).reshape(3))

    @property
    def substeps(self) -> int:
        return int(round(self.dt_ctrl / self.dt_sim))


@dataclasses.dataclass
class WorldState:
    left: JointState
    right: JointState
    object_pose: Pose = None
    object_twist: Twist = None
    time: float = 0.0
    engaged: np.ndarray = dataclasses.field(
        default_factory=lambda: np.zeros(2, dtype=np.uint8)
    )
    # rest offsets of the grasp couplings (EE frame -> hand anchor), set at attach
    rest_offsets: tuple = (None, None)
    # last grasp reaction wrench felt by each EE (world frame)
    reaction: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros((2, 6)))

    def copy(self) -> "WorldState":
        return WorldState(
            left=self.left.copy(),
            right=self.right.copy(),
            object_pose=self.object_pose,
            object_twist=self.object_twist,
            time=self.time,
            engaged=self.engaged.copy(),
            rest_offsets=self.rest_offsets,
            reaction=self.reaction.copy(),
        )


def attach_grasps(
    world: WorldState,
    obj: ObjectSpec,
    left_ee: Pose,
    right_ee: Pose,
    capture_radius: float = 5e-3,
) -> WorldState:
    """Engage both couplings, recording rest offsets so the initial wrench is zero."""
    if world.object_pose is None:
        raise ValueError("world has no object pose to attach to")
    out = world.copy()
    offsets = []
    for idx, ee in enumerate((left_ee, right_ee)):
        grasp_world = world.object_pose.compose(obj.grasps[idx])
        gap = np.linalg.norm(ee.position - grasp_world.position)
        if gap > capture_radius:
            raise ValueError(
                f"end effector {idx} is {gap:.4f} m from its grasp frame "
                f"(capture radius {capture_radius} m)"
            )
        offsets.append(ee.inverse().compose(grasp_world))
    out.rest_offsets = tuple(offsets)
    out.engaged = np.ones(2, dtype=np.uint8)
    out.reaction = np.zeros((2, 6))
    return out


def grasp_wrench(
    ee_pose: Pose,
    ee_twist: Twist,
    grasp_pose: Pose,
    grasp_twist: Twist,
    coupling: GraspCoupling,
    rest_offset: Pose = None,
) -> Wrench:
    """Spring-damper wrench on the object at its grasp frame.

    Zero (and the coupling is considered broken) once the linear pose error
    exceeds the breakaway displacement. The reaction on the arm is the
    negative of this wrench.
    """
    off = rest_offset if rest_offset is not None else Pose.identity()
    hand = ee_pose.compose(off)
    r = hand.position - ee_pose.position
    v_h = ee_twist.linear + np.cross(ee_twist.angular, r)
    e_lin = hand.position - grasp_pose.position
    if np.linalg.norm(e_lin) > coupling.breakaway:
        return Wrench.zero()
    R_rel = hand.rotation @ grasp_pose.rotation.T
    from .geometry import quat_to_rotvec

    e_ang = quat_to_rotvec(mat_to_quat(R_rel))
    force = coupling.linear_stiffness * e_lin + coupling.linear_damping * (
        v_h - grasp_twist.linear
    )
    torque = coupling.angular_stiffness * e_ang + coupling.angular_damping * (
        ee_twist.angular - grasp_twist.angular
    )
    return Wrench(force, torque)


def step(
    world: WorldState,
    chain_left: ChainModel,
    chain_right: ChainModel,
    obj: ObjectSpec,
    coupling,
    tau_left: np.ndarray,
    tau_right: np.ndarray,
    cfg: SimConfig,
    backend=None,
):
    """Advance one control interval; returns (new_state, info).

    Torques are clamped to the chain limits then zero-order-held across
    dt_ctrl / dt_sim substeps. info carries the net linear impulse the
    couplings applied to the object (momentum bookkeeping).
    """
    be = get_backend(backend)
    tau_left = chain_left.clamp_torque(np.nan_to_num(tau_left, nan=0.0))
    tau_right = chain_right.clamp_torque(np.nan_to_num(tau_right, nan=0.0))
    if not (np.all(np.isfinite(tau_left)) and np.all(np.isfinite(tau_right))):
        raise SimulationFault("non-finite torque command")

    has_object = obj is not None and world.object_pose is not None
    if has_object:
        obj_p = world.object_pose.position
        obj_q = world.object_pose.orientation
        obj_v = world.object_twist.linear
        obj_w = world.object_twist.angular
        grasp_p = np.array([g.position for g in obj.grasps])
        grasp_q = np.array([g.orientation for g in obj.grasps])
        mass, inertia = obj.mass, obj.inertia
    else:
        obj_p = np.zeros(3)
        obj_q = np.array([1.0, 0.0, 0.0, 0.0])
        obj_v = np.zeros(3)
        obj_w = np.zeros(3)
        grasp_p = np.zeros((2, 3))
        grasp_q = np.array([[1.0, 0, 0, 0], [1.0, 0, 0, 0]])
        mass, inertia = 1.0, np.eye(3)

    offs = world.rest_offsets
    off_p = np.array([o.position if o is not None else np.zeros(3) for o in offs])
    off_q = np.array(
        [o.orientation if o is not None else np.array([1.0, 0, 0, 0]) for o in offs]
    )
    if isinstance(coupling, GraspCoupling):
        coupling_rows = np.tile(coupling.as_row(), (2, 1))
    else:
        coupling_rows = np.array([c.as_row() for c in coupling])

    (qL, dqL, qR, dqR, op, oq, ov, ow, engaged, wl, wr, impulse) = be.world_substeps(
        chain_left.data,
        chain_right.data,
        world.left.q,
        world.left.dq,
        world.right.q,
        world.right.dq,
        tau_left,
        tau_right,
        has_object,
        mass,
        inertia,
        obj_p,
        obj_q,
        obj_v,
        obj_w,
        grasp_p,
        grasp_q,
        off_p,
        off_q,
        world.engaged,
        coupling_rows,
        cfg.gravity,
        cfg.dt_sim,
        cfg.substeps,
    )
    arrays = [qL, dqL, qR, dqR, op, oq, ov, ow]
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise SimulationFault(f"simulation blew up at t={world.time:.4f}s")

    new = WorldState(
        left=JointState(qL, dqL),
        right=JointState(qR, dqR),
        object_pose=Pose(op, oq) if has_object else None,
        object_twist=Twist(ov, ow) if has_object else None,
        time=world.time + cfg.dt_ctrl,
        engaged=np.asarray(engaged, dtype=np.uint8),
        rest_offsets=world.rest_offsets,
        reaction=np.stack([np.asarray(wl), np.asarray(wr)]),
    )
    info = {"impulse": np.asarray(impulse)}
    return new, info


def ee_wrench_estimate(world: WorldState, arm: str) -> Wrench:
    """Grasp reaction wrench currently felt by that arm's EE (zero if free)."""
    idx = {"left": 0, "right": 1}[arm]
    if not world.engaged[idx]:
        return Wrench.zero()
    return Wrench.from_vector(world.reaction[idx])


# ---------------------------------------------------------------------------
# object catalog
# ---------------------------------------------------------------------------

def _box_inertia(mass, dims):
    x, y, z = dims
    return np.diag(
        [
            mass * (y * y + z * z) / 12.0,
            mass * (x * x + z * z) / 12.0,
            mass * (x * x + y * y) / 12.0,
        ]
    )


def _cylinder_inertia(mass, radius, height):
    ixx = mass * (3.0 * radius**2 + height**2) / 12.0
    return np.diag([ixx, ixx, 0.5 * mass * radius**2])


def object_from_entry(name: str, entry: dict, mass: float = None) -> ObjectSpec:
    m = float(mass if mass is not None else entry["default_mass"])
    shape = entry.get("shape", "box")
    if shape == "box":
        inertia = _box_inertia(m, [float(v) for v in entry["dims"]])
    elif shape == "cylinder":
        inertia = _cylinder_inertia(m, float(entry["radius"]), float(entry["height"]))
    else:
        raise ValueError(f"unknown shape {shape!r} for object {name}")
    grasps = tuple(
        Pose(np.array(g["position"], dtype=float), np.array(g["orientation"], dtype=float))
        for g in entry["grasps"]
    )
    return ObjectSpec(name=name, mass=m, inertia=inertia, grasps=grasps)


def load_catalog(path=None) -> dict:
    """Name -> raw entry; instantiate per-mass specs with object_from_entry."""
    if path is None:
        ref = importlib.resources.files("dualvic") / "configs" / "objects.yaml"
        raw = yaml.safe_load(ref.read_text())
    else:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    return raw["objects"]


def make_object(name: str, mass: float = None, catalog_path=None) -> ObjectSpec:
    catalog = load_catalog(catalog_path)
    if name not in catalog:
        raise KeyError(f"object {name!r} not in catalog (have {sorted(catalog)})")
    return object_from_entry(name, catalog[name], mass)


def dump_world_csv(rows: list, path) -> None:
    """Write a WorldState trajectory as CSV (time, q_L, q_R, object pose, engaged)."""
    if not rows:
        raise ValueError("no rows to write")
    nL = len(rows[0].left.q)
    nR = len(rows[0].right.q)
    header = (
        ["time"]
        + [f"qL{i}" for i in range(nL)]
        + [f"qR{i}" for i in range(nR)]
        + ["obj_px", "obj_py", "obj_pz", "obj_qw", "obj_qx", "obj_qy", "obj_qz"]
        + ["engaged_left", "engaged_right"]
    )
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for st in rows:
            vals = [st.time]
            vals += list(st.left.q) + list(st.right.q)
            if st.object_pose is not None:
                vals += list(st.object_pose.as_vector())
            else:
                vals += [np.nan] * 7
            vals += [int(st.engaged[0]), int(st.engaged[1])]
            fh.write(",".join(repr(float(v)) if not isinstance(v, int) else str(v) for v in vals) + "\n")
