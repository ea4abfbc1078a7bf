"""Three-stage object reference trajectories (grasp / pick / place).

Positions follow per-axis quintics with zero boundary velocity and
acceleration; orientations follow one constant-rate SLERP per stage. The
pick stage ends at a waypoint whose x, y are the means of start and goal
and whose height is drawn uniformly from a configured range. End-effector
references are rigid transports of the object reference through the grasp
offsets captured at attach time.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .geometry import (
    Pose,
    Twist,
    quat_canonical,
    quat_conj,
    quat_from_rotvec,
    quat_mul,
    quat_rotate,
    quat_to_rotvec,
)


@dataclasses.dataclass(frozen=True)
class TrajectorySpec:
    start: Pose
    goal: Pose
    waypoint_z_range: tuple  # (lo, hi) in m
    stage_durations: tuple  # (grasp, pick, place) in s
    dt_ctrl: float
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.waypoint_z_range
        if hi < lo:
            raise ValueError("empty waypoint z-range")
        if len(self.stage_durations) != 3 or any(d <= 0 for d in self.stage_durations):
            raise ValueError("three positive stage durations required")
        if self.dt_ctrl <= 0:
            raise ValueError("dt_ctrl must be > 0")
        object.__setattr__(self, "waypoint_z_range", (float(lo), float(hi)))
        object.__setattr__(self, "stage_durations", tuple(float(d) for d in self.stage_durations))


@dataclasses.dataclass(frozen=True)
class ReferenceSample:
    pose: Pose
    twist: Twist
    accel: np.ndarray  # 6-vector, analytic; unused by the controller by default

    def __post_init__(self):
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=float).reshape(6))


def quintic_sample(p0: float, pT: float, T: float, t: float):
    """Minimum-jerk quintic: p(0)=p0, p(T)=pT, zero boundary vel/accel."""
    if T <= 0:
        raise ValueError("duration must be > 0")
    s = min(max(t / T, 0.0), 1.0)
    d = pT - p0
    p = p0 + d * (10 * s**3 - 15 * s**4 + 6 * s**5)
    v = d * (30 * s**2 - 60 * s**3 + 30 * s**4) / T
    a = d * (60 * s - 180 * s**2 + 120 * s**3) / T**2
    return p, v, a


def slerp_sample(quat0, quatT, T: float, t: float):
    """Shortest-arc SLERP; angular velocity is constant along the segment."""
    if T <= 0:
        raise ValueError("duration must be > 0")
    q0 = np.asarray(quat0, dtype=float)
    qT = np.asarray(quatT, dtype=float)
    if np.dot(q0, qT) < 0.0:
        qT = -qT
    rel = quat_canonical(quat_mul(quat_conj(q0), qT))
    rotvec = quat_to_rotvec(rel)  # body-frame axis*angle
    s = min(max(t / T, 0.0), 1.0)
    q = quat_mul(q0, quat_from_rotvec(rotvec * s))
    omega_world = quat_rotate(q0, rotvec) / T
    return q, omega_world


def make_waypoint(start: Pose, goal: Pose, spec: TrajectorySpec, rng) -> Pose:
    """Waypoint: mean x/y, random z in range, SLERP-midpoint orientation."""
    lo, hi = spec.waypoint_z_range
    pos = np.empty(3)
    pos[0] = 0.5 * (start.position[0] + goal.position[0])
    pos[1] = 0.5 * (start.position[1] + goal.position[1])
    pos[2] = lo if hi == lo else rng.uniform(lo, hi)
    quat, _ = slerp_sample(start.orientation, goal.orientation, 1.0, 0.5)
    return Pose(pos, quat)


def object_to_ee(sample: ReferenceSample, grasp_offset: Pose) -> ReferenceSample:
    """Rigidly transport an object reference to an end effector.

    grasp_offset is the constant object->EE transform captured at attach.
    """
    pose = sample.pose.compose(grasp_offset)
    r = pose.position - sample.pose.position
    omega = sample.twist.angular
    v = sample.twist.linear + np.cross(omega, r)
    a_lin = sample.accel[:3] + np.cross(sample.accel[3:], r) + np.cross(omega, np.cross(omega, r))
    return ReferenceSample(
        pose=pose,
        twist=Twist(v, omega),
        accel=np.concatenate([a_lin, sample.accel[3:]]),
    )


class ObjectTrajectory:
    """Deterministic three-stage reference, sampled at control ticks.

    Stage 1 holds the start pose (arms settle onto the grasps); stage 2 runs
    start -> waypoint; stage 3 runs waypoint -> goal.
    """

    def __init__(self, spec: TrajectorySpec, rng=None):
        self.spec = spec
        rng = rng if rng is not None else np.random.default_rng(spec.seed)
        self.waypoint = make_waypoint(spec.start, spec.goal, spec, rng)
        self._segments = (
            (spec.start, spec.start, spec.stage_durations[0]),
            (spec.start, self.waypoint, spec.stage_durations[1]),
            (self.waypoint, spec.goal, spec.stage_durations[2]),
        )
        self._boundaries = np.cumsum([d for _, _, d in self._segments])

    @property
    def duration(self) -> float:
        return float(self._boundaries[-1])

    @property
    def num_ticks(self) -> int:
        return int(round(self.duration / self.spec.dt_ctrl))

    def stage_at(self, t: float) -> int:
        """0 = grasp, 1 = pick, 2 = place."""
        for k, b in enumerate(self._boundaries):
            if t < b - 1e-12:
                return k
        return 2

    def sample(self, t: float) -> ReferenceSample:
        t = min(max(t, 0.0), self.duration)
        stage = self.stage_at(t)
        t_local = t - (self._boundaries[stage - 1] if stage > 0 else 0.0)
        a, b, T = self._segments[stage]
        pos = np.empty(3)
        vel = np.empty(3)
        acc = np.empty(3)
        for k in range(3):
            pos[k], vel[k], acc[k] = quintic_sample(a.position[k], b.position[k], T, t_local)
        quat, omega = slerp_sample(a.orientation, b.orientation, T, t_local)
        return ReferenceSample(
            pose=Pose(pos, quat),
            twist=Twist(vel, omega),
            accel=np.concatenate([acc, np.zeros(3)]),
        )

    def sample_tick(self, tick: int) -> ReferenceSample:
        return self.sample(tick * self.spec.dt_ctrl)

    def stage_of_tick(self, tick: int) -> int:
        return self.stage_at(tick * self.spec.dt_ctrl)


def export_reference_csv(traj: ObjectTrajectory, path, grasp_offsets=None) -> None:
    """Sampled references at every control tick, optionally with EE transports."""
    cols = ["time", "stage"]
    cols += [f"obj_{c}" for c in ("px", "py", "pz", "qw", "qx", "qy", "qz")]
    cols += [f"obj_{c}" for c in ("vx", "vy", "vz", "wx", "wy", "wz")]
    sides = []
    if grasp_offsets is not None:
        sides = list(grasp_offsets)
        for side, _ in sides:
            cols += [f"{side}_{c}" for c in ("px", "py", "pz", "qw", "qx", "qy", "qz")]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for tick in range(traj.num_ticks + 1):
            s = traj.sample_tick(tick)
            vals = [tick * traj.spec.dt_ctrl, traj.stage_of_tick(tick)]
            vals += list(s.pose.as_vector()) + list(s.twist.as_vector())
            for _, off in sides:
                vals += list(object_to_ee(s, off).pose.as_vector())
            fh.write(",".join(repr(float(v)) for v in vals) + "\n")
