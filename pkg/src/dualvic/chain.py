"""Serial-chain manipulator description and joint-space state.

A chain is a flat list of links; link i carries one joint (revolute or
prismatic) whose frame is reached from the parent link frame through a fixed
transform. The first link's fixed transform doubles as the arm's base pose in
the world. An optional fixed end-effector offset hangs off the last link.
"""

from __future__ import annotations

import dataclasses
import functools
from types import SimpleNamespace

import numpy as np
import yaml

from .geometry import Pose

REVOLUTE = 0
PRISMATIC = 1

_JOINT_NAMES = {"revolute": REVOLUTE, "prismatic": PRISMATIC}


@dataclasses.dataclass(frozen=True)
class LinkSpec:
    mass: float
    com: np.ndarray  # COM in link frame, m
    inertia: np.ndarray  # 3x3 about COM, link frame, kg m^2
    axis: np.ndarray  # unit joint axis, joint frame
    joint_type: str  # 'revolute' | 'prismatic'
    origin: Pose  # fixed parent->joint transform

    def __post_init__(self):
        com = np.array(self.com, dtype=float).reshape(3)
        inertia = np.array(self.inertia, dtype=float).reshape(3, 3)
        axis = np.array(self.axis, dtype=float).reshape(3)
        if self.mass <= 0.0:
            raise ValueError("link mass must be > 0")
        if not np.allclose(inertia, inertia.T, atol=1e-12):
            raise ValueError("inertia must be symmetric")
        if np.min(np.linalg.eigvalsh(0.5 * (inertia + inertia.T))) <= 0.0:
            raise ValueError("inertia must be positive-definite")
        norm = np.linalg.norm(axis)
        if abs(norm - 1.0) > 1e-6:
            raise ValueError("joint axis must be unit-norm")
        if self.joint_type not in _JOINT_NAMES:
            raise ValueError(f"unknown joint type {self.joint_type!r}")
        object.__setattr__(self, "com", com)
        object.__setattr__(self, "inertia", 0.5 * (inertia + inertia.T))
        object.__setattr__(self, "axis", axis / norm)


@dataclasses.dataclass(frozen=True)
class ChainModel:
    links: tuple
    q_min: np.ndarray
    q_max: np.ndarray
    dq_min: np.ndarray
    dq_max: np.ndarray
    tau_min: np.ndarray
    tau_max: np.ndarray
    gravity: np.ndarray = dataclasses.field(
        default_factory=lambda: np.array([0.0, 0.0, -9.81])
    )
    ee_offset: Pose = dataclasses.field(default_factory=Pose.identity)
    name: str = "arm"

    def __post_init__(self):
        links = tuple(self.links)
        if not links:
            raise ValueError("chain needs at least one link")
        n = len(links)
        for field in ("q_min", "q_max", "dq_min", "dq_max", "tau_min", "tau_max"):
            v = np.array(getattr(self, field), dtype=float).reshape(n)
            object.__setattr__(self, field, v)
        if not np.all(self.q_min < self.q_max):
            raise ValueError("q_min must be < q_max elementwise")
        object.__setattr__(self, "links", links)
        object.__setattr__(self, "gravity", np.array(self.gravity, dtype=float).reshape(3))

    @property
    def n(self) -> int:
        return len(self.links)

    @functools.cached_property
    def data(self) -> SimpleNamespace:
        """Contiguous packed arrays consumed by the dynamics kernels."""
        n = self.n
        pk = SimpleNamespace(
            n=n,
            jtype=np.array([_JOINT_NAMES[l.joint_type] for l in self.links], dtype=np.int32),
            axis=np.ascontiguousarray([l.axis for l in self.links], dtype=float),
            fr=np.ascontiguousarray([l.origin.rotation for l in self.links], dtype=float),
            fp=np.ascontiguousarray([l.origin.position for l in self.links], dtype=float),
            mass=np.ascontiguousarray([l.mass for l in self.links], dtype=float),
            com=np.ascontiguousarray([l.com for l in self.links], dtype=float),
            inertia=np.ascontiguousarray([l.inertia for l in self.links], dtype=float),
            ee_r=np.ascontiguousarray(self.ee_offset.rotation, dtype=float),
            ee_p=np.ascontiguousarray(self.ee_offset.position, dtype=float),
            gravity=np.ascontiguousarray(self.gravity, dtype=float),
        )
        return pk

    def check_q(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.shape[0] != self.n:
            raise ValueError(f"expected {self.n} joint values, got {q.shape[0]}")
        return q

    def clamp_torque(self, tau: np.ndarray) -> np.ndarray:
        tau = np.asarray(tau, dtype=float).reshape(self.n)
        return np.clip(tau, self.tau_min, self.tau_max)


@dataclasses.dataclass
class JointState:
    q: np.ndarray
    dq: np.ndarray
    ddq: np.ndarray = None

    def __post_init__(self):
        self.q = np.array(self.q, dtype=float).reshape(-1)
        self.dq = np.array(self.dq, dtype=float).reshape(self.q.shape)
        if self.ddq is None:
            self.ddq = np.zeros_like(self.q)
        else:
            self.ddq = np.array(self.ddq, dtype=float).reshape(self.q.shape)
        for v in (self.q, self.dq, self.ddq):
            if not np.all(np.isfinite(v)):
                raise ValueError("joint state entries must be finite")

    @staticmethod
    def zeros(n: int) -> "JointState":
        return JointState(np.zeros(n), np.zeros(n))

    def copy(self) -> "JointState":
        return JointState(self.q.copy(), self.dq.copy(), self.ddq.copy())


def _pose_from_cfg(node) -> Pose:
    if node is None:
        return Pose.identity()
    return Pose(np.array(node["position"], dtype=float), np.array(node["orientation"], dtype=float))


def chain_from_dict(doc: dict) -> ChainModel:
    links = []
    q_lo, q_hi, dq_lo, dq_hi, tau_lo, tau_hi = [], [], [], [], [], []
    for item in doc["links"]:
        links.append(
            LinkSpec(
                mass=float(item["mass"]),
                com=np.array(item["com"], dtype=float),
                inertia=np.array(item["inertia"], dtype=float),
                axis=np.array(item["axis"], dtype=float),
                joint_type=item["joint_type"],
                origin=_pose_from_cfg(item.get("origin")),
            )
        )
        q_lo.append(float(item["q_limit"][0]))
        q_hi.append(float(item["q_limit"][1]))
        dq_lo.append(float(item["dq_limit"][0]))
        dq_hi.append(float(item["dq_limit"][1]))
        tau_lo.append(float(item["tau_limit"][0]))
        tau_hi.append(float(item["tau_limit"][1]))
    return ChainModel(
        links=tuple(links),
        q_min=q_lo,
        q_max=q_hi,
        dq_min=dq_lo,
        dq_max=dq_hi,
        tau_min=tau_lo,
        tau_max=tau_hi,
        gravity=np.array(doc.get("gravity", [0.0, 0.0, -9.81]), dtype=float),
        ee_offset=_pose_from_cfg(doc.get("ee_offset")),
        name=doc.get("name", "arm"),
    )


def load_chains(path) -> dict:
    """Load every chain document from a YAML file, keyed by name."""
    with open(path) as fh:
        docs = [d for d in yaml.safe_load_all(fh) if d]
    chains = {}
    for doc in docs:
        chain = chain_from_dict(doc)
        chains[chain.name] = chain
    if not chains:
        raise ValueError(f"no chain documents found in {path}")
    return chains


def load_chain(path, name=None) -> ChainModel:
    chains = load_chains(path)
    if name is None:
        if len(chains) != 1:
            raise ValueError(f"{path} holds {sorted(chains)}; pass name=")
        return next(iter(chains.values()))
    return chains[name]
