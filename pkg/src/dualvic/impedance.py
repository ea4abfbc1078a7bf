"""Impedance model: wrench law, critically-damped damping design, and the
impedance/posture residuals as affine functions of the joint accelerations.

The damping matrix is built as sqrt(L) sqrt(K) + sqrt(K) sqrt(L) from the
task-space inertia L and the diagonal stiffness K, which critically damps
every decoupled channel. The posture residual uses the restoring sign on
the stiffness term (consistent with its own damping term).
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .dynamics import pose_error
from .geometry import Pose, Twist, Wrench


@dataclasses.dataclass(frozen=True)
class Stiffness:
    """Diagonal 6-DOF task-space stiffness (N/m, N*m/rad)."""

    diag: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.diag, dtype=float).reshape(6)
        if np.any(d <= 0.0):
            raise ValueError("stiffness entries must be > 0")
        object.__setattr__(self, "diag", d)

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.diag)

    @property
    def sqrt(self) -> np.ndarray:
        return np.diag(np.sqrt(self.diag))


@dataclasses.dataclass(frozen=True)
class ResidualAffine:
    """residual(ddq) = A @ ddq + b."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float).reshape(A.shape[0])
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("residual terms must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    def __call__(self, ddq: np.ndarray) -> np.ndarray:
        return self.A @ np.asarray(ddq, dtype=float) + self.b


def spd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Principal square root of an SPD matrix via eigendecomposition."""
    mat = 0.5 * (mat + mat.T)
    evals, vecs = np.linalg.eigh(mat)
    if evals[0] <= 0.0:
        raise ValueError("matrix is not positive-definite")
    return (vecs * np.sqrt(evals)) @ vecs.T


def damping_from_stiffness(lam: np.ndarray, stiffness: Stiffness) -> np.ndarray:
    """D = sqrt(L) sqrt(K) + sqrt(K) sqrt(L); exactly symmetric as S + S^T."""
    S = spd_sqrt(lam) @ stiffness.sqrt
    return S + S.T


def impedance_wrench(
    stiffness: Stiffness,
    damping: np.ndarray,
    x_r: Pose,
    xd_r: Twist,
    x: Pose,
    xd: Twist,
) -> Wrench:
    """f = D (xd_r - xd) + K (x_r - x), with the SO(3) error as a rotation vector."""
    twist_err = xd_r.as_vector() - xd.as_vector()
    f = damping @ twist_err + stiffness.diag * pose_error(x_r, x)
    return Wrench.from_vector(f)


def impedance_residual(
    J: np.ndarray, jdq: np.ndarray, lam: np.ndarray, f: Wrench
) -> ResidualAffine:
    """e_imp(ddq) = J ddq + Jdot qdot - L^-1 f (solve, never explicit inverse)."""
    target = np.linalg.solve(lam, f.as_vector())
    return ResidualAffine(A=J, b=np.asarray(jdq, dtype=float) - target)


def impedance_residual_implicit(
    J: np.ndarray, jdq: np.ndarray, lam: np.ndarray, f0: Wrench,
    damping: np.ndarray, dt: float,
) -> ResidualAffine:
    """Same residual with the damping term evaluated at the end-of-tick twist.

    The wrench becomes f = f0 - D J dt ddq (f0 is the wrench at the current
    state), which keeps the residual affine while making the discrete damping
    loop unconditionally stable at any control rate; identical to the plain
    residual as dt -> 0. Low-inertia task channels (a light wrist pitching at
    100 Hz) are unstable under the explicit form.
    """
    corr = np.linalg.solve(lam, damping @ J) * dt
    target = np.linalg.solve(lam, f0.as_vector())
    return ResidualAffine(A=J + corr, b=np.asarray(jdq, dtype=float) - target)


def posture_residual(
    k_null: np.ndarray, q_r: np.ndarray, dq_r: np.ndarray, q: np.ndarray, dq: np.ndarray
) -> ResidualAffine:
    """e_pos(ddq) = ddq - 2 sqrt(K_null)(dq_r - dq) - K_null (q_r - q)."""
    k = np.asarray(k_null, dtype=float).reshape(-1)
    if np.any(k <= 0.0):
        raise ValueError("K_null entries must be > 0")
    target = 2.0 * np.sqrt(k) * (np.asarray(dq_r) - np.asarray(dq)) + k * (
        np.asarray(q_r) - np.asarray(q)
    )
    return ResidualAffine(A=np.eye(k.shape[0]), b=-target)
