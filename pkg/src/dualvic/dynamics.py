"""Kinematics and dynamics of a single serial chain.

Thin validated wrappers over the kernel backends, plus the task-space
quantities (task-space inertia, pose error) that stay in numpy because they
run once per control tick rather than once per physics substep.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from ._native import get_backend
from .chain import ChainModel
from .geometry import Pose, Twist, mat_to_quat, quat_canonical, quat_conj, quat_mul, quat_to_rotvec

# Ridge added to J M^-1 J^T when its smallest eigenvalue falls below the
# threshold; keeps the apparent inertia finite at workspace boundaries.
SINGULARITY_RIDGE = 1e-6
SINGULARITY_THRESHOLD = 1e-4


def fk_pose(chain: ChainModel, q, backend=None) -> Pose:
    """End-effector pose in the base frame."""
    q = chain.check_q(q)
    R, p = get_backend(backend).fk_ee(chain.data, q)
    return Pose(p, mat_to_quat(R))


def jacobian(chain: ChainModel, q, backend=None) -> np.ndarray:
    """Geometric Jacobian (linear rows first, angular rows second)."""
    q = chain.check_q(q)
    return get_backend(backend).jacobian(chain.data, q)


def jdot_qdot(chain: ChainModel, q, dq, backend=None) -> np.ndarray:
    """Bias task-space acceleration: EE acceleration at ddq = 0."""
    q = chain.check_q(q)
    dq = chain.check_q(dq)
    return get_backend(backend).jdot_qdot(chain.data, q, dq)


def mass_matrix(chain: ChainModel, q, backend=None) -> np.ndarray:
    """Joint-space inertia M(q), composite-rigid-body algorithm."""
    q = chain.check_q(q)
    return get_backend(backend).mass_matrix(chain.data, q)


def bias_forces(chain: ChainModel, q, dq, backend=None) -> np.ndarray:
    """Coriolis/centripetal/gravity forces h(q, dq), recursive Newton-Euler."""
    q = chain.check_q(q)
    dq = chain.check_q(dq)
    return get_backend(backend).rnea(chain.data, q, dq, np.zeros(chain.n))


def inverse_dynamics(chain: ChainModel, q, dq, ddq, backend=None) -> np.ndarray:
    """Full RNEA: torques realizing ddq at (q, dq)."""
    q = chain.check_q(q)
    dq = chain.check_q(dq)
    ddq = chain.check_q(ddq)
    return get_backend(backend).rnea(chain.data, q, dq, ddq)


def ee_twist(chain: ChainModel, q, dq, backend=None) -> Twist:
    q = chain.check_q(q)
    dq = chain.check_q(dq)
    return Twist.from_vector(get_backend(backend).ee_velocity(chain.data, q, dq))


def task_space_inertia(
    M: np.ndarray,
    J: np.ndarray,
    ridge: float = SINGULARITY_RIDGE,
    threshold: float = SINGULARITY_THRESHOLD,
) -> np.ndarray:
    """Apparent end-effector inertia (J M^-1 J^T)^-1.

    When J M^-1 J^T is near-singular (smallest eigenvalue below `threshold`)
    the inverse is taken of the ridged matrix instead, so the result stays
    finite and SPD in singular configurations.
    """
    M = np.asarray(M, dtype=float)
    try:
        cho = scipy.linalg.cho_factor(M)
    except scipy.linalg.LinAlgError as exc:
        raise ValueError("mass matrix is not positive-definite") from exc
    A = J @ scipy.linalg.cho_solve(cho, J.T)
    A = 0.5 * (A + A.T)
    evals, vecs = np.linalg.eigh(A)
    if evals[0] < threshold:
        evals = evals + ridge
    lam = (vecs / evals) @ vecs.T
    return 0.5 * (lam + lam.T)


def pose_error(x_r: Pose, x: Pose) -> np.ndarray:
    """6-vector (position difference, rotation vector of R_r R^T), base frame."""
    dq = quat_canonical(quat_mul(x_r.orientation, quat_conj(x.orientation)))
    return np.concatenate([x_r.position - x.position, quat_to_rotvec(dq)])
