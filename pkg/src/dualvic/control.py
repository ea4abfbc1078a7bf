"""Per-tick torque controllers.

`Controller` assembles and solves the coupled two-arm acceleration program
(impedance + posture costs, limit rows, grasp-width constraint) and maps the
optimal accelerations to torques through the joint-space dynamics.
`ClassicalController` is the conventional task-space impedance law used by
the IC / RL+IC baselines (no optimization, no limit handling beyond clamping).
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import dynamics
from .chain import ChainModel
from .geometry import Pose
from .impedance import (
    ResidualAffine,
    Stiffness,
    damping_from_stiffness,
    impedance_residual,
    impedance_residual_implicit,
    impedance_wrench,
    posture_residual,
)
from .qpsolve import QPProblem, SOCConstraint, SolveResult, kkt_residuals, solve_qp
from .trajectory import ReferenceSample
from .world import WorldState, ee_wrench_estimate


class ControlFault(RuntimeError):
    """Raised after too many consecutive infeasible ticks."""


@dataclasses.dataclass(frozen=True)
class ControllerGains:
    w_imp: float = 1.0
    w_pos: float = 0.05
    k_null: float = 50.0  # scalar or n-vector
    tol: float = 1e-3  # grasp-width tolerance, m
    soc_mode: str = "exact"  # exact | box
    separation_lower_bound: bool = True
    implicit_damping: bool = True  # discretize the damping term implicitly
    singularity_ridge: float = 1e-6
    singularity_threshold: float = 1e-4
    solver_tol: float = 1e-9
    solver_max_iter: int = 60
    max_infeasible_ticks: int = 10

    def __post_init__(self):
        if self.w_imp < 0 or self.w_pos < 0 or (self.w_imp == 0 and self.w_pos == 0):
            raise ValueError("weights must be >= 0 and not both zero")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")
        if self.soc_mode not in ("exact", "box"):
            raise ValueError("soc_mode must be 'exact' or 'box'")


@dataclasses.dataclass
class ControlOutput:
    ddq_left: np.ndarray
    ddq_right: np.ndarray
    tau_left: np.ndarray
    tau_right: np.ndarray
    status: str  # optimal | infeasible | max_iter
    solve: SolveResult = None
    audit: dict = None


def _limit_rows(chain: ChainModel, q, dq, M, h, dt, n_total, offset):
    """Eqs. (position / velocity / torque) box rows for one arm.

    Exactly pinned bounds (lo == hi) become equality rows. Returns
    (C, d, E, f) blocks in the stacked decision vector of size n_total.
    """
    n = chain.n
    rows_C, rows_d, rows_E, rows_f = [], [], [], []

    def emit(coeff, lo, hi):
        # coeff: (k, n) mapping ddq_arm -> constrained quantity; bounds lo <= . <= hi
        full = np.zeros((coeff.shape[0], n_total))
        full[:, offset : offset + n] = coeff
        pinned = np.isclose(lo, hi, rtol=0.0, atol=0.0)
        for i in range(coeff.shape[0]):
            if pinned[i]:
                rows_E.append(full[i])
                rows_f.append(lo[i])
            else:
                rows_C.append(full[i])
                rows_d.append(hi[i])
                rows_C.append(-full[i])
                rows_d.append(-lo[i])

    # position: q + dq dt + 1/2 ddq dt^2 in [q_min, q_max]
    emit(0.5 * dt * dt * np.eye(n), chain.q_min - q - dq * dt, chain.q_max - q - dq * dt)
    # velocity: dq + ddq dt in [dq_min, dq_max]
    emit(dt * np.eye(n), chain.dq_min - dq, chain.dq_max - dq)
    # torque: M ddq + h in [tau_min, tau_max]
    emit(M, chain.tau_min - h, chain.tau_max - h)
    return rows_C, rows_d, rows_E, rows_f


def assemble_qp(
    imp_left: ResidualAffine,
    imp_right: ResidualAffine,
    pos_left: ResidualAffine,
    pos_right: ResidualAffine,
    gains: ControllerGains,
    chain_left: ChainModel,
    chain_right: ChainModel,
    q_left,
    dq_left,
    q_right,
    dq_right,
    M_left,
    M_right,
    h_left,
    h_right,
    J_left,
    J_right,
    x_left: Pose,
    x_right: Pose,
    dt: float,
    grasp_width: float,
    couple_arms: bool = True,
) -> QPProblem:
    """Stack both arms into one problem (the grasp constraint couples them)."""
    nL, nR = chain_left.n, chain_right.n
    n = nL + nR
    if grasp_width <= 0.0 and couple_arms:
        raise ValueError("grasp width must be > 0")

    H = np.zeros((n, n))
    g = np.zeros(n)

    def add_cost(res: ResidualAffine, weight, offset, width):
        if weight == 0.0:
            return
        A = np.zeros((res.A.shape[0], n))
        A[:, offset : offset + width] = res.A
        H[:] += 2.0 * weight * (A.T @ A)
        g[:] += 2.0 * weight * (A.T @ res.b)

    add_cost(imp_left, gains.w_imp, 0, nL)
    add_cost(imp_right, gains.w_imp, nL, nR)
    add_cost(pos_left, gains.w_pos, 0, nL)
    add_cost(pos_right, gains.w_pos, nL, nR)

    C_rows, d_rows, E_rows, f_rows = [], [], [], []
    for chain, q, dq, M, h, off in (
        (chain_left, q_left, dq_left, M_left, h_left, 0),
        (chain_right, q_right, dq_right, M_right, h_right, nL),
    ):
        c, d, e, f = _limit_rows(chain, q, dq, M, h, dt, n, off)
        C_rows += c
        d_rows += d
        E_rows += e
        f_rows += f

    soc = None
    if couple_arms:
        # predicted EE separation, affine in the stacked accelerations
        A_s = np.zeros((3, n))
        A_s[:, :nL] = 0.5 * dt * dt * J_left[:3]
        A_s[:, nL:] = -0.5 * dt * dt * J_right[:3]
        b_s = (x_left.position + J_left[:3] @ dq_left * dt) - (
            x_right.position + J_right[:3] @ dq_right * dt
        )
        radius = grasp_width + gains.tol
        if gains.soc_mode == "exact":
            soc = SOCConstraint(A=A_s, b=b_s, radius=radius)
        else:
            # circumscribing axis-aligned box of the ball
            for i in range(3):
                C_rows.append(A_s[i])
                d_rows.append(radius - b_s[i])
                C_rows.append(-A_s[i])
                d_rows.append(radius + b_s[i])
        if gains.separation_lower_bound:
            sep = x_left.position - x_right.position
            norm = np.linalg.norm(sep)
            if norm > 1e-9:
                u = sep / norm
                # u . (A_s x + b_s) >= W_G - tol (supporting hyperplane of the shell)
                C_rows.append(-(u @ A_s))
                d_rows.append(u @ b_s - (grasp_width - gains.tol))

    C = np.array(C_rows).reshape(-1, n) if C_rows else np.zeros((0, n))
    d = np.array(d_rows) if d_rows else np.zeros(0)
    E = np.array(E_rows).reshape(-1, n) if E_rows else None
    f = np.array(f_rows) if f_rows else None
    return QPProblem(
        H=H, g=g, C=C, d=d, E=E, f=f, soc=soc, dt=dt,
        meta={"nL": nL, "nR": nR, "grasp_width": grasp_width},
    )


def torques_from_accel(M_left, M_right, h_left, h_right, ddq_left, ddq_right):
    """tau = M ddq + h per arm."""
    return M_left @ ddq_left + h_left, M_right @ ddq_right + h_right


@dataclasses.dataclass
class _ArmQuantities:
    q: np.ndarray
    dq: np.ndarray
    M: np.ndarray
    h: np.ndarray
    J: np.ndarray
    jdq: np.ndarray
    pose: Pose
    twist: object
    lam: np.ndarray


class Controller:
    """QP torque controller for the coupled dual-arm system.

    One instance per rollout: it owns the warm start, the previous torque
    (zero-order hold on infeasible ticks), and the infeasible-tick streak.
    """

    def __init__(self, chain_left: ChainModel, chain_right: ChainModel,
                 gains: ControllerGains, grasp_width: float, dt: float,
                 backend=None):
        self.chain_left = chain_left
        self.chain_right = chain_right
        self.gains = gains
        self.grasp_width = float(grasp_width)
        self.dt = float(dt)
        self.backend = backend
        self._warm = None
        self._hold = (np.zeros(chain_left.n), np.zeros(chain_right.n))
        self._streak = 0

    def reset(self):
        self._warm = None
        self._hold = (np.zeros(self.chain_left.n), np.zeros(self.chain_right.n))
        self._streak = 0

    def _arm(self, chain, joint_state, stiffness: Stiffness, ref: ReferenceSample):
        q, dq = joint_state.q, joint_state.dq
        M = dynamics.mass_matrix(chain, q, backend=self.backend)
        h = dynamics.bias_forces(chain, q, dq, backend=self.backend)
        J = dynamics.jacobian(chain, q, backend=self.backend)
        jdq = dynamics.jdot_qdot(chain, q, dq, backend=self.backend)
        pose = dynamics.fk_pose(chain, q, backend=self.backend)
        twist = dynamics.ee_twist(chain, q, dq, backend=self.backend)
        lam = dynamics.task_space_inertia(
            M, J, ridge=self.gains.singularity_ridge,
            threshold=self.gains.singularity_threshold,
        )
        quant = _ArmQuantities(q, dq, M, h, J, jdq, pose, twist, lam)
        D = damping_from_stiffness(lam, stiffness)
        f = impedance_wrench(stiffness, D, ref.pose, ref.twist, pose, twist)
        if self.gains.implicit_damping:
            imp = impedance_residual_implicit(J, jdq, lam, f, D, self.dt)
        else:
            imp = impedance_residual(J, jdq, lam, f)
        return quant, imp, f

    def control_step(
        self,
        world: WorldState,
        ref_left: ReferenceSample,
        ref_right: ReferenceSample,
        k_left: Stiffness,
        k_right: Stiffness,
        q_r_left: np.ndarray,
        q_r_right: np.ndarray,
        audit: bool = False,
    ) -> ControlOutput:
        gains = self.gains
        L, imp_L, f_L = self._arm(self.chain_left, world.left, k_left, ref_left)
        R, imp_R, f_R = self._arm(self.chain_right, world.right, k_right, ref_right)
        kn_L = np.broadcast_to(np.asarray(gains.k_null, dtype=float), (self.chain_left.n,))
        kn_R = np.broadcast_to(np.asarray(gains.k_null, dtype=float), (self.chain_right.n,))
        pos_L = posture_residual(kn_L, q_r_left, np.zeros_like(kn_L), L.q, L.dq)
        pos_R = posture_residual(kn_R, q_r_right, np.zeros_like(kn_R), R.q, R.dq)

        problem = assemble_qp(
            imp_L, imp_R, pos_L, pos_R, gains,
            self.chain_left, self.chain_right,
            L.q, L.dq, R.q, R.dq, L.M, R.M, L.h, R.h, L.J, R.J,
            L.pose, R.pose, self.dt, self.grasp_width,
        )
        result = solve_qp(
            problem, warm_start=self._warm,
            tol=gains.solver_tol, feas_tol=gains.solver_tol,
            max_iter=gains.solver_max_iter,
        )

        nL = self.chain_left.n
        if result.ok:
            self._warm = result.x.copy()
            self._streak = 0
            ddq_L, ddq_R = result.x[:nL], result.x[nL:]
            tau_L, tau_R = torques_from_accel(L.M, R.M, L.h, R.h, ddq_L, ddq_R)
            # Eq. 8 is a hard constraint: emitted torques must already satisfy
            # the limits (asserted, never silently clamped)
            for tau, chain in ((tau_L, self.chain_left), (tau_R, self.chain_right)):
                slack = 1e-6 * np.maximum(1.0, np.abs(chain.tau_max))
                if np.any(tau > chain.tau_max + slack) or np.any(tau < chain.tau_min - slack):
                    raise AssertionError("optimal torque violates limits")
            self._hold = (tau_L.copy(), tau_R.copy())
        else:
            self._streak += 1
            if self._streak >= gains.max_infeasible_ticks:
                raise ControlFault(
                    f"{self._streak} consecutive infeasible control ticks"
                )
            ddq_L = np.zeros(nL)
            ddq_R = np.zeros(self.chain_right.n)
            tau_L, tau_R = self._hold  # zero-order hold

        out = ControlOutput(
            ddq_left=ddq_L, ddq_right=ddq_R,
            tau_left=tau_L, tau_right=tau_R,
            status="optimal" if result.ok else ("infeasible" if result.status == "infeasible" else result.status),
            solve=result,
        )
        if audit:
            stat, feas = kkt_residuals(problem, result.x, result.lam, result.nu)
            ball_active = False
            box_x = None
            if problem.soc is not None:
                res = problem.soc.A @ result.x + problem.soc.b
                ball_active = np.linalg.norm(res) >= problem.soc.radius - 1e-7
            out.audit = {
                "stationarity": stat,
                "feasibility": feas,
                "ball_active": ball_active,
                "problem": problem,
            }
        return out


class ClassicalController:
    """Conventional task-space impedance baseline: tau = J^T f + h, clamped."""

    def __init__(self, chain_left, chain_right, gains: ControllerGains, dt: float,
                 backend=None):
        self.chain_left = chain_left
        self.chain_right = chain_right
        self.gains = gains
        self.dt = float(dt)
        self.backend = backend

    def reset(self):
        pass

    def control_step(self, world, ref_left, ref_right, k_left, k_right,
                     q_r_left=None, q_r_right=None, audit=False) -> ControlOutput:
        taus = []
        for chain, js, stiff, ref in (
            (self.chain_left, world.left, k_left, ref_left),
            (self.chain_right, world.right, k_right, ref_right),
        ):
            q, dq = js.q, js.dq
            M = dynamics.mass_matrix(chain, q, backend=self.backend)
            h = dynamics.bias_forces(chain, q, dq, backend=self.backend)
            J = dynamics.jacobian(chain, q, backend=self.backend)
            lam = dynamics.task_space_inertia(
                M, J, ridge=self.gains.singularity_ridge,
                threshold=self.gains.singularity_threshold,
            )
            D = damping_from_stiffness(lam, stiff)
            pose = dynamics.fk_pose(chain, q, backend=self.backend)
            twist = dynamics.ee_twist(chain, q, dq, backend=self.backend)
            f = impedance_wrench(stiff, D, ref.pose, ref.twist, pose, twist)
            taus.append(chain.clamp_torque(J.T @ f.as_vector() + h))
        return ControlOutput(
            ddq_left=np.zeros(self.chain_left.n),
            ddq_right=np.zeros(self.chain_right.n),
            tau_left=taus[0], tau_right=taus[1],
            status="optimal",
        )
