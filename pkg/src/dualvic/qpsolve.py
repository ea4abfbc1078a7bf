"""Dense primal-dual interior-point solver for the per-tick control problem.

    minimize    1/2 x^T H x + g^T x
    subject to  C x <= d                      (box rows from the limits)
                E x  = f                      (pinned bounds, optional)
                ||A x + b||_2 <= r            (grasp-width ball, optional)

The ball is handled as the smooth convex quadratic 1/2(||Ax+b||^2 - r^2) <= 0,
so the KKT matrix stays symmetric positive-definite and the same Mehrotra
predictor-corrector covers both row types. Problems here are tiny (dim <= 14,
under ~100 rows) and are solved to tight tolerances every control tick.
"""

from __future__ import annotations

import dataclasses

import numpy as np


@dataclasses.dataclass(frozen=True)
class SOCConstraint:
    """||A x + b||_2 <= radius."""

    A: np.ndarray
    b: np.ndarray
    radius: float


@dataclasses.dataclass
class QPProblem:
    H: np.ndarray
    g: np.ndarray
    C: np.ndarray  # (m, n) rows C x <= d; may be empty
    d: np.ndarray
    E: np.ndarray = None  # (p, n) rows E x = f; optional
    f: np.ndarray = None
    soc: SOCConstraint = None
    dt: float = 0.0
    meta: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float).reshape(-1)
        n = self.g.shape[0]
        self.C = np.asarray(self.C, dtype=float).reshape(-1, n)
        self.d = np.asarray(self.d, dtype=float).reshape(self.C.shape[0])
        if self.E is not None:
            self.E = np.asarray(self.E, dtype=float).reshape(-1, n)
            self.f = np.asarray(self.f, dtype=float).reshape(self.E.shape[0])
        for arr in (self.H, self.g, self.C, self.d):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite problem data")

    @property
    def dim(self) -> int:
        return self.g.shape[0]


@dataclasses.dataclass
class SolveResult:
    x: np.ndarray
    status: str  # optimal | infeasible | max_iter
    iterations: int
    stationarity: float
    feasibility: float
    gap: float
    lam: np.ndarray = None
    nu: np.ndarray = None

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _constraint_terms(p: QPProblem, x):
    """Values c(x) and gradients G of every inequality (linear rows + ball)."""
    vals = [p.C @ x - p.d]
    grads = [p.C]
    if p.soc is not None:
        res = p.soc.A @ x + p.soc.b
        vals.append(np.array([0.5 * (res @ res - p.soc.radius**2)]))
        grads.append((p.soc.A.T @ res)[None, :])
    return np.concatenate(vals), np.vstack(grads)


def kkt_residuals(p: QPProblem, x, lam, nu=None):
    """Post-hoc certificate: (stationarity inf-norm, primal violation inf-norm)."""
    c, G = _constraint_terms(p, x)
    r_dual = p.H @ x + p.g + G.T @ lam
    if p.E is not None and nu is not None:
        r_dual = r_dual + p.E.T @ nu
    viol = float(np.max(c, initial=0.0))
    if p.E is not None:
        viol = max(viol, float(np.max(np.abs(p.E @ x - p.f), initial=0.0)))
    return float(np.max(np.abs(r_dual), initial=0.0)), max(viol, 0.0)


def solve_qp(
    p: QPProblem,
    warm_start: np.ndarray = None,
    tol: float = 1e-9,
    feas_tol: float = 1e-9,
    max_iter: int = 60,
) -> SolveResult:
    n = p.dim
    m = p.C.shape[0] + (1 if p.soc is not None else 0)
    has_eq = p.E is not None and p.E.shape[0] > 0
    pdim = p.E.shape[0] if has_eq else 0

    x = np.zeros(n) if warm_start is None else np.array(warm_start, dtype=float)
    if x.shape != (n,) or not np.all(np.isfinite(x)):
        x = np.zeros(n)
    elif m > 0 and warm_start is not None:
        # a badly infeasible warm start destabilizes the barrier; drop it
        c_w, _ = _constraint_terms(p, x)
        if c_w.size and np.max(c_w) > 1.0:
            x = np.zeros(n)
    nu = np.zeros(pdim)

    if m == 0:
        # equality-constrained / unconstrained: one KKT solve
        if has_eq:
            K = np.block([[p.H, p.E.T], [p.E, np.zeros((pdim, pdim))]])
            rhs = np.concatenate([-p.g, p.f])
            sol = np.linalg.solve(K, rhs)
            x, nu = sol[:n], sol[n:]
        else:
            x = np.linalg.solve(p.H, -p.g)
        stat, feas = kkt_residuals(p, x, np.zeros(0), nu if has_eq else None)
        return SolveResult(x, "optimal", 1, stat, feas, 0.0, np.zeros(0), nu)

    c0, _ = _constraint_terms(p, x)
    s = np.maximum(-c0, 1.0)  # fat central start; a few extra iterations, stable
    lam = np.ones(m)

    best_infeas = np.inf
    stall = 0
    status = "max_iter"
    it = 0
    for it in range(1, max_iter + 1):
        c, G = _constraint_terms(p, x)
        K0 = p.H.copy()
        if p.soc is not None:
            K0 += lam[-1] * (p.soc.A.T @ p.soc.A)
        r_dual = p.H @ x + p.g + G.T @ lam + (p.E.T @ nu if has_eq else 0.0)
        r_prim = c + s
        r_eq = (p.E @ x - p.f) if has_eq else np.zeros(0)
        mu = float(s @ lam) / m

        viol = float(np.max(c, initial=0.0))
        if has_eq:
            viol = max(viol, float(np.max(np.abs(r_eq), initial=0.0)))
        stat_inf = float(np.max(np.abs(r_dual)))
        if stat_inf <= tol * (1.0 + np.max(np.abs(p.g))) and viol <= feas_tol and mu <= tol:
            status = "optimal"
            break

        # stall / divergence heuristics -> infeasible
        infeas_now = float(np.max(r_prim.clip(min=0.0), initial=0.0)) + (
            float(np.max(np.abs(r_eq), initial=0.0)) if has_eq else 0.0
        )
        if infeas_now < best_infeas - 1e-12:
            best_infeas = infeas_now
            stall = 0
        else:
            stall += 1
        if (stall > 12 and viol > 100.0 * feas_tol) or np.max(lam) > 1e12:
            status = "infeasible"
            break

        W = lam / s
        K = K0 + (G.T * W) @ G + 1e-13 * np.eye(n)
        if not np.all(np.isfinite(K)):
            status = "infeasible" if viol > 100.0 * feas_tol else "max_iter"
            break

        def newton(r_comp):
            rhs_x = -(r_dual + G.T @ ((lam * r_prim - r_comp) / s))
            if has_eq:
                KK = np.block([[K, p.E.T], [p.E, np.zeros((pdim, pdim))]])
                rr = np.concatenate([rhs_x, -r_eq])
                sol = np.linalg.solve(KK, rr)
                dx, dnu = sol[:n], sol[n:]
            else:
                dx = np.linalg.solve(K, rhs_x)
                dnu = np.zeros(0)
            ds = -r_prim - G @ dx
            dlam = -(r_comp + lam * ds) / s
            return dx, ds, dlam, dnu

        try:
            # predictor
            dx_a, ds_a, dlam_a, _ = newton(lam * s)
            alpha_p = _max_step(s, ds_a)
            alpha_d = _max_step(lam, dlam_a)
            mu_aff = float((s + alpha_p * ds_a) @ (lam + alpha_d * dlam_a)) / m
            sigma = min((max(mu_aff, 0.0) / max(mu, 1e-16)) ** 3, 1.0)
            # corrector
            r_comp = lam * s + ds_a * dlam_a - sigma * mu
            dx, ds, dlam, dnu = newton(r_comp)
        except np.linalg.LinAlgError:
            status = "infeasible" if viol > 100.0 * feas_tol else "max_iter"
            break
        # equal primal-dual step: slower than split steps but far more robust
        # on the badly scaled ticks this controller produces
        alpha = 0.99 * min(_max_step(s, ds), _max_step(lam, dlam))
        if alpha < 1e-12 or not np.isfinite(alpha):
            status = "infeasible" if viol > 100.0 * feas_tol else "max_iter"
            break
        x = x + alpha * dx
        s = s + alpha * ds
        lam = lam + alpha * dlam
        if has_eq:
            nu = nu + alpha * dnu

    stat, feas = kkt_residuals(p, x, lam, nu if has_eq else None)
    gap = float(s @ lam) / m
    if status == "optimal" and (feas > 10.0 * feas_tol):
        status = "max_iter"
    return SolveResult(x, status, it, stat, feas, gap, lam, nu if has_eq else None)


def _max_step(v, dv):
    """Largest alpha in (0, 1] keeping v + alpha dv > 0."""
    neg = dv < 0.0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))
