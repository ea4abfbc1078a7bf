"""Pure numpy dynamics kernels.

This is the fallback backend and the semantic reference for the compiled
extension: both implement the same recursions in the same order so results
agree to rounding noise. All frames are world-frame 3x3 rotations; gravity is
injected through the base acceleration in the Newton-Euler pass.
"""

from __future__ import annotations

import numpy as np

NAME = "python"


def _rodrigues(axis, angle):
    c, s = np.cos(angle), np.sin(angle)
    K = np.array([[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]])
    return c * np.eye(3) + s * K + (1.0 - c) * np.outer(axis, axis)


def fk_links(data, q):
    """World rotation/origin of every link frame plus world joint axes."""
    n = data.n
    R = np.empty((n, 3, 3))
    p = np.empty((n, 3))
    w = np.empty((n, 3))
    Rprev = np.eye(3)
    pprev = np.zeros(3)
    for i in range(n):
        Rj = Rprev @ data.fr[i]
        pj = pprev + Rprev @ data.fp[i]
        wi = Rj @ data.axis[i]
        if data.jtype[i] == 0:  # revolute
            Ri = Rj @ _rodrigues(data.axis[i], q[i])
            pi = pj
        else:  # prismatic
            Ri = Rj
            pi = pj + wi * q[i]
        R[i], p[i], w[i] = Ri, pi, wi
        Rprev, pprev = Ri, pi
    return R, p, w


def fk_ee(data, q):
    """End-effector world rotation and position."""
    R, p, _ = fk_links(data, q)
    R_ee = R[-1] @ data.ee_r
    p_ee = p[-1] + R[-1] @ data.ee_p
    return R_ee, p_ee


def jacobian(data, q):
    R, p, w = fk_links(data, q)
    p_ee = p[-1] + R[-1] @ data.ee_p
    J = np.zeros((6, data.n))
    for i in range(data.n):
        if data.jtype[i] == 0:
            J[:3, i] = np.cross(w[i], p_ee - p[i])
            J[3:, i] = w[i]
        else:
            J[:3, i] = w[i]
    return J


def _vel_recursion(data, q, dq):
    """Per-link frame velocities (origin linear velocity, angular velocity)."""
    R, p, w = fk_links(data, q)
    n = data.n
    v = np.empty((n, 3))
    om = np.empty((n, 3))
    vprev = np.zeros(3)
    oprev = np.zeros(3)
    pprev = np.zeros(3)
    for i in range(n):
        d = p[i] - pprev
        vi = vprev + np.cross(oprev, d)
        oi = oprev.copy()
        if data.jtype[i] == 0:
            oi = oi + w[i] * dq[i]
        else:
            vi = vi + w[i] * dq[i]
        v[i], om[i] = vi, oi
        vprev, oprev, pprev = vi, oi, p[i]
    return R, p, w, v, om


def _accel_recursion(data, q, dq, ddq, a0):
    """Adds frame accelerations to the velocity recursion; a0 seeds gravity."""
    R, p, w, v, om = _vel_recursion(data, q, dq)
    n = data.n
    a = np.empty((n, 3))
    do = np.empty((n, 3))
    aprev = a0.copy()
    dprev = np.zeros(3)
    oprev = np.zeros(3)
    pprev = np.zeros(3)
    for i in range(n):
        d = p[i] - pprev
        ai = aprev + np.cross(dprev, d) + np.cross(oprev, np.cross(oprev, d))
        di = dprev.copy()
        if data.jtype[i] == 0:
            di = di + w[i] * ddq[i] + np.cross(oprev, w[i] * dq[i])
        else:
            ai = ai + 2.0 * np.cross(oprev, w[i] * dq[i]) + w[i] * ddq[i]
        a[i], do[i] = ai, di
        aprev, dprev, oprev, pprev = ai, di, om[i], p[i]
    return R, p, w, v, om, a, do


def rnea(data, q, dq, ddq, gravity=None):
    """Inverse dynamics: joint forces for (q, dq, ddq) including gravity.

    `gravity` overrides the chain's own field (the simulator passes the
    world's gravity so arms and object always agree).
    """
    a0 = -(data.gravity if gravity is None else np.asarray(gravity, dtype=float))
    R, p, w, v, om, a, do = _accel_recursion(data, q, dq, ddq, a0)
    n = data.n
    F = np.empty((n, 3))
    N = np.empty((n, 3))
    c = np.empty((n, 3))
    for i in range(n):
        r = R[i] @ data.com[i]
        c[i] = p[i] + r
        ac = a[i] + np.cross(do[i], r) + np.cross(om[i], np.cross(om[i], r))
        Iw = R[i] @ data.inertia[i] @ R[i].T
        F[i] = data.mass[i] * ac
        N[i] = Iw @ do[i] + np.cross(om[i], Iw @ om[i])
    tau = np.empty(n)
    f = np.zeros(3)
    nmom = np.zeros(3)
    for i in range(n - 1, -1, -1):
        nmom = nmom + N[i] + np.cross(c[i] - p[i], F[i])
        f = f + F[i]
        if data.jtype[i] == 0:
            tau[i] = w[i] @ nmom
        else:
            tau[i] = w[i] @ f
        pprev = p[i - 1] if i > 0 else np.zeros(3)
        nmom = nmom + np.cross(p[i] - pprev, f)
    return tau


def jdot_qdot(data, q, dq):
    """End-effector classical acceleration with ddq = 0 (no gravity)."""
    zeros = np.zeros(data.n)
    R, p, w, v, om, a, do = _accel_recursion(data, q, dq, zeros, np.zeros(3))
    r = R[-1] @ data.ee_p
    a_ee = a[-1] + np.cross(do[-1], r) + np.cross(om[-1], np.cross(om[-1], r))
    return np.concatenate([a_ee, do[-1]])


def ee_velocity(data, q, dq):
    """End-effector twist (linear at EE point, angular), world frame."""
    R, p, w, v, om = _vel_recursion(data, q, dq)
    r = R[-1] @ data.ee_p
    v_ee = v[-1] + np.cross(om[-1], r)
    return np.concatenate([v_ee, om[-1]])


def mass_matrix(data, q):
    """Joint-space inertia via the composite-rigid-body algorithm."""
    R, p, w = fk_links(data, q)
    n = data.n
    mc = np.empty(n)
    cc = np.empty((n, 3))
    Ic = np.empty((n, 3, 3))
    # composite (subtree) mass properties, built from the tip
    for i in range(n - 1, -1, -1):
        r = R[i] @ data.com[i]
        ci = p[i] + r
        Iw = R[i] @ data.inertia[i] @ R[i].T
        if i == n - 1:
            mc[i], cc[i], Ic[i] = data.mass[i], ci, Iw
        else:
            m2 = mc[i + 1]
            m = data.mass[i] + m2
            cnew = (data.mass[i] * ci + m2 * cc[i + 1]) / m
            d1 = ci - cnew
            d2 = cc[i + 1] - cnew
            Ic[i] = (
                Iw
                + data.mass[i] * (np.dot(d1, d1) * np.eye(3) - np.outer(d1, d1))
                + Ic[i + 1]
                + m2 * (np.dot(d2, d2) * np.eye(3) - np.outer(d2, d2))
            )
            mc[i], cc[i] = m, cnew
    M = np.zeros((n, n))
    for i in range(n):
        if data.jtype[i] == 0:
            Fi = mc[i] * np.cross(w[i], cc[i] - p[i])
            Ni = Ic[i] @ w[i] + np.cross(cc[i] - p[i], Fi)
        else:
            Fi = mc[i] * w[i]
            Ni = np.cross(cc[i] - p[i], Fi)
        for j in range(i, -1, -1):
            if data.jtype[j] == 0:
                M[j, i] = w[j] @ (Ni + np.cross(p[i] - p[j], Fi))
            else:
                M[j, i] = w[j] @ Fi
            M[i, j] = M[j, i]
    return M


def _quat_to_mat(qv):
    w, x, y, z = qv
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    return np.array(
        [
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ]
    )


def _quat_mul(a, b):
    return np.array(
        [
            a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
        ]
    )


def _quat_from_rotvec(v):
    angle = np.linalg.norm(v)
    if angle < 1e-12:
        s = 0.5 - angle * angle / 48.0
        out = np.array([1.0, s * v[0], s * v[1], s * v[2]])
        return out / np.linalg.norm(out)
    axis = v / angle
    half = 0.5 * angle
    s = np.sin(half)
    return np.array([np.cos(half), s * axis[0], s * axis[1], s * axis[2]])


def _mat_rotvec(Rm):
    """Rotation vector of a rotation matrix (used for coupling spring errors)."""
    w = max(Rm[0, 0] + Rm[1, 1] + Rm[2, 2] + 1.0, 0.0)
    qw = 0.5 * np.sqrt(w)
    vec = 0.5 * np.array([Rm[2, 1] - Rm[1, 2], Rm[0, 2] - Rm[2, 0], Rm[1, 0] - Rm[0, 1]])
    if qw > 1e-8:
        vec = vec / (2.0 * qw)  # = sin(theta/2)*axis
    s = np.linalg.norm(vec)
    if s < 1e-12:
        return 2.0 * vec
    angle = 2.0 * np.arctan2(s, min(qw, 1.0))
    return vec * (angle / s)


def _arm_accel(data, q, dq, tau, f_ext, gravity):
    """Joint accelerations under command torque and EE-frame external wrench."""
    M = mass_matrix(data, q)
    h = rnea(data, q, dq, np.zeros(data.n), gravity)
    J = jacobian(data, q)
    rhs = tau - h + J.T @ f_ext
    return np.linalg.solve(M, rhs)


def world_substeps(
    dataL,
    dataR,
    qL,
    dqL,
    qR,
    dqR,
    tauL,
    tauR,
    has_object,
    obj_mass,
    obj_inertia,
    obj_p,
    obj_q,
    obj_v,
    obj_w,
    grasp_p,
    grasp_q,
    off_p,
    off_q,
    engaged,
    coupling,
    gravity,
    dt,
    nsub,
):
    """Advance both arms and the object by nsub semi-implicit Euler substeps.

    Torques are zero-order-held. Returns updated state plus the final grasp
    reaction wrench at each EE (world frame, felt by the arm) and the net
    linear impulse the couplings applied to the object over the interval.
    """
    qL, dqL = qL.copy(), dqL.copy()
    qR, dqR = qR.copy(), dqR.copy()
    obj_p, obj_q = obj_p.copy(), obj_q.copy()
    obj_v, obj_w = obj_v.copy(), obj_w.copy()
    engaged = engaged.copy()
    wrench_out = np.zeros((2, 6))
    impulse = np.zeros(3)
    arms = ((dataL, qL, dqL, tauL), (dataR, qR, dqR, tauR))

    for _ in range(nsub):
        Robj = _quat_to_mat(obj_q)
        f_obj = np.zeros(3)
        t_obj = np.zeros(3)
        f_ee = [np.zeros(6), np.zeros(6)]
        for k, (data, q, dq, _tau) in enumerate(arms):
            if not (has_object and engaged[k]):
                wrench_out[k] = 0.0
                continue
            R_ee, p_ee = fk_ee(data, q)
            tw = ee_velocity(data, q, dq)
            v_ee, om_ee = tw[:3], tw[3:]
            # hand-side anchor: EE frame composed with the rest offset
            off_R = _quat_to_mat(off_q[k])
            p_h = p_ee + R_ee @ off_p[k]
            R_h = R_ee @ off_R
            v_h = v_ee + np.cross(om_ee, p_h - p_ee)
            # object-side anchor: grasp frame carried by the object
            gr_R = _quat_to_mat(grasp_q[k])
            p_w = obj_p + Robj @ grasp_p[k]
            R_w = Robj @ gr_R
            v_w = obj_v + np.cross(obj_w, p_w - obj_p)
            e_lin = p_h - p_w
            if np.linalg.norm(e_lin) > coupling[k, 4]:
                engaged[k] = 0  # breakaway: permanent within the episode
                wrench_out[k] = 0.0
                continue
            e_ang = _mat_rotvec(R_h @ R_w.T)
            F = coupling[k, 0] * e_lin + coupling[k, 2] * (v_h - v_w)
            T = coupling[k, 1] * e_ang + coupling[k, 3] * (om_ee - obj_w)
            f_obj = f_obj + F
            t_obj = t_obj + T + np.cross(p_w - obj_p, F)
            # reaction on the arm, transported to the EE origin
            Fr = -F
            Tr = -T + np.cross(p_h - p_ee, Fr)
            f_ee[k] = np.concatenate([Fr, Tr])
            wrench_out[k] = f_ee[k]
        for k, (data, q, dq, tau) in enumerate(arms):
            ddq = _arm_accel(data, q, dq, tau, f_ee[k], gravity)
            dq += ddq * dt
            q += dq * dt
        if has_object:
            acc = f_obj / obj_mass + gravity
            ob = Robj.T @ obj_w
            tb = Robj.T @ t_obj
            dob = np.linalg.solve(obj_inertia, tb - np.cross(ob, obj_inertia @ ob))
            obj_v += acc * dt
            obj_w += (Robj @ dob) * dt
            obj_p += obj_v * dt
            dq_obj = _quat_mul(_quat_from_rotvec(obj_w * dt), obj_q)
            obj_q = dq_obj / np.linalg.norm(dq_obj)
            impulse += f_obj * dt
    return qL, dqL, qR, dqR, obj_p, obj_q, obj_v, obj_w, engaged, wrench_out[0], wrench_out[1], impulse
