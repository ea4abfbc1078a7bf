# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled dynamics kernels.

Mirrors dualvic._native.reference recursion-for-recursion; world-frame 3x3
rotation formulation throughout. Keep the two implementations in sync.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport atan2, cos, sin, sqrt

cnp.import_array()

NAME = "compiled"


# ---------------------------------------------------------------------------
# small fixed-size helpers (C arrays, pointer based)
# ---------------------------------------------------------------------------

cdef inline void _cross(const double* a, const double* b, double* out) noexcept nogil:
    # alias-safe: out may be a or b
    cdef double x = a[1] * b[2] - a[2] * b[1]
    cdef double y = a[2] * b[0] - a[0] * b[2]
    cdef double z = a[0] * b[1] - a[1] * b[0]
    out[0] = x
    out[1] = y
    out[2] = z


cdef inline double _dot3(const double* a, const double* b) noexcept nogil:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


cdef inline void _mv3(const double* R, const double* v, double* out) noexcept nogil:
    out[0] = R[0] * v[0] + R[1] * v[1] + R[2] * v[2]
    out[1] = R[3] * v[0] + R[4] * v[1] + R[5] * v[2]
    out[2] = R[6] * v[0] + R[7] * v[1] + R[8] * v[2]


cdef inline void _mtv3(const double* R, const double* v, double* out) noexcept nogil:
    # R^T v
    out[0] = R[0] * v[0] + R[3] * v[1] + R[6] * v[2]
    out[1] = R[1] * v[0] + R[4] * v[1] + R[7] * v[2]
    out[2] = R[2] * v[0] + R[5] * v[1] + R[8] * v[2]


cdef inline void _mm3(const double* A, const double* B, double* out) noexcept nogil:
    cdef int i, j, k
    for i in range(3):
        for j in range(3):
            out[3 * i + j] = 0.0
            for k in range(3):
                out[3 * i + j] += A[3 * i + k] * B[3 * k + j]


cdef inline void _mmt3(const double* A, const double* B, double* out) noexcept nogil:
    # A @ B^T
    cdef int i, j, k
    for i in range(3):
        for j in range(3):
            out[3 * i + j] = 0.0
            for k in range(3):
                out[3 * i + j] += A[3 * i + k] * B[3 * j + k]


cdef inline void _rodrigues(const double* ax, double angle, double* R) noexcept nogil:
    cdef double c = cos(angle)
    cdef double s = sin(angle)
    cdef double one_c = 1.0 - c
    R[0] = c + one_c * ax[0] * ax[0]
    R[1] = one_c * ax[0] * ax[1] - s * ax[2]
    R[2] = one_c * ax[0] * ax[2] + s * ax[1]
    R[3] = one_c * ax[1] * ax[0] + s * ax[2]
    R[4] = c + one_c * ax[1] * ax[1]
    R[5] = one_c * ax[1] * ax[2] - s * ax[0]
    R[6] = one_c * ax[2] * ax[0] - s * ax[1]
    R[7] = one_c * ax[2] * ax[1] + s * ax[0]
    R[8] = c + one_c * ax[2] * ax[2]


cdef inline void _quat_to_mat(const double* q, double* R) noexcept nogil:
    cdef double w = q[0], x = q[1], y = q[2], z = q[3]
    R[0] = 1.0 - 2.0 * (y * y + z * z)
    R[1] = 2.0 * (x * y - w * z)
    R[2] = 2.0 * (x * z + w * y)
    R[3] = 2.0 * (x * y + w * z)
    R[4] = 1.0 - 2.0 * (x * x + z * z)
    R[5] = 2.0 * (y * z - w * x)
    R[6] = 2.0 * (x * z - w * y)
    R[7] = 2.0 * (y * z + w * x)
    R[8] = 1.0 - 2.0 * (x * x + y * y)


cdef inline void _quat_mul(const double* a, const double* b, double* out) noexcept nogil:
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]


cdef inline void _quat_from_rotvec(const double* v, double* q) noexcept nogil:
    cdef double angle = sqrt(_dot3(v, v))
    cdef double s, half, n
    cdef int i
    if angle < 1e-12:
        s = 0.5 - angle * angle / 48.0
        q[0] = 1.0
        q[1] = s * v[0]
        q[2] = s * v[1]
        q[3] = s * v[2]
        n = sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
        for i in range(4):
            q[i] /= n
        return
    half = 0.5 * angle
    s = sin(half) / angle
    q[0] = cos(half)
    q[1] = s * v[0]
    q[2] = s * v[1]
    q[3] = s * v[2]


cdef inline void _mat_rotvec(const double* Rm, double* out) noexcept nogil:
    # rotation vector of a rotation matrix, angle in [0, pi]
    cdef double w = Rm[0] + Rm[4] + Rm[8] + 1.0
    cdef double qw, s, angle, scale
    if w < 0.0:
        w = 0.0
    qw = 0.5 * sqrt(w)
    out[0] = 0.5 * (Rm[7] - Rm[5])
    out[1] = 0.5 * (Rm[2] - Rm[6])
    out[2] = 0.5 * (Rm[3] - Rm[1])
    if qw > 1e-8:
        out[0] /= 2.0 * qw
        out[1] /= 2.0 * qw
        out[2] /= 2.0 * qw
    s = sqrt(_dot3(out, out))
    if s < 1e-12:
        out[0] *= 2.0
        out[1] *= 2.0
        out[2] *= 2.0
        return
    if qw > 1.0:
        qw = 1.0
    angle = 2.0 * atan2(s, qw)
    scale = angle / s
    out[0] *= scale
    out[1] *= scale
    out[2] *= scale


cdef int _chol_solve(double* A, double* x, int n) noexcept nogil:
    # in-place Cholesky of SPD A (n x n, row major) and solve A x = b (b in x)
    cdef int i, j, k
    cdef double s
    for j in range(n):
        s = A[j * n + j]
        for k in range(j):
            s -= A[j * n + k] * A[j * n + k]
        if s <= 0.0:
            return -1
        A[j * n + j] = sqrt(s)
        for i in range(j + 1, n):
            s = A[i * n + j]
            for k in range(j):
                s -= A[i * n + k] * A[j * n + k]
            A[i * n + j] = s / A[j * n + j]
    for i in range(n):
        s = x[i]
        for k in range(i):
            s -= A[i * n + k] * x[k]
        x[i] = s / A[i * n + i]
    for i in range(n - 1, -1, -1):
        s = x[i]
        for k in range(i + 1, n):
            s -= A[k * n + i] * x[k]
        x[i] = s / A[i * n + i]
    return 0


# ---------------------------------------------------------------------------
# chain kernels
# ---------------------------------------------------------------------------

cdef void _fk(int n, const int* jtype, const double* axis, const double* fr,
              const double* fp, const double* q,
              double* R, double* p, double* w) noexcept nogil:
    cdef double Rprev[9]
    cdef double pprev[3]
    cdef double Rj[9]
    cdef double pj[3]
    cdef double Rjoint[9]
    cdef double tmp[3]
    cdef int i, k
    for k in range(9):
        Rprev[k] = 0.0
    Rprev[0] = Rprev[4] = Rprev[8] = 1.0
    pprev[0] = pprev[1] = pprev[2] = 0.0
    for i in range(n):
        _mm3(Rprev, fr + 9 * i, Rj)
        _mv3(Rprev, fp + 3 * i, tmp)
        for k in range(3):
            pj[k] = pprev[k] + tmp[k]
        _mv3(Rj, axis + 3 * i, w + 3 * i)
        if jtype[i] == 0:
            _rodrigues(axis + 3 * i, q[i], Rjoint)
            _mm3(Rj, Rjoint, R + 9 * i)
            for k in range(3):
                p[3 * i + k] = pj[k]
        else:
            for k in range(9):
                R[9 * i + k] = Rj[k]
            for k in range(3):
                p[3 * i + k] = pj[k] + w[3 * i + k] * q[i]
        for k in range(9):
            Rprev[k] = R[9 * i + k]
        for k in range(3):
            pprev[k] = p[3 * i + k]


cdef void _vel(int n, const int* jtype, const double* w, const double* p,
               const double* dq, double* v, double* om) noexcept nogil:
    cdef double vprev[3]
    cdef double oprev[3]
    cdef double pprev[3]
    cdef double d[3]
    cdef double tmp[3]
    cdef int i, k
    for k in range(3):
        vprev[k] = oprev[k] = pprev[k] = 0.0
    for i in range(n):
        for k in range(3):
            d[k] = p[3 * i + k] - pprev[k]
        _cross(oprev, d, tmp)
        for k in range(3):
            v[3 * i + k] = vprev[k] + tmp[k]
            om[3 * i + k] = oprev[k]
        if jtype[i] == 0:
            for k in range(3):
                om[3 * i + k] += w[3 * i + k] * dq[i]
        else:
            for k in range(3):
                v[3 * i + k] += w[3 * i + k] * dq[i]
        for k in range(3):
            vprev[k] = v[3 * i + k]
            oprev[k] = om[3 * i + k]
            pprev[k] = p[3 * i + k]


cdef void _acc(int n, const int* jtype, const double* w, const double* p,
               const double* om, const double* dq, const double* ddq,
               const double* a0, double* a, double* do_) noexcept nogil:
    cdef double aprev[3]
    cdef double dprev[3]
    cdef double oprev[3]
    cdef double pprev[3]
    cdef double d[3]
    cdef double t1[3]
    cdef double t2[3]
    cdef double wq[3]
    cdef int i, k
    for k in range(3):
        aprev[k] = a0[k]
        dprev[k] = oprev[k] = pprev[k] = 0.0
    for i in range(n):
        for k in range(3):
            d[k] = p[3 * i + k] - pprev[k]
        _cross(dprev, d, t1)
        _cross(oprev, d, t2)
        _cross(oprev, t2, t2)  # centripetal
        for k in range(3):
            a[3 * i + k] = aprev[k] + t1[k] + t2[k]
            do_[3 * i + k] = dprev[k]
        if jtype[i] == 0:
            for k in range(3):
                wq[k] = w[3 * i + k] * dq[i]
            _cross(oprev, wq, t1)
            for k in range(3):
                do_[3 * i + k] += w[3 * i + k] * ddq[i] + t1[k]
        else:
            for k in range(3):
                wq[k] = w[3 * i + k] * dq[i]
            _cross(oprev, wq, t1)
            for k in range(3):
                a[3 * i + k] += 2.0 * t1[k] + w[3 * i + k] * ddq[i]
        for k in range(3):
            aprev[k] = a[3 * i + k]
            dprev[k] = do_[3 * i + k]
            oprev[k] = om[3 * i + k]
            pprev[k] = p[3 * i + k]


cdef void _rnea_core(int n, const int* jtype, const double* axis, const double* fr,
                     const double* fp, const double* mass, const double* com,
                     const double* inertia, const double* gravity,
                     const double* q, const double* dq, const double* ddq,
                     double* R, double* p, double* w, double* scratch,
                     double* tau) noexcept nogil:
    # scratch layout: v(3n) om(3n) a(3n) do(3n) F(3n) N(3n) c(3n)
    cdef double* v = scratch
    cdef double* om = scratch + 3 * n
    cdef double* a = scratch + 6 * n
    cdef double* do_ = scratch + 9 * n
    cdef double* F = scratch + 12 * n
    cdef double* N = scratch + 15 * n
    cdef double* c = scratch + 18 * n
    cdef double a0[3]
    cdef double r[3]
    cdef double ac[3]
    cdef double t1[3]
    cdef double t2[3]
    cdef double Iw[9]
    cdef double Rt[9]
    cdef double f[3]
    cdef double nm[3]
    cdef double pprev[3]
    cdef int i, k
    _fk(n, jtype, axis, fr, fp, q, R, p, w)
    _vel(n, jtype, w, p, dq, v, om)
    for k in range(3):
        a0[k] = -gravity[k]
    _acc(n, jtype, w, p, om, dq, ddq, a0, a, do_)
    for i in range(n):
        _mv3(R + 9 * i, com + 3 * i, r)
        for k in range(3):
            c[3 * i + k] = p[3 * i + k] + r[k]
        _cross(do_ + 3 * i, r, t1)
        _cross(om + 3 * i, r, t2)
        _cross(om + 3 * i, t2, t2)
        for k in range(3):
            ac[k] = a[3 * i + k] + t1[k] + t2[k]
            F[3 * i + k] = mass[i] * ac[k]
        # Iw = R I R^T
        _mm3(R + 9 * i, inertia + 9 * i, Rt)
        _mmt3(Rt, R + 9 * i, Iw)
        _mv3(Iw, do_ + 3 * i, t1)
        _mv3(Iw, om + 3 * i, t2)
        _cross(om + 3 * i, t2, t2)
        for k in range(3):
            N[3 * i + k] = t1[k] + t2[k]
    for k in range(3):
        f[k] = nm[k] = 0.0
    for i in range(n - 1, -1, -1):
        for k in range(3):
            r[k] = c[3 * i + k] - p[3 * i + k]
        _cross(r, F + 3 * i, t1)
        for k in range(3):
            nm[k] += N[3 * i + k] + t1[k]
            f[k] += F[3 * i + k]
        if jtype[i] == 0:
            tau[i] = _dot3(w + 3 * i, nm)
        else:
            tau[i] = _dot3(w + 3 * i, f)
        if i > 0:
            for k in range(3):
                pprev[k] = p[3 * (i - 1) + k]
        else:
            for k in range(3):
                pprev[k] = 0.0
        for k in range(3):
            r[k] = p[3 * i + k] - pprev[k]
        _cross(r, f, t1)
        for k in range(3):
            nm[k] += t1[k]


cdef void _crba_core(int n, const int* jtype, const double* axis, const double* fr,
                     const double* fp, const double* mass, const double* com,
                     const double* inertia, const double* q,
                     double* R, double* p, double* w, double* scratch,
                     double* M) noexcept nogil:
    # scratch layout: mc(n) cc(3n) Ic(9n)
    cdef double* mc = scratch
    cdef double* cc = scratch + n
    cdef double* Ic = scratch + 4 * n
    cdef double r[3]
    cdef double ci[3]
    cdef double Iw[9]
    cdef double Rt[9]
    cdef double d1[3]
    cdef double d2[3]
    cdef double Fi[3]
    cdef double Ni[3]
    cdef double arm[3]
    cdef double t1[3]
    cdef double m2, m, dd1, dd2
    cdef int i, j, k, l
    _fk(n, jtype, axis, fr, fp, q, R, p, w)
    for i in range(n - 1, -1, -1):
        _mv3(R + 9 * i, com + 3 * i, r)
        for k in range(3):
            ci[k] = p[3 * i + k] + r[k]
        _mm3(R + 9 * i, inertia + 9 * i, Rt)
        _mmt3(Rt, R + 9 * i, Iw)
        if i == n - 1:
            mc[i] = mass[i]
            for k in range(3):
                cc[3 * i + k] = ci[k]
            for k in range(9):
                Ic[9 * i + k] = Iw[k]
        else:
            m2 = mc[i + 1]
            m = mass[i] + m2
            for k in range(3):
                cc[3 * i + k] = (mass[i] * ci[k] + m2 * cc[3 * (i + 1) + k]) / m
                d1[k] = ci[k] - cc[3 * i + k]
                d2[k] = cc[3 * (i + 1) + k] - cc[3 * i + k]
            dd1 = _dot3(d1, d1)
            dd2 = _dot3(d2, d2)
            for k in range(3):
                for l in range(3):
                    Ic[9 * i + 3 * k + l] = (
                        Iw[3 * k + l]
                        + mass[i] * ((dd1 if k == l else 0.0) - d1[k] * d1[l])
                        + Ic[9 * (i + 1) + 3 * k + l]
                        + m2 * ((dd2 if k == l else 0.0) - d2[k] * d2[l])
                    )
            mc[i] = m
    for i in range(n):
        for k in range(3):
            arm[k] = cc[3 * i + k] - p[3 * i + k]
        if jtype[i] == 0:
            _cross(w + 3 * i, arm, t1)
            for k in range(3):
                Fi[k] = mc[i] * t1[k]
            _mv3(Ic + 9 * i, w + 3 * i, Ni)
            _cross(arm, Fi, t1)
            for k in range(3):
                Ni[k] += t1[k]
        else:
            for k in range(3):
                Fi[k] = mc[i] * w[3 * i + k]
            _cross(arm, Fi, Ni)
        for j in range(i, -1, -1):
            if jtype[j] == 0:
                for k in range(3):
                    d1[k] = p[3 * i + k] - p[3 * j + k]
                _cross(d1, Fi, t1)
                for k in range(3):
                    t1[k] += Ni[k]
                M[j * n + i] = _dot3(w + 3 * j, t1)
            else:
                M[j * n + i] = _dot3(w + 3 * j, Fi)
            M[i * n + j] = M[j * n + i]


# ---------------------------------------------------------------------------
# python-visible wrappers
# ---------------------------------------------------------------------------

cdef class _Arm:
    """Borrowed views over a chain's packed arrays."""
    cdef int n
    cdef const int[::1] jtype
    cdef const double[:, ::1] axis, fp, com, ee_r
    cdef const double[:, :, ::1] fr, inertia
    cdef const double[::1] mass, ee_p, gravity
    cdef object _keepalive

    def __cinit__(self, data):
        self.n = data.n
        self.jtype = data.jtype
        self.axis = data.axis
        self.fp = data.fp
        self.com = data.com
        self.fr = data.fr
        self.inertia = data.inertia
        self.mass = data.mass
        self.ee_r = data.ee_r
        self.ee_p = data.ee_p
        self.gravity = data.gravity
        self._keepalive = data


def fk_links(data, q):
    cdef _Arm arm = _Arm(data)
    cdef cnp.ndarray[double, ndim=1] qq = np.ascontiguousarray(q, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=3] R = np.empty((arm.n, 3, 3))
    cdef cnp.ndarray[double, ndim=2] p = np.empty((arm.n, 3))
    cdef cnp.ndarray[double, ndim=2] w = np.empty((arm.n, 3))
    _fk(arm.n, &arm.jtype[0], &arm.axis[0, 0], &arm.fr[0, 0, 0], &arm.fp[0, 0],
        &qq[0], &R[0, 0, 0], &p[0, 0], &w[0, 0])
    return R, p, w


def fk_ee(data, q):
    cdef _Arm arm = _Arm(data)
    R, p, w = fk_links(data, q)
    cdef cnp.ndarray[double, ndim=2] Rl = np.ascontiguousarray(R[arm.n - 1])
    cdef cnp.ndarray[double, ndim=2] Re = np.empty((3, 3))
    cdef cnp.ndarray[double, ndim=1] pe = np.empty(3)
    cdef double tmp[3]
    _mm3(&Rl[0, 0], &arm.ee_r[0, 0], &Re[0, 0])
    _mv3(&Rl[0, 0], &arm.ee_p[0], tmp)
    pe[0] = p[arm.n - 1, 0] + tmp[0]
    pe[1] = p[arm.n - 1, 1] + tmp[1]
    pe[2] = p[arm.n - 1, 2] + tmp[2]
    return Re, pe


def jacobian(data, q):
    cdef _Arm arm = _Arm(data)
    cdef cnp.ndarray[double, ndim=1] qq = np.ascontiguousarray(q, dtype=np.float64)
    cdef int n = arm.n
    cdef cnp.ndarray[double, ndim=3] R = np.empty((n, 3, 3))
    cdef cnp.ndarray[double, ndim=2] p = np.empty((n, 3))
    cdef cnp.ndarray[double, ndim=2] w = np.empty((n, 3))
    cdef cnp.ndarray[double, ndim=2] J = np.zeros((6, n))
    cdef double p_ee[3]
    cdef double d[3]
    cdef double t[3]
    cdef int i, k
    _fk(n, &arm.jtype[0], &arm.axis[0, 0], &arm.fr[0, 0, 0], &arm.fp[0, 0],
        &qq[0], &R[0, 0, 0], &p[0, 0], &w[0, 0])
    _mv3(&R[n - 1, 0, 0], &arm.ee_p[0], t)
    for k in range(3):
        p_ee[k] = p[n - 1, k] + t[k]
    for i in range(n):
        if arm.jtype[i] == 0:
            for k in range(3):
                d[k] = p_ee[k] - p[i, k]
            _cross(&w[i, 0], d, t)
            for k in range(3):
                J[k, i] = t[k]
                J[3 + k, i] = w[i, k]
        else:
            for k in range(3):
                J[k, i] = w[i, k]
    return J


def ee_velocity(data, q, dq):
    cdef _Arm arm = _Arm(data)
    cdef cnp.ndarray[double, ndim=1] qq = np.ascontiguousarray(q, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] dqq = np.ascontiguousarray(dq, dtype=np.float64)
    cdef int n = arm.n
    cdef cnp.ndarray[double, ndim=3] R = np.empty((n, 3, 3))
    cdef cnp.ndarray[double, ndim=2] p = np.empty((n, 3))
    cdef cnp.ndarray[double, ndim=2] w = np.empty((n, 3))
    cdef cnp.ndarray[double, ndim=2] v = np.empty((n, 3))
    cdef cnp.ndarray[double, ndim=2] om = np.empty((n, 3))
    cdef cnp.ndarray[double, ndim=1] out = np.empty(6)
    cdef double r[3]
    cdef double t[3]
    cdef int k
    _fk(n, &arm.jtype[0], &arm.axis[0, 0], &arm.fr[0, 0, 0], &arm.fp[0, 0],
        &qq[0], &R[0, 0, 0], &p[0, 0], &w[0, 0])
    _vel(n, &arm.jtype[0], &w[0, 0], &p[0, 0], &dqq[0], &v[0, 0], &om[0, 0])
    _mv3(&R[n - 1, 0, 0], &arm.ee_p[0], r)
    _cross(&om[n - 1, 0], r, t)
    for k in range(3):
        out[k] = v[n - 1, k] + t[k]
        out[3 + k] = om[n - 1, k]
    return out


def jdot_qdot(data, q, dq):
    cdef _Arm arm = _Arm(data)
    cdef cnp.ndarray[double, ndim=1] qq = np.ascontiguousarray(q, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] dqq = np.ascontiguousarray(dq, dtype=np.float64)
    cdef int n = arm.n
    cdef cnp.ndarray[double, ndim=3] R = np.empty((n, 3, 3))
    cdef cnp.ndarray[double, ndim=2] p = np.empty((n, 3))
    cdef cnp.ndarray[double, ndim=2] w = np.empty((n, 3))
    cdef cnp.ndarray[double, ndim=2] v = np.empty((n, 3))
    cdef cnp.ndarray[double, ndim=2] om = np.empty((n, 3))
    cdef cnp.ndarray[double, ndim=2] a = np.empty((n, 3))
    cdef cnp.ndarray[double, ndim=2] do_ = np.empty((n, 3))
    cdef cnp.ndarray[double, ndim=1] zeros = np.zeros(n)
    cdef cnp.ndarray[double, ndim=1] out = np.empty(6)
    cdef double a0[3]
    cdef double r[3]
    cdef double t1[3]
    cdef double t2[3]
    cdef int k
    a0[0] = a0[1] = a0[2] = 0.0
    _fk(n, &arm.jtype[0], &arm.axis[0, 0], &arm.fr[0, 0, 0], &arm.fp[0, 0],
        &qq[0], &R[0, 0, 0], &p[0, 0], &w[0, 0])
    _vel(n, &arm.jtype[0], &w[0, 0], &p[0, 0], &dqq[0], &v[0, 0], &om[0, 0])
    _acc(n, &arm.jtype[0], &w[0, 0], &p[0, 0], &om[0, 0], &dqq[0], &zeros[0],
         a0, &a[0, 0], &do_[0, 0])
    _mv3(&R[n - 1, 0, 0], &arm.ee_p[0], r)
    _cross(&do_[n - 1, 0], r, t1)
    _cross(&om[n - 1, 0], r, t2)
    _cross(&om[n - 1, 0], t2, t2)
    for k in range(3):
        out[k] = a[n - 1, k] + t1[k] + t2[k]
        out[3 + k] = do_[n - 1, k]
    return out


def rnea(data, q, dq, ddq, gravity=None):
    cdef _Arm arm = _Arm(data)
    cdef cnp.ndarray[double, ndim=1] qq = np.ascontiguousarray(q, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] dqq = np.ascontiguousarray(dq, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] dd = np.ascontiguousarray(ddq, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] grav = np.ascontiguousarray(
        data.gravity if gravity is None else gravity, dtype=np.float64)
    cdef int n = arm.n
    cdef cnp.ndarray[double, ndim=3] R = np.empty((n, 3, 3))
    cdef cnp.ndarray[double, ndim=2] p = np.empty((n, 3))
    cdef cnp.ndarray[double, ndim=2] w = np.empty((n, 3))
    cdef cnp.ndarray[double, ndim=1] scratch = np.empty(21 * n)
    cdef cnp.ndarray[double, ndim=1] tau = np.empty(n)
    _rnea_core(n, &arm.jtype[0], &arm.axis[0, 0], &arm.fr[0, 0, 0], &arm.fp[0, 0],
               &arm.mass[0], &arm.com[0, 0], &arm.inertia[0, 0, 0], &grav[0],
               &qq[0], &dqq[0], &dd[0], &R[0, 0, 0], &p[0, 0], &w[0, 0],
               &scratch[0], &tau[0])
    return tau


def mass_matrix(data, q):
    cdef _Arm arm = _Arm(data)
    cdef cnp.ndarray[double, ndim=1] qq = np.ascontiguousarray(q, dtype=np.float64)
    cdef int n = arm.n
    cdef cnp.ndarray[double, ndim=3] R = np.empty((n, 3, 3))
    cdef cnp.ndarray[double, ndim=2] p = np.empty((n, 3))
    cdef cnp.ndarray[double, ndim=2] w = np.empty((n, 3))
    cdef cnp.ndarray[double, ndim=1] scratch = np.empty(13 * n)
    cdef cnp.ndarray[double, ndim=2] M = np.empty((n, n))
    _crba_core(n, &arm.jtype[0], &arm.axis[0, 0], &arm.fr[0, 0, 0], &arm.fp[0, 0],
               &arm.mass[0], &arm.com[0, 0], &arm.inertia[0, 0, 0],
               &qq[0], &R[0, 0, 0], &p[0, 0], &w[0, 0], &scratch[0], &M[0, 0])
    return M


# ---------------------------------------------------------------------------
# fused world integrator
# ---------------------------------------------------------------------------

cdef int _arm_substep(_Arm arm, double* q, double* dq, const double* tau,
                      const double* f_ee, const double* gravity, double dt,
                      double* R, double* p, double* w, double* scratch,
                      double* M, double* h, double* rhs) noexcept nogil:
    # scratch must hold max(21n, 13n) doubles = 21n
    cdef int n = arm.n
    cdef int i, j, k
    cdef double J[6]
    _rnea_core(n, &arm.jtype[0], &arm.axis[0, 0], &arm.fr[0, 0, 0], &arm.fp[0, 0],
               &arm.mass[0], &arm.com[0, 0], &arm.inertia[0, 0, 0], gravity,
               q, dq, rhs, R, p, w, scratch, h)  # rhs holds zeros on entry
    _crba_core(n, &arm.jtype[0], &arm.axis[0, 0], &arm.fr[0, 0, 0], &arm.fp[0, 0],
               &arm.mass[0], &arm.com[0, 0], &arm.inertia[0, 0, 0],
               q, R, p, w, scratch, M)
    # rhs = tau - h + J^T f_ee, with the jacobian built column-wise in place
    cdef double p_ee[3]
    cdef double d[3]
    cdef double t[3]
    _mv3(R + 9 * (n - 1), &arm.ee_p[0], t)
    for k in range(3):
        p_ee[k] = p[3 * (n - 1) + k] + t[k]
    for i in range(n):
        if arm.jtype[i] == 0:
            for k in range(3):
                d[k] = p_ee[k] - p[3 * i + k]
            _cross(w + 3 * i, d, t)
            rhs[i] = tau[i] - h[i]
            for k in range(3):
                rhs[i] += t[k] * f_ee[k] + w[3 * i + k] * f_ee[3 + k]
        else:
            rhs[i] = tau[i] - h[i]
            for k in range(3):
                rhs[i] += w[3 * i + k] * f_ee[k]
    if _chol_solve(M, rhs, n) != 0:
        return -1
    # semi-implicit Euler
    for i in range(n):
        dq[i] += rhs[i] * dt
        q[i] += dq[i] * dt
    return 0


def world_substeps(dataL, dataR, qL, dqL, qR, dqR, tauL, tauR,
                   has_object, obj_mass, obj_inertia, obj_p, obj_q, obj_v, obj_w,
                   grasp_p, grasp_q, off_p, off_q, engaged, coupling,
                   gravity, dt, nsub):
    cdef _Arm armL = _Arm(dataL)
    cdef _Arm armR = _Arm(dataR)
    cdef int nL = armL.n, nR = armR.n
    cdef int nmax = nL if nL > nR else nR
    cdef cnp.ndarray[double, ndim=1] qL_ = np.array(qL, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] dqL_ = np.array(dqL, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] qR_ = np.array(qR, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] dqR_ = np.array(dqR, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] tauL_ = np.ascontiguousarray(tauL, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] tauR_ = np.ascontiguousarray(tauR, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] obj_I = np.ascontiguousarray(obj_inertia, dtype=np.float64) if has_object else np.eye(3)
    cdef cnp.ndarray[double, ndim=1] op = np.array(obj_p, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] oq = np.array(obj_q, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] ov = np.array(obj_v, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] ow = np.array(obj_w, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] gp = np.ascontiguousarray(grasp_p, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] gq = np.ascontiguousarray(grasp_q, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] fp_ = np.ascontiguousarray(off_p, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] fq = np.ascontiguousarray(off_q, dtype=np.float64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] eng = np.array(engaged, dtype=np.uint8)
    cdef cnp.ndarray[double, ndim=2] cpl = np.ascontiguousarray(coupling, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] grav = np.ascontiguousarray(gravity, dtype=np.float64)
    cdef double dt_ = float(dt)
    cdef int nsub_ = int(nsub)
    cdef int hasobj = 1 if has_object else 0
    cdef double m_obj = float(obj_mass) if has_object else 1.0

    cdef cnp.ndarray[double, ndim=2] wrench_out = np.zeros((2, 6))
    cdef cnp.ndarray[double, ndim=1] impulse = np.zeros(3)
    # scratch buffers shared across substeps
    cdef cnp.ndarray[double, ndim=1] Rbuf = np.empty(9 * nmax)
    cdef cnp.ndarray[double, ndim=1] pbuf = np.empty(3 * nmax)
    cdef cnp.ndarray[double, ndim=1] wbuf = np.empty(3 * nmax)
    cdef cnp.ndarray[double, ndim=1] vbuf = np.empty(3 * nmax)
    cdef cnp.ndarray[double, ndim=1] ombuf = np.empty(3 * nmax)
    cdef cnp.ndarray[double, ndim=1] scratch = np.empty(21 * nmax)
    cdef cnp.ndarray[double, ndim=1] Mbuf = np.empty(nmax * nmax)
    cdef cnp.ndarray[double, ndim=1] hbuf = np.empty(nmax)
    cdef cnp.ndarray[double, ndim=1] rhsbuf = np.empty(nmax)

    cdef double Robj[9]
    cdef double f_obj[3]
    cdef double t_obj[3]
    cdef double f_eeL[6]
    cdef double f_eeR[6]
    cdef double* f_ee
    cdef double Re[9]
    cdef double Rh[9]
    cdef double Rw[9]
    cdef double Rrel[9]
    cdef double Rg[9]
    cdef double Ro[9]
    cdef double p_ee[3]
    cdef double v_ee[3]
    cdef double om_ee[3]
    cdef double p_h[3]
    cdef double v_h[3]
    cdef double p_w[3]
    cdef double v_w[3]
    cdef double e_lin[3]
    cdef double e_ang[3]
    cdef double F[3]
    cdef double T[3]
    cdef double t1[3]
    cdef double t2[3]
    cdef double acc[3]
    cdef double ob[3]
    cdef double tb[3]
    cdef double dob[3]
    cdef double Ib[9]
    cdef double rv[3]
    cdef double qrot[4]
    cdef double qnew[4]
    cdef double qn
    cdef int step, k, s, n_k, fail
    cdef _Arm arm
    cdef double* qp
    cdef double* dqp
    cdef double* taup

    fail = 0
    for step in range(nsub_):
        _quat_to_mat(&oq[0], Robj)
        for k in range(3):
            f_obj[k] = t_obj[k] = 0.0
        for k in range(6):
            f_eeL[k] = f_eeR[k] = 0.0
        for s in range(2):
            if s == 0:
                arm = armL
                qp = &qL_[0]
                dqp = &dqL_[0]
                f_ee = f_eeL
            else:
                arm = armR
                qp = &qR_[0]
                dqp = &dqR_[0]
                f_ee = f_eeR
            if not (hasobj and eng[s]):
                wrench_out[s, 0] = 0.0
                wrench_out[s, 1] = 0.0
                wrench_out[s, 2] = 0.0
                wrench_out[s, 3] = 0.0
                wrench_out[s, 4] = 0.0
                wrench_out[s, 5] = 0.0
                continue
            n_k = arm.n
            _fk(n_k, &arm.jtype[0], &arm.axis[0, 0], &arm.fr[0, 0, 0], &arm.fp[0, 0],
                qp, &Rbuf[0], &pbuf[0], &wbuf[0])
            _vel(n_k, &arm.jtype[0], &wbuf[0], &pbuf[0], dqp, &vbuf[0], &ombuf[0])
            _mm3(&Rbuf[9 * (n_k - 1)], &arm.ee_r[0, 0], Re)
            _mv3(&Rbuf[9 * (n_k - 1)], &arm.ee_p[0], t1)
            for k in range(3):
                p_ee[k] = pbuf[3 * (n_k - 1) + k] + t1[k]
                om_ee[k] = ombuf[3 * (n_k - 1) + k]
            _cross(om_ee, t1, t2)
            for k in range(3):
                v_ee[k] = vbuf[3 * (n_k - 1) + k] + t2[k]
            # hand anchor
            _quat_to_mat(&fq[s, 0], Ro)
            _mm3(Re, Ro, Rh)
            _mv3(Re, &fp_[s, 0], t1)
            for k in range(3):
                p_h[k] = p_ee[k] + t1[k]
            _cross(om_ee, t1, t2)
            for k in range(3):
                v_h[k] = v_ee[k] + t2[k]
            # object anchor
            _quat_to_mat(&gq[s, 0], Rg)
            _mm3(Robj, Rg, Rw)
            _mv3(Robj, &gp[s, 0], t1)
            for k in range(3):
                p_w[k] = op[k] + t1[k]
            _cross(&ow[0], t1, t2)
            for k in range(3):
                v_w[k] = ov[k] + t2[k]
                e_lin[k] = p_h[k] - p_w[k]
            if sqrt(_dot3(e_lin, e_lin)) > cpl[s, 4]:
                eng[s] = 0
                for k in range(6):
                    wrench_out[s, k] = 0.0
                continue
            _mmt3(Rh, Rw, Rrel)
            _mat_rotvec(Rrel, e_ang)
            for k in range(3):
                F[k] = cpl[s, 0] * e_lin[k] + cpl[s, 2] * (v_h[k] - v_w[k])
                T[k] = cpl[s, 1] * e_ang[k] + cpl[s, 3] * (om_ee[k] - ow[k])
            for k in range(3):
                f_obj[k] += F[k]
            for k in range(3):
                t1[k] = p_w[k] - op[k]
            _cross(t1, F, t2)
            for k in range(3):
                t_obj[k] += T[k] + t2[k]
            # reaction on arm at EE origin
            for k in range(3):
                t1[k] = p_h[k] - p_ee[k]
                f_ee[k] = -F[k]
            _cross(t1, f_ee, t2)
            for k in range(3):
                f_ee[3 + k] = -T[k] + t2[k]
            for k in range(6):
                wrench_out[s, k] = f_ee[k]
        for s in range(2):
            if s == 0:
                arm = armL
                qp = &qL_[0]
                dqp = &dqL_[0]
                taup = &tauL_[0]
                f_ee = f_eeL
            else:
                arm = armR
                qp = &qR_[0]
                dqp = &dqR_[0]
                taup = &tauR_[0]
                f_ee = f_eeR
            for k in range(arm.n):
                rhsbuf[k] = 0.0
            if _arm_substep(arm, qp, dqp, taup, f_ee, &grav[0], dt_, &Rbuf[0], &pbuf[0],
                            &wbuf[0], &scratch[0], &Mbuf[0], &hbuf[0], &rhsbuf[0]) != 0:
                fail = 1
        if fail:
            break
        if hasobj:
            for k in range(3):
                acc[k] = f_obj[k] / m_obj + grav[k]
            _mtv3(Robj, &ow[0], ob)
            _mtv3(Robj, t_obj, tb)
            _mv3(&obj_I[0, 0], ob, t1)
            _cross(ob, t1, t2)
            for k in range(3):
                dob[k] = tb[k] - t2[k]
            for k in range(9):
                Ib[k] = obj_I[k // 3, k % 3]
            if _chol_solve(Ib, dob, 3) != 0:
                fail = 1
                break
            _mv3(Robj, dob, t1)
            for k in range(3):
                ov[k] += acc[k] * dt_
                ow[k] += t1[k] * dt_
                op[k] += ov[k] * dt_
            for k in range(3):
                rv[k] = ow[k] * dt_
            _quat_from_rotvec(rv, qrot)
            _quat_mul(qrot, &oq[0], qnew)
            qn = sqrt(qnew[0] * qnew[0] + qnew[1] * qnew[1] + qnew[2] * qnew[2] + qnew[3] * qnew[3])
            for k in range(4):
                oq[k] = qnew[k] / qn
            for k in range(3):
                impulse[k] += f_obj[k] * dt_

    if fail:
        # surface the fault through non-finite state; the wrapper raises
        qL_[:] = np.nan
    return (qL_, dqL_, qR_, dqR_, op, oq, ov, ow, eng,
            wrench_out[0].copy(), wrench_out[1].copy(), impulse)
