# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: fixed-step RK4 for the Jacobi, Riccati and
surface-of-revolution geodesic equations, and greedy SL(2,R) reduction.

Every function here has a line-for-line twin in ``_pykernels``; the two
are kept behaviourally identical so the test-suite can run against either.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport cosh, sinh, sqrt, fabs

cnp.import_array()


def jacobi_rk4(double[::1] kvals, double h, double[:, ::1] y0):
    """Integrate y' = [[0, 1], [-K, 0]] y for a 2 x m block of columns.

    ``kvals`` holds K at t0, t0 + h/2, t0 + h, ... (length 2n + 1).
    Returns an array of shape (n + 1, 2, m).
    """
    cdef Py_ssize_t n = (kvals.shape[0] - 1) // 2
    cdef Py_ssize_t m = y0.shape[1]
    out_arr = np.empty((n + 1, 2, m), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double a, b, k0, k1, k2
    cdef double a1, b1, a2, b2, a3, b3, a4, b4
    for j in range(m):
        out[0, 0, j] = y0[0, j]
        out[0, 1, j] = y0[1, j]
    for i in range(n):
        k0 = kvals[2 * i]
        k1 = kvals[2 * i + 1]
        k2 = kvals[2 * i + 2]
        for j in range(m):
            a = out[i, 0, j]
            b = out[i, 1, j]
            a1 = b
            b1 = -k0 * a
            a2 = b + 0.5 * h * b1
            b2 = -k1 * (a + 0.5 * h * a1)
            a3 = b + 0.5 * h * b2
            b3 = -k1 * (a + 0.5 * h * a2)
            a4 = b + h * b3
            b4 = -k2 * (a + h * a3)
            out[i + 1, 0, j] = a + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            out[i + 1, 1, j] = b + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
    return out_arr


def riccati_rk4(double[::1] kvals, double h, double u0, double ceiling):
    """Integrate U' = -U^2 - K together with I' = U.

    Returns (U samples, cumulative integral samples, blow-up index or -1).
    Integration stops at the first sample whose |U| exceeds ``ceiling``.
    """
    cdef Py_ssize_t n = (kvals.shape[0] - 1) // 2
    u_arr = np.full(n + 1, np.nan, dtype=np.float64)
    i_arr = np.full(n + 1, np.nan, dtype=np.float64)
    cdef double[::1] u = u_arr
    cdef double[::1] integ = i_arr
    cdef Py_ssize_t i
    cdef Py_ssize_t blow = -1
    cdef double x, k0, k1, k2, c1, c2, c3, c4
    u[0] = u0
    integ[0] = 0.0
    for i in range(n):
        x = u[i]
        k0 = kvals[2 * i]
        k1 = kvals[2 * i + 1]
        k2 = kvals[2 * i + 2]
        c1 = -x * x - k0
        c2 = -(x + 0.5 * h * c1) * (x + 0.5 * h * c1) - k1
        c3 = -(x + 0.5 * h * c2) * (x + 0.5 * h * c2) - k1
        c4 = -(x + h * c3) * (x + h * c3) - k2
        u[i + 1] = x + h / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
        # the integral stage values are the U stages themselves
        integ[i + 1] = integ[i] + h / 6.0 * (
            x + 2.0 * (x + 0.5 * h * c1) + 2.0 * (x + 0.5 * h * c2) + (x + h * c3))
        if not (fabs(u[i + 1]) <= ceiling):
            blow = i + 1
            break
    return u_arr, i_arr, blow


cdef inline void _rev_profile(double[::1] c, double u, double* r, double* rp) noexcept nogil:
    cdef Py_ssize_t k
    cdef double s = 0.0, sp = 0.0
    for k in range(c.shape[0]):
        s += c[k] * cosh(k * u)
        sp += c[k] * k * sinh(k * u)
    r[0] = s
    rp[0] = sp


cdef inline void _rev_rhs(double[::1] c, double* y, double* dy) noexcept nogil:
    cdef double r, rp
    _rev_profile(c, y[0], &r, &rp)
    dy[0] = y[2]
    dy[1] = y[3] / (r * r)
    dy[2] = y[3] * y[3] * rp / (r * r * r)
    dy[3] = 0.0


def revolution_orbit(double[::1] coeffs, double[::1] y0, double h,
                     Py_ssize_t nsteps, double umin, double umax):
    """Geodesics of du^2 + r(u)^2 dtheta^2 in canonical variables.

    State is (u, theta, p_u, p_theta); r(u) = sum_k coeffs[k] cosh(k u).
    After each step the energy drift |p_u^2 + p_theta^2 / r^2 - 1| / 2 is
    recorded, then p_u is rescaled (sign kept) to restore unit speed;
    p_theta is never touched, so the Clairaut integral is exact.

    Returns (orbit (nsteps+1, 4), exit index or -1, max drift per step).
    """
    orbit_arr = np.full((nsteps + 1, 4), np.nan, dtype=np.float64)
    cdef double[:, ::1] orb = orbit_arr
    cdef double y[4]
    cdef double t[4]
    cdef double d1[4]
    cdef double d2[4]
    cdef double d3[4]
    cdef double d4[4]
    cdef Py_ssize_t i, j
    cdef Py_ssize_t exit_index = -1
    cdef double drift = 0.0, e, r, rp, rest
    for j in range(4):
        y[j] = y0[j]
        orb[0, j] = y0[j]
    for i in range(nsteps):
        _rev_rhs(coeffs, y, d1)
        for j in range(4):
            t[j] = y[j] + 0.5 * h * d1[j]
        _rev_rhs(coeffs, t, d2)
        for j in range(4):
            t[j] = y[j] + 0.5 * h * d2[j]
        _rev_rhs(coeffs, t, d3)
        for j in range(4):
            t[j] = y[j] + h * d3[j]
        _rev_rhs(coeffs, t, d4)
        for j in range(4):
            y[j] = y[j] + h / 6.0 * (d1[j] + 2.0 * d2[j] + 2.0 * d3[j] + d4[j])
        _rev_profile(coeffs, y[0], &r, &rp)
        e = 0.5 * fabs(y[2] * y[2] + y[3] * y[3] / (r * r) - 1.0)
        if e > drift:
            drift = e
        rest = 1.0 - y[3] * y[3] / (r * r)
        if rest > 0.0:
            if y[2] >= 0.0:
                y[2] = sqrt(rest)
            else:
                y[2] = -sqrt(rest)
        for j in range(4):
            orb[i + 1, j] = y[j]
        if y[0] < umin or y[0] > umax:
            exit_index = i + 1
            break
    return orbit_arr, exit_index, drift


def sl2_reduce(double[:, :, ::1] g, double[:, :, ::1] gens, Py_ssize_t max_iter):
    """Greedy Frobenius-norm reduction of a batch of 2x2 matrices.

    Repeatedly left-multiplies by the generator giving the largest norm
    decrease; stops when no generator decreases the norm.
    Returns (reduced batch, number of multiplications per matrix).
    """
    cdef Py_ssize_t nb = g.shape[0], ng = gens.shape[0]
    out_arr = np.array(g, dtype=np.float64, copy=True)
    cnt_arr = np.zeros(nb, dtype=np.int64)
    cdef double[:, :, ::1] out = out_arr
    cdef long long[::1] cnt = cnt_arr
    cdef Py_ssize_t b, k, it, best
    cdef double nbest = 0.0, bp = 0.0, bq = 0.0, br = 0.0, bs = 0.0
    cdef double n0, nb_, a, bb, c, d, p, q, r, s
    for b in range(nb):
        for it in range(max_iter):
            a = out[b, 0, 0]
            bb = out[b, 0, 1]
            c = out[b, 1, 0]
            d = out[b, 1, 1]
            n0 = a * a + bb * bb + c * c + d * d
            best = -1
            nbest = n0 * (1.0 - 1e-12)
            for k in range(ng):
                p = gens[k, 0, 0] * a + gens[k, 0, 1] * c
                q = gens[k, 0, 0] * bb + gens[k, 0, 1] * d
                r = gens[k, 1, 0] * a + gens[k, 1, 1] * c
                s = gens[k, 1, 0] * bb + gens[k, 1, 1] * d
                nb_ = p * p + q * q + r * r + s * s
                if nb_ < nbest:
                    nbest = nb_
                    best = k
                    bp = p
                    bq = q
                    br = r
                    bs = s
            if best < 0:
                break
            out[b, 0, 0] = bp
            out[b, 0, 1] = bq
            out[b, 1, 0] = br
            out[b, 1, 1] = bs
            cnt[b] += 1
    return out_arr, cnt_arr
