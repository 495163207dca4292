"""Pure-Python/numpy twins of the compiled kernels in ``_kernels.pyx``.

Selected automatically when the extension is unavailable, or on request
through the ``CURVLAB_PURE_PYTHON`` environment variable.  Semantics match
the compiled versions exactly (same stage ordering, same stopping rules).
"""

import math

import numpy as np


def jacobi_rk4(kvals, h, y0):
    kvals = np.ascontiguousarray(kvals, dtype=np.float64)
    y0 = np.ascontiguousarray(y0, dtype=np.float64)
    n = (kvals.shape[0] - 1) // 2
    out = np.empty((n + 1, 2, y0.shape[1]))
    out[0] = y0
    a = y0[0].copy()
    b = y0[1].copy()
    for i in range(n):
        k0, k1, k2 = kvals[2 * i], kvals[2 * i + 1], kvals[2 * i + 2]
        a1 = b
        b1 = -k0 * a
        a2 = b + 0.5 * h * b1
        b2 = -k1 * (a + 0.5 * h * a1)
        a3 = b + 0.5 * h * b2
        b3 = -k1 * (a + 0.5 * h * a2)
        a4 = b + h * b3
        b4 = -k2 * (a + h * a3)
        a = a + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        b = b + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        out[i + 1, 0] = a
        out[i + 1, 1] = b
    return out


def riccati_rk4(kvals, h, u0, ceiling):
    kvals = np.asarray(kvals, dtype=np.float64)
    n = (kvals.shape[0] - 1) // 2
    u = np.full(n + 1, np.nan)
    integ = np.full(n + 1, np.nan)
    u[0] = u0
    integ[0] = 0.0
    blow = -1
    x = float(u0)
    acc = 0.0
    for i in range(n):
        k0, k1, k2 = float(kvals[2 * i]), float(kvals[2 * i + 1]), float(kvals[2 * i + 2])
        c1 = -x * x - k0
        c2 = -(x + 0.5 * h * c1) ** 2 - k1
        c3 = -(x + 0.5 * h * c2) ** 2 - k1
        c4 = -(x + h * c3) ** 2 - k2
        nx = x + h / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
        acc = acc + h / 6.0 * (x + 2.0 * (x + 0.5 * h * c1) + 2.0 * (x + 0.5 * h * c2) + (x + h * c3))
        u[i + 1] = nx
        integ[i + 1] = acc
        x = nx
        if not abs(nx) <= ceiling:
            blow = i + 1
            break
    return u, integ, blow


def _profile(c, u):
    r = 0.0
    rp = 0.0
    for k, ck in enumerate(c):
        r += ck * math.cosh(k * u)
        rp += ck * k * math.sinh(k * u)
    return r, rp


def _rhs(c, y):
    r, rp = _profile(c, y[0])
    return (y[2], y[3] / (r * r), y[3] * y[3] * rp / (r * r * r), 0.0)


def revolution_orbit(coeffs, y0, h, nsteps, umin, umax):
    c = [float(v) for v in coeffs]
    orbit = np.full((nsteps + 1, 4), np.nan)
    y = [float(v) for v in y0]
    orbit[0] = y
    exit_index = -1
    drift = 0.0
    for i in range(nsteps):
        d1 = _rhs(c, y)
        d2 = _rhs(c, [y[j] + 0.5 * h * d1[j] for j in range(4)])
        d3 = _rhs(c, [y[j] + 0.5 * h * d2[j] for j in range(4)])
        d4 = _rhs(c, [y[j] + h * d3[j] for j in range(4)])
        y = [y[j] + h / 6.0 * (d1[j] + 2.0 * d2[j] + 2.0 * d3[j] + d4[j]) for j in range(4)]
        r, _ = _profile(c, y[0])
        e = 0.5 * abs(y[2] * y[2] + y[3] * y[3] / (r * r) - 1.0)
        drift = max(drift, e)
        rest = 1.0 - y[3] * y[3] / (r * r)
        if rest > 0.0:
            y[2] = math.sqrt(rest) if y[2] >= 0.0 else -math.sqrt(rest)
        orbit[i + 1] = y
        if y[0] < umin or y[0] > umax:
            exit_index = i + 1
            break
    return orbit, exit_index, drift


def sl2_reduce(g, gens, max_iter):
    out = np.array(g, dtype=np.float64, copy=True)
    gens = np.asarray(gens, dtype=np.float64)
    cnt = np.zeros(out.shape[0], dtype=np.int64)
    active = np.ones(out.shape[0], dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        cur = out[idx]
        n0 = (cur ** 2).sum(axis=(1, 2))
        cand = np.einsum("kij,bjl->bkil", gens, cur)
        nc = (cand ** 2).sum(axis=(2, 3))
        best = nc.argmin(axis=1)
        bn = nc[np.arange(len(idx)), best]
        better = bn < n0 * (1.0 - 1e-12)
        sel = idx[better]
        out[sel] = cand[np.flatnonzero(better), best[better]]
        cnt[sel] += 1
        active[idx[~better]] = False
    return out, cnt
