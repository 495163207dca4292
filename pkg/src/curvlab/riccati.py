"""Jacobi fields, Riccati equations and the unstable Riccati solution.

Along a unit-speed geodesic with curvature K(t) the scalar Jacobi equation
J'' + K J = 0 linearises the flow in the direction orthogonal to the
motion; U = J'/J then solves the Riccati equation U' + U^2 + K = 0.

The unstable solution U^u is the limit of U_T = J_T'(0)/J_T(0) for the
fields with J_T(-T) = 0.  It is computed from the backward tangent matrix
Phi(-T, 0) = [[a, b], [c, d]] as U_T = -a/b, doubling T until successive
values (or their Richardson extrapolants, which make the algebraic 1/T
convergence of flat pieces exact) agree to the requested tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .errors import BlowUp, NoConvergence, ValidationError
from .surface import GeodesicState, SurfaceModel, SyntheticProfile

DEFAULT_STEP = 0.01


@dataclass
class JacobiSolution:
    times: np.ndarray
    J: np.ndarray
    Jp: np.ndarray


@dataclass
class RiccatiTrace:
    times: np.ndarray
    U: np.ndarray
    integral: np.ndarray

    @property
    def total(self) -> float:
        return float(self.integral[-1])


@dataclass
class HopfConfig:
    T: float = 5.0
    growth: float = 2.0
    tol: float = 1e-9
    max_doublings: int = 7
    step: Optional[float] = None

    def __post_init__(self):
        if not self.T > 0:
            raise ValidationError("initial horizon must be positive")
        if not self.tol > 0:
            raise ValidationError("tolerance must be positive")
        if not self.growth > 1:
            raise ValidationError("horizon growth factor must exceed 1")


@dataclass
class HopfResult:
    value: float
    horizons: list
    iterates: list
    extrapolants: list
    monotone: bool


@dataclass
class BoundReport:
    left: float
    right: float
    passed: bool
    U0: float
    growth: float
    K0: float

    def as_dict(self):
        return dict(left=self.left, right=self.right, passed=self.passed, U0=self.U0,
                    growth=self.growth, K0=self.K0)


# ---------------------------------------------------------------------------
def _as_profile(K) -> SyntheticProfile:
    if isinstance(K, SyntheticProfile):
        return K
    if callable(K):
        return SyntheticProfile(K)
    if np.isscalar(K):
        return SyntheticProfile.constant(float(K))
    return SyntheticProfile(K)


def _fine_grid(t_grid, step):
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 1:
        raise ValidationError("t_grid must be a nonempty 1-d array")
    if t_grid.size == 1:
        return t_grid, 1, 0.0
    dt = np.diff(t_grid)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=1e-12) or dt[0] == 0:
        raise ValidationError("t_grid must be uniformly spaced")
    sub = max(1, int(math.ceil(abs(dt[0]) / step - 1e-9)))
    return t_grid, sub, dt[0] / sub


def jacobi_solve(K, J0: float, J0p: float, t_grid, step: float = DEFAULT_STEP) -> JacobiSolution:
    """Solve J'' + K(t) J = 0 with J(t0) = J0, J'(t0) = J0p on a uniform grid."""
    prof = _as_profile(K)
    t_grid, sub, h = _fine_grid(t_grid, step)
    if t_grid.size == 1:
        return JacobiSolution(t_grid, np.array([J0], float), np.array([J0p], float))
    n = sub * (t_grid.size - 1)
    s = t_grid[0] + np.arange(2 * n + 1) * (h / 2.0)
    traj = kernels.jacobi_rk4(prof.K(s), h, np.array([[J0], [J0p]], dtype=float))
    pick = traj[::sub, :, 0]
    return JacobiSolution(t_grid, pick[:, 0].copy(), pick[:, 1].copy())


def riccati_solve(K, U0: float, t_grid, step: float = DEFAULT_STEP, ceiling: float = 1e6) -> RiccatiTrace:
    """Solve U' + U^2 + K = 0 with U(t0) = U0; raises :class:`BlowUp` if |U| > ceiling."""
    prof = _as_profile(K)
    t_grid, sub, h = _fine_grid(t_grid, step)
    if t_grid.size == 1:
        return RiccatiTrace(t_grid, np.array([U0], float), np.zeros(1))
    n = sub * (t_grid.size - 1)
    s = t_grid[0] + np.arange(2 * n + 1) * (h / 2.0)
    u, integ, blow = kernels.riccati_rk4(prof.K(s), h, float(U0), float(ceiling))
    if blow >= 0:
        raise BlowUp(f"|U| exceeded {ceiling:g} at t = {t_grid[0] + blow * h:.6f}",
                     time=float(t_grid[0] + blow * h))
    return RiccatiTrace(t_grid, u[::sub].copy(), integ[::sub].copy())


# ---------------------------------------------------------------------------
def _hopf(model, state, cfg, sign):
    cfg = cfg or HopfConfig()
    horizons = [cfg.T * cfg.growth ** k for k in range(cfg.max_doublings + 1)]
    g = cfg.growth
    iterates, extrap = [], []
    phi_prev = np.eye(2)
    cur_state = state
    prev = 0.0
    for k, T in enumerate(horizons):
        seg_phi = model.tangent(cur_state, sign * (T - prev), cfg.step)
        phi_prev = seg_phi @ phi_prev
        phi_prev = phi_prev / np.abs(phi_prev).max()
        cur_state = model.advance(cur_state, sign * (T - prev), cfg.step)
        prev = T
        a, b = phi_prev[0]
        if b == 0:
            raise NoConvergence("degenerate Jacobi field at the horizon", iterates)
        u = -a / b
        iterates.append(u)
        if k >= 1:
            extrap.append((g * iterates[-1] - iterates[-2]) / (g - 1.0))
        value = None
        if k >= 1 and abs(iterates[-1] - iterates[-2]) < cfg.tol:
            value = iterates[-1]
        elif len(extrap) >= 2 and abs(extrap[-1] - extrap[-2]) < cfg.tol:
            value = extrap[-1]
        if value is not None:
            d = np.diff(iterates)
            monotone = bool(np.all(-sign * d <= 1e-12 * (1 + np.abs(np.asarray(iterates[1:])))))
            return HopfResult(float(value), horizons[:k + 1], iterates, extrap, monotone)
    raise NoConvergence(
        f"horizon doubling did not converge after {cfg.max_doublings} doublings; "
        f"last iterates {iterates[-2:]}", iterates)


def hopf_unstable(model: SurfaceModel, state: GeodesicState, cfg: Optional[HopfConfig] = None,
                  details: bool = False):
    """Unstable Riccati solution U^u at ``state`` via the backward Hopf limit."""
    res = _hopf(model, state, cfg, -1)
    return res if details else res.value


def hopf_stable(model: SurfaceModel, state: GeodesicState, cfg: Optional[HopfConfig] = None,
                details: bool = False):
    """Stable Riccati solution U^s (<= 0) via the forward horizon mirror."""
    res = _hopf(model, state, cfg, +1)
    return res if details else res.value


def unstable_trace(model: SurfaceModel, state: GeodesicState, t: float,
                   cfg: Optional[HopfConfig] = None, ceiling: float = 1e6) -> RiccatiTrace:
    """Riccati trace along [0, t] seeded with the Hopf value at ``state``."""
    if t < 0:
        raise ValidationError("t must be nonnegative")
    u0 = hopf_unstable(model, state, cfg)
    if t == 0:
        return RiccatiTrace(np.zeros(1), np.array([u0]), np.zeros(1))
    step = (cfg.step if cfg else None) or model.step
    kvals, h = model.curvature_along(state, t, step)
    u, integ, blow = kernels.riccati_rk4(kvals, h, u0, ceiling)
    if blow >= 0:
        raise BlowUp(f"unstable Riccati solution blew up at t = {blow * h:.6f}", time=blow * h)
    times = np.arange(u.size) * h
    return RiccatiTrace(times, u, integ)


def unstable_growth(model: SurfaceModel, state: GeodesicState, t: float,
                    cfg: Optional[HopfConfig] = None) -> float:
    """int_0^t U^u(g^s rho) ds."""
    return unstable_trace(model, state, t, cfg).total


def lyapunov_upper(model: SurfaceModel, state: GeodesicState, T: float,
                   cfg: Optional[HopfConfig] = None) -> dict:
    """Upper Lyapunov exponent by the Riccati route and the tangent-matrix route."""
    if not T > 0:
        raise ValidationError("T must be positive")
    ric = unstable_growth(model, state, T, cfg) / T
    step = (cfg.step if cfg else None)
    phi = model.tangent(state, T, step)
    tan = math.log(np.linalg.norm(phi, 2)) / T
    return {"riccati": ric, "tangent": tan, "T": T}


def growth_bound_check(model: SurfaceModel, state: GeodesicState, t: float,
                       cfg: Optional[HopfConfig] = None) -> BoundReport:
    """Compare |dg^t v| / |v| for v = (1, U^u) with sqrt(1 + K0) exp(int_0^t U^u)."""
    if t < 0:
        raise ValidationError("t must be nonnegative")
    trace = unstable_trace(model, state, t, cfg)
    u0 = float(trace.U[0])
    v = np.array([1.0, u0])
    step = (cfg.step if cfg else None)
    phi = model.tangent(state, t, step) if t > 0 else np.eye(2)
    left = float(np.linalg.norm(phi @ v) / np.linalg.norm(v))
    K0 = float(model.K0)
    right = math.sqrt(1.0 + K0) * math.exp(trace.total)
    return BoundReport(left, right, left <= right * (1 + 1e-6), u0, trace.total, K0)


def integral_gap(model: SurfaceModel, a: GeodesicState, b: GeodesicState, eta: float,
                 cfg: Optional[HopfConfig] = None) -> float:
    """|int_0^eta U^u(g^s a) ds - int_0^eta U^u(g^s b) ds| (continuity diagnostic)."""
    return abs(unstable_growth(model, a, eta, cfg) - unstable_growth(model, b, eta, cfg))


def riccati_residual(trace: RiccatiTrace, K) -> float:
    """Max |U' + U^2 + K| at interior samples, U' by central differences."""
    prof = _as_profile(K)
    t, u = trace.times, trace.U
    if t.size < 3:
        return 0.0
    du = (u[2:] - u[:-2]) / (t[2:] - t[:-2])
    return float(np.max(np.abs(du + u[1:-1] ** 2 + prof.K(t[1:-1]))))
