"""Surface models of nonpositive curvature, their geodesic flows, and the
linearised (tangent) flow written in the horizontal/vertical splitting.

Four model variants are provided:

* :class:`FlatTorus` -- straight-line flow, K = 0.
* :class:`HyperbolicQuotient` -- constant curvature -1.  States are SL(2,R)
  matrices; the flow is right multiplication by diag(e^{t/2}, e^{-t/2}) and
  states are reduced to a fundamental domain by greedy norm minimisation
  over the generators.
* :class:`Revolution` -- metric du^2 + r(u)^2 dtheta^2 with r(u) given as a
  cosine-hyperbolic series; K = -r''/r.
* :class:`SyntheticProfile` -- only a curvature function K(t) along one
  orbit; used to exercise the Jacobi/Riccati solvers.

The tangent flow is returned as the 2x2 matrix [[J1, J2], [J1', J2']] whose
columns solve J'' + K(t) J = 0 with initial data (1, 0) (horizontal) and
(0, 1) (vertical).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import DomainExit, StepRejected, ValidationError

CURVATURE_TOL = 1e-10
DRIFT_PER_TIME = 1e-8


@dataclass(frozen=True)
class GeodesicState:
    """A unit covector over a point.

    ``position`` and ``covector`` are in the model's chart.  Hyperbolic
    states additionally carry their SL(2,R) matrix in ``frame``; it is the
    authoritative representation and the other two fields are derived.
    """

    position: np.ndarray
    covector: np.ndarray
    frame: Optional[np.ndarray] = None


@dataclass
class ValidationReport:
    model: str
    samples: int
    min_curvature: float
    max_curvature: float
    K0: float
    passed: bool
    notes: list = field(default_factory=list)

    def as_dict(self):
        return {
            "model": self.model,
            "samples": self.samples,
            "min_curvature": self.min_curvature,
            "max_curvature": self.max_curvature,
            "K0": self.K0,
            "passed": self.passed,
            "notes": list(self.notes),
        }


def _steps(t, step):
    """Number of RK4 steps and the signed effective step covering [0, t]."""
    n = max(1, int(math.ceil(abs(t) / abs(step) - 1e-9)))
    return n, t / n


class SurfaceModel:
    """Common interface.  Subclasses are immutable after construction."""

    kind = "abstract"
    step = 0.01

    # -- curvature -------------------------------------------------------
    def sample_curvature(self, count: int, rng=None) -> np.ndarray:
        raise NotImplementedError

    @property
    def K0(self) -> float:
        raise NotImplementedError

    def curvature_along(self, state: GeodesicState, t: float, step: Optional[float] = None):
        """K at t0, t0+h/2, ..., t0+t along the orbit; returns (kvals, h)."""
        raise NotImplementedError

    # -- flow ------------------------------------------------------------
    def flow(self, state: GeodesicState, t: float, step: Optional[float] = None) -> GeodesicState:
        raise NotImplementedError

    def advance(self, state: GeodesicState, t: float, step: Optional[float] = None) -> GeodesicState:
        """Move along the orbit; unlike :meth:`flow` also defined for synthetic profiles."""
        return self.flow(state, t, step)

    def tangent(self, state: GeodesicState, t: float, step: Optional[float] = None) -> np.ndarray:
        if t == 0:
            return np.eye(2)
        kvals, h = self.curvature_along(state, t, step)
        traj = kernels.jacobi_rk4(kvals, h, np.eye(2))
        return traj[-1].copy()

    def covector_norm(self, state: GeodesicState) -> float:
        raise NotImplementedError

    def distance(self, a: GeodesicState, b: GeodesicState) -> float:
        return float(np.linalg.norm(np.concatenate([np.asarray(a.position) - b.position,
                                                    np.asarray(a.covector) - b.covector])))

    def random_state(self, rng) -> GeodesicState:
        raise NotImplementedError

    # -- chart -------------------------------------------------------------
    def chart_coords(self, state: GeodesicState) -> np.ndarray:
        return np.asarray(state.position, dtype=float)

    def describe(self) -> dict:
        return {"kind": self.kind}


# ---------------------------------------------------------------------------
class FlatTorus(SurfaceModel):
    kind = "flat-torus"

    def __init__(self, L1: float = 1.0, L2: float = 1.0):
        if not (L1 > 0 and L2 > 0):
            raise ValidationError("torus side lengths must be positive")
        self.L = (float(L1), float(L2))

    def sample_curvature(self, count, rng=None):
        return np.zeros(count)

    @property
    def K0(self):
        return 0.0

    def curvature_along(self, state, t, step=None):
        n, h = _steps(t, step or self.step)
        return np.zeros(2 * n + 1), h

    def state(self, x, y, angle) -> GeodesicState:
        return GeodesicState(np.array([x % self.L[0], y % self.L[1]]),
                             np.array([math.cos(angle), math.sin(angle)]))

    def flow(self, state, t, step=None):
        x = np.asarray(state.position) + t * np.asarray(state.covector)
        return GeodesicState(np.mod(x, self.L), np.array(state.covector, dtype=float))

    def tangent(self, state, t, step=None):
        return np.array([[1.0, t], [0.0, 1.0]])

    def covector_norm(self, state):
        return float(np.hypot(*state.covector))

    def distance(self, a, b):
        d = np.asarray(a.position) - b.position
        d = d - np.round(d / self.L) * self.L
        return float(np.linalg.norm(np.concatenate([d, np.asarray(a.covector) - b.covector])))

    def random_state(self, rng):
        x, y = rng.random(2) * self.L
        return self.state(x, y, rng.random() * 2 * math.pi)

    def chart_domain(self):
        return (0.0, self.L[0], 0.0, self.L[1])

    def describe(self):
        return {"kind": self.kind, "L1": self.L[0], "L2": self.L[1]}


# ---------------------------------------------------------------------------
def bolza_generators() -> list:
    """Four hyperbolic generators of a genus-2 (Bolza) surface group.

    In the disc model they are the translations pairing opposite sides of
    the regular octagon with interior angles pi/4; conjugated here to
    SL(2,R) acting on the upper half-plane.
    """
    a = 1.0 + math.sqrt(2.0)
    b = math.sqrt(2.0 + 2.0 * math.sqrt(2.0))
    cayley = np.array([[1.0, -1.0j], [1.0, 1.0j]])
    cayley_inv = np.linalg.inv(cayley)
    gens = []
    for k in range(4):
        th = k * math.pi / 4.0
        d = np.array([[a, b * np.exp(1j * th)], [b * np.exp(-1j * th), a]])
        gens.append((cayley_inv @ d @ cayley).real)
    return gens


class HyperbolicQuotient(SurfaceModel):
    """Quotient of the hyperbolic plane by the group generated by ``generators``.

    Discreteness of the group is not checked: that is the caller's
    responsibility.  The greedy reduction yields a representative whose
    base point is (approximately) in the Dirichlet domain centred at i.
    """

    kind = "hyperbolic"
    max_reduction_steps = 500

    def __init__(self, generators: Sequence, name: str = "custom"):
        gens = [np.asarray(g, dtype=float).reshape(2, 2) for g in generators]
        if not gens:
            raise ValidationError("hyperbolic model needs at least one generator")
        for g in gens:
            if abs(np.linalg.det(g) - 1.0) > 1e-9:
                raise ValidationError("generators must have determinant 1")
        self.generators = gens
        self.name = name
        both = []
        for g in gens:
            both.append(g)
            both.append(np.linalg.inv(g))
        self._gens = np.ascontiguousarray(np.array(both))
        # short words used to compare representatives of the same point
        words = [np.eye(2)] + both
        words += [x @ y for x in both for y in both]
        self._nearby = np.array(words)
        self._fd_radius = None

    @classmethod
    def bolza(cls):
        return cls(bolza_generators(), name="bolza")

    def sample_curvature(self, count, rng=None):
        return -np.ones(count)

    @property
    def K0(self):
        return 1.0

    def curvature_along(self, state, t, step=None):
        n, h = _steps(t, step or self.step)
        return -np.ones(2 * n + 1), h

    def reduce(self, g: np.ndarray) -> np.ndarray:
        g = np.ascontiguousarray(np.asarray(g, dtype=float).reshape(-1, 2, 2))
        out, _ = kernels.sl2_reduce(g, self._gens, self.max_reduction_steps)
        return out

    def from_matrix(self, g: np.ndarray, reduce: bool = True) -> GeodesicState:
        g = np.asarray(g, dtype=float)
        if reduce:
            g = self.reduce(g)[0]
        (a, b), (c, d) = g
        z = (a * 1j + b) / (c * 1j + d)
        v = 1j / (c * 1j + d) ** 2  # derivative of z -> g.z at i, applied to i
        y = z.imag
        cov = np.array([v.real, v.imag]) / (y * y)
        return GeodesicState(np.array([z.real, z.imag]), cov, g.copy())

    def flow(self, state, t, step=None):
        a_t = np.diag([math.exp(t / 2.0), math.exp(-t / 2.0)])
        return self.from_matrix(state.frame @ a_t)

    def tangent(self, state, t, step=None):
        return np.array([[math.cosh(t), math.sinh(t)], [math.sinh(t), math.cosh(t)]])

    def covector_norm(self, state):
        return float(state.position[1] * np.hypot(*state.covector))

    def distance(self, a, b):
        cands = np.einsum("kij,jl->kil", self._nearby, a.frame)
        d1 = np.linalg.norm(cands - b.frame, axis=(1, 2)).min()
        d2 = np.linalg.norm(cands + b.frame, axis=(1, 2)).min()
        return float(min(d1, d2))

    def disc(self, frames: np.ndarray) -> np.ndarray:
        """Base points of a batch of frames in the Poincare disc (complex)."""
        f = np.asarray(frames).reshape(-1, 2, 2)
        z = (f[:, 0, 0] * 1j + f[:, 0, 1]) / (f[:, 1, 0] * 1j + f[:, 1, 1])
        return (z - 1j) / (z + 1j)

    def chart_coords(self, state):
        w = self.disc(state.frame)[0]
        return np.array([w.real, w.imag])

    def fundamental_radius(self) -> float:
        """Euclidean disc radius enclosing the reduced domain (sampled once)."""
        if self._fd_radius is None:
            rng = np.random.default_rng(12345)
            g = self._raw_sample(rng, 4000, 0.999)
            w = self.disc(self.reduce(g))
            self._fd_radius = float(np.abs(w).max())
        return self._fd_radius

    @staticmethod
    def _raw_sample(rng, count, disc_radius):
        rho_max = 2.0 * math.atanh(disc_radius)
        u = rng.random(count)
        rho = np.arccosh(1.0 + u * (math.cosh(rho_max) - 1.0))
        a1 = -rng.random(count) * math.pi
        a2 = rng.random(count) * math.pi
        c1, s1, c2, s2 = np.cos(a1), np.sin(a1), np.cos(a2), np.sin(a2)
        e, f = np.exp(rho / 2.0), np.exp(-rho / 2.0)
        g = np.empty((count, 2, 2))
        # rot(a1) @ diag(e, f) @ rot(a2)
        g[:, 0, 0] = c1 * e * c2 - s1 * f * s2
        g[:, 0, 1] = -c1 * e * s2 - s1 * f * c2
        g[:, 1, 0] = s1 * e * c2 + c1 * f * s2
        g[:, 1, 1] = -s1 * e * s2 + c1 * f * c2
        return g

    def liouville_frames(self, rng, count: int, disc_radius: float = 0.9) -> np.ndarray:
        """Frames distributed by the Liouville measure on the quotient.

        Base points are drawn from the hyperbolic area measure on a disc
        about i, directions uniformly; draws that the reduction would move
        (i.e. outside the reduced domain) are rejected.
        """
        out = []
        got = 0
        while got < count:
            g = self._raw_sample(rng, max(count, 1024), disc_radius)
            r = self.reduce(g)
            keep = np.all(np.abs(r - g) < 1e-12, axis=(1, 2))
            out.append(g[keep])
            got += int(keep.sum())
        return np.concatenate(out)[:count]

    def random_state(self, rng):
        return self.from_matrix(self.liouville_frames(rng, 1)[0], reduce=False)

    def chart_domain(self):
        r = self.fundamental_radius()
        return (-r, r, -r, r)

    def describe(self):
        return {"kind": self.kind, "name": self.name,
                "generators": [g.tolist() for g in self.generators]}


# ---------------------------------------------------------------------------
class Revolution(SurfaceModel):
    """Surface of revolution du^2 + r(u)^2 dtheta^2, r(u) = sum_k c_k cosh(k u).

    Orbits are integrated in canonical variables (u, theta, p_u, p_theta)
    with fixed-step RK4; leaving [umin, umax] raises :class:`DomainExit`.
    """

    kind = "revolution"

    def __init__(self, coeffs: Sequence[float], umin: float = -60.0, umax: float = 60.0,
                 step: float = 0.01, name: str = "custom"):
        self.coeffs = np.ascontiguousarray(np.asarray(coeffs, dtype=float))
        if self.coeffs.size == 0:
            raise ValidationError("empty profile")
        if not umin < umax:
            raise ValidationError("profile interval must be nonempty")
        self.umin, self.umax = float(umin), float(umax)
        self.step = float(step)
        self.name = name
        uu = np.linspace(self.umin, self.umax, 2001)
        r = self.r(uu)
        if np.any(r <= 0):
            raise ValidationError("profile must be positive on its interval")
        self._K0 = float(np.max(self.r2(uu) / r))

    @classmethod
    def catenoid(cls, umin=-60.0, umax=60.0, step=0.01):
        """r(u) = cosh u.  With K = -r''/r this is the constant-curvature
        (K = -1) surface of revolution; its waist u = 0 is a closed geodesic."""
        return cls([0.0, 1.0], umin, umax, step, name="catenoid-profile")

    def _k(self):
        return np.arange(self.coeffs.size)

    def r(self, u):
        u = np.asarray(u, dtype=float)
        return np.sum(self.coeffs[:, None] * np.cosh(np.outer(self._k(), u.ravel())), axis=0).reshape(u.shape)

    def r1(self, u):
        u = np.asarray(u, dtype=float)
        k = self._k()
        return np.sum((self.coeffs * k)[:, None] * np.sinh(np.outer(k, u.ravel())), axis=0).reshape(u.shape)

    def r2(self, u):
        u = np.asarray(u, dtype=float)
        k = self._k()
        return np.sum((self.coeffs * k * k)[:, None] * np.cosh(np.outer(k, u.ravel())), axis=0).reshape(u.shape)

    def curvature(self, u):
        return -self.r2(u) / self.r(u)

    def sample_curvature(self, count, rng=None):
        uu = np.linspace(self.umin, self.umax, count) if count > 1 else np.array([0.5 * (self.umin + self.umax)])
        return self.curvature(uu)

    @property
    def K0(self):
        return self._K0

    def state(self, u, theta, angle) -> GeodesicState:
        """State at (u, theta) whose velocity makes ``angle`` with the meridian."""
        r = float(self.r(u))
        return GeodesicState(np.array([float(u), theta % (2 * math.pi)]),
                             np.array([math.cos(angle), r * math.sin(angle)]))

    def waist_state(self) -> GeodesicState:
        """Unit-speed state tangent to the parallel u = 0 (a closed geodesic
        when r'(0) = 0)."""
        return GeodesicState(np.array([0.0, 0.0]), np.array([0.0, float(self.r(0.0))]))

    def _orbit(self, state, t, step):
        n, h = _steps(t, step)
        y0 = np.array([state.position[0], state.position[1], state.covector[0], state.covector[1]], dtype=float)
        orbit, exit_index, drift = kernels.revolution_orbit(self.coeffs, y0, h, n, self.umin, self.umax)
        if drift / abs(h) > DRIFT_PER_TIME:
            raise StepRejected(f"energy drift {drift / abs(h):.3e} per unit time exceeds {DRIFT_PER_TIME}")
        if exit_index >= 0:
            raise DomainExit(f"orbit left [{self.umin}, {self.umax}] at t = {exit_index * h:.4f}",
                             time=exit_index * h)
        return orbit, h

    def flow(self, state, t, step=None):
        if t == 0:
            return state
        orbit, _ = self._orbit(state, t, step or self.step)
        y = orbit[-1]
        return GeodesicState(np.array([y[0], y[1] % (2 * math.pi)]), np.array([y[2], y[3]]))

    def curvature_along(self, state, t, step=None):
        n, h = _steps(t, step or self.step)
        orbit, _ = self._orbit(state, t, h / 2.0)
        return self.curvature(orbit[:, 0]), h

    def covector_norm(self, state):
        r = float(self.r(state.position[0]))
        return math.sqrt(state.covector[0] ** 2 + (state.covector[1] / r) ** 2)

    def clairaut(self, state) -> float:
        """r times the sine of the angle to the meridian (= p_theta for unit speed)."""
        return float(state.covector[1]) / self.covector_norm(state)

    def distance(self, a, b):
        du = a.position[0] - b.position[0]
        dth = (a.position[1] - b.position[1] + math.pi) % (2 * math.pi) - math.pi
        return float(np.linalg.norm([du, dth, a.covector[0] - b.covector[0], a.covector[1] - b.covector[1]]))

    def random_state(self, rng, band: float = 2.0):
        u = (rng.random() * 2 - 1) * min(band, 0.5 * (self.umax - self.umin))
        u = u + 0.5 * (self.umin + self.umax)
        return self.state(u, rng.random() * 2 * math.pi, rng.random() * 2 * math.pi)

    def chart_domain(self):
        return (self.umin, self.umax, 0.0, 2 * math.pi)

    def describe(self):
        return {"kind": self.kind, "name": self.name, "coeffs": self.coeffs.tolist(),
                "umin": self.umin, "umax": self.umax, "step": self.step}


# ---------------------------------------------------------------------------
class SyntheticProfile(SurfaceModel):
    """Curvature prescribed along a single orbit, K(t) <= 0.

    ``kfunc`` is a vectorised callable, or a pair (times, values) that is
    interpolated linearly.  A state is just the time offset t0 on the orbit.
    """

    kind = "synthetic"

    def __init__(self, kfunc, span=(-400.0, 400.0), step: float = 0.01, name: str = "synthetic"):
        if callable(kfunc):
            self._k = kfunc
            self.table = None
        else:
            times, values = (np.asarray(v, dtype=float) for v in kfunc)
            if times.size < 2 or times.shape != values.shape:
                raise ValidationError("curvature table needs matching times/values")
            self.table = (times, values)
            self._k = lambda t: np.interp(t, times, values)
            span = (float(times[0]), float(times[-1]))
        self.span = (float(span[0]), float(span[1]))
        self.step = float(step)
        self.name = name
        tt = np.linspace(self.span[0], self.span[1], 20001)
        self._K0 = float(max(0.0, -np.min(self.K(tt))))

    @classmethod
    def constant(cls, K, **kw):
        return cls(lambda t: np.full(np.shape(t), float(K)), name=f"constant({K})", **kw)

    def K(self, t):
        return np.asarray(self._k(np.asarray(t, dtype=float)), dtype=float)

    def sample_curvature(self, count, rng=None):
        return self.K(np.linspace(self.span[0], self.span[1], max(count, 1)))

    @property
    def K0(self):
        return self._K0

    def state(self, t0: float = 0.0) -> GeodesicState:
        return GeodesicState(np.array([float(t0)]), np.array([1.0]))

    def curvature_along(self, state, t, step=None):
        n, h = _steps(t, step or self.step)
        t0 = float(state.position[0])
        s = t0 + np.arange(2 * n + 1) * (h / 2.0)
        if min(s[0], s[-1]) < self.span[0] - 1e-9 or max(s[0], s[-1]) > self.span[1] + 1e-9:
            raise DomainExit(f"synthetic profile requested outside its span {self.span}")
        return self.K(s), h

    def flow(self, state, t, step=None):
        raise ValidationError("a synthetic curvature profile has no global geodesic flow")

    def advance(self, state, t, step=None):
        return self.state(float(state.position[0]) + t)

    def covector_norm(self, state):
        return 1.0

    def random_state(self, rng):
        return self.state(float(rng.uniform(-10.0, 10.0)))

    def describe(self):
        return {"kind": self.kind, "name": self.name, "span": list(self.span)}


# ---------------------------------------------------------------------------
# Operation-level API

def validate_nonpositive(model: SurfaceModel, sample_count: int = 100) -> ValidationReport:
    """Sample the curvature and check K <= 1e-10 everywhere sampled."""
    if model is None:
        raise ValidationError("empty model")
    if sample_count < 1:
        raise ValidationError("sample_count must be >= 1")
    notes = []
    if isinstance(model, Revolution):
        uu = np.linspace(model.umin, model.umax, sample_count) if sample_count > 1 else np.array([0.0])
        if np.any(model.r2(uu) < 0):
            raise ValidationError("profile is not convex: r'' < 0 at a sampled point")
    k = model.sample_curvature(sample_count)
    if isinstance(model, HyperbolicQuotient):
        notes.append("injectivity radius > 2 is assumed, not verified for arbitrary generators")
        notes.append("discreteness of the generated group is not verified")
    kmax = float(np.max(k))
    return ValidationReport(model.kind, int(sample_count), float(np.min(k)), kmax,
                            float(max(0.0, -np.min(k))), kmax <= CURVATURE_TOL, notes)


def geodesic_flow(model: SurfaceModel, state: GeodesicState, t: float,
                  step: Optional[float] = None) -> GeodesicState:
    """g^t(state).  ``step`` is the integrator step (ignored by exact models)."""
    if step is not None and step <= 0:
        raise ValidationError("step must be positive")
    if isinstance(model, SyntheticProfile):
        raise ValidationError("a synthetic curvature profile has no global geodesic flow")
    return model.flow(state, t, step)


def tangent_flow(model: SurfaceModel, state: GeodesicState, t: float,
                 step: Optional[float] = None) -> np.ndarray:
    """2x2 matrix of d g^t restricted to the (horizontal-orthogonal, vertical) plane."""
    if not np.isfinite(t):
        raise ValidationError("t must be finite")
    return model.tangent(state, t, step)


def vertical_growth(model: SurfaceModel, state: GeodesicState, t: float) -> float:
    """Norm of the image of the unit vertical vector (0, 1) under the tangent flow."""
    return float(np.linalg.norm(tangent_flow(model, state, t)[:, 1]))


# ---------------------------------------------------------------------------
PRESETS = ("flat-torus", "bolza", "catenoid-profile")


def preset(name: str) -> SurfaceModel:
    if name == "flat-torus":
        return FlatTorus(1.0, 1.0)
    if name == "bolza":
        return HyperbolicQuotient.bolza()
    if name == "catenoid-profile":
        return Revolution.catenoid()
    raise ValidationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


Curvature = Callable[[np.ndarray], np.ndarray]
