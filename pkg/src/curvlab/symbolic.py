"""Discretisation and symbolic dynamics.

* partitions of a model's chart into cells (and an enlarged open cover),
* roof tables f0(g0, g1) and f(g0, g1) built from infima of the unstable
  Riccati solution over the sets V_g (states in cell g0 whose eta-image is
  in cell g1),
* stopping-time word families: a word a_0..a_k (k >= 2) belongs to the
  family I(T) when  sum_{i=1}^{k-2} f+(s^i a) <= T < sum_{i=1}^{k-1} f+(s^i a)
  with f+(a) = f0(a_0, a_1),
* the suspension (special) semiflow over the one-sided shift with roof f+,
* the partition used for refined pressures (cylinders of the T = 1/N0
  family with full fibres) and brute-force joins of it under the
  suspension flow at time step 1/N0.

Symbols are integers 0..K-1.  Roof tables given as exact rationals keep
all fibre arithmetic exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import (CombinatorialBlowup, ConstraintViolation, HorizonExhausted,
                     NoConvergence, ValidationError, ZeroNormalizer)
from .riccati import HopfConfig, hopf_unstable
from .surface import FlatTorus, HyperbolicQuotient, Revolution, SurfaceModel

DEFAULT_CAP = 10 ** 7


# ---------------------------------------------------------------------------
# Partitions
@dataclass
class PartitionSpec:
    """Cells are closed chart rectangles (x0, x1, y0, y1); ties on shared
    edges go to the lowest index.  ``cover`` holds the enlarged rectangles
    Omega_i."""

    model_kind: str
    cells: np.ndarray
    cover: np.ndarray
    delta: float
    eta: float
    eps: float
    eps0: float
    b0: float
    domain: tuple
    periodic: tuple = (False, False)

    @property
    def K(self) -> int:
        return int(self.cells.shape[0])

    def _wrap(self, pts):
        pts = np.array(pts, dtype=float, copy=True)
        x0, x1, y0, y1 = self.domain
        if self.periodic[0]:
            pts[:, 0] = x0 + np.mod(pts[:, 0] - x0, x1 - x0)
        if self.periodic[1]:
            pts[:, 1] = y0 + np.mod(pts[:, 1] - y0, y1 - y0)
        pts[:, 0] = np.clip(pts[:, 0], x0, x1)
        pts[:, 1] = np.clip(pts[:, 1], y0, y1)
        return pts

    def locate(self, pts) -> np.ndarray:
        """Cell index of each chart point (lowest index wins on shared edges)."""
        pts = self._wrap(np.atleast_2d(pts))
        out = np.full(pts.shape[0], -1, dtype=np.int64)
        for i, (a, b, c, d) in enumerate(self.cells):
            m = (out < 0) & (pts[:, 0] >= a) & (pts[:, 0] <= b) & (pts[:, 1] >= c) & (pts[:, 1] <= d)
            out[m] = i
        if np.any(out < 0):
            # points outside every cell (only possible for non-rectangular
            # domains) are assigned to the nearest cell centre
            bad = np.flatnonzero(out < 0)
            ctr = np.stack([(self.cells[:, 0] + self.cells[:, 1]) / 2, (self.cells[:, 2] + self.cells[:, 3]) / 2], 1)
            d2 = ((pts[bad, None, :] - ctr[None]) ** 2).sum(-1)
            out[bad] = d2.argmin(1)
        return out

    def cover_membership(self, pts) -> np.ndarray:
        """Boolean matrix (points x cells): point lies in Omega_i."""
        pts = self._wrap(np.atleast_2d(pts))
        a, b, c, d = (self.cover[:, j][None, :] for j in range(4))
        x, y = pts[:, 0:1], pts[:, 1:2]
        inside_x = (x >= a) & (x <= b)
        inside_y = (y >= c) & (y <= d)
        x0, x1, y0, y1 = self.domain
        if self.periodic[0]:
            w = x1 - x0
            inside_x |= ((x + w) >= a) & ((x + w) <= b) | ((x - w) >= a) & ((x - w) <= b)
        if self.periodic[1]:
            w = y1 - y0
            inside_y |= ((y + w) >= c) & ((y + w) <= d) | ((y - w) >= c) & ((y - w) <= d)
        return inside_x & inside_y

    def as_dict(self):
        return {"model": self.model_kind, "K": self.K, "delta": self.delta, "eta": self.eta,
                "eps": self.eps, "eps0": self.eps0, "b0": self.b0, "domain": list(self.domain)}


def _grid_cells(x0, x1, nx, y0, y1, ny):
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    cells = [(xs[i], xs[i + 1], ys[j], ys[j + 1]) for i in range(nx) for j in range(ny)]
    return np.array(cells, dtype=float)


def _hyperbolic_cells(model: HyperbolicQuotient, delta: float, max_cells: int = 200000):
    """Quadtree on the disc chart, refined until every cell's hyperbolic
    diameter bound (conformal factor x Euclidean diagonal) is <= delta."""
    R = model.fundamental_radius()

    def diam(c):
        a, b, cc, d = c
        # nearest / farthest Euclidean radius reached by the cell, clipped to R
        far = min(R, math.hypot(max(abs(a), abs(b)), max(abs(cc), abs(d))))
        lam = 2.0 / (1.0 - far * far)
        return lam * math.hypot(b - a, d - cc)

    def min_radius(c):
        a, b, cc, d = c
        dx = 0.0 if a <= 0 <= b else min(abs(a), abs(b))
        dy = 0.0 if cc <= 0 <= d else min(abs(cc), abs(d))
        return math.hypot(dx, dy)

    todo = [(-R, 0.0, -R, 0.0), (-R, 0.0, 0.0, R), (0.0, R, -R, 0.0), (0.0, R, 0.0, R)]
    done = []
    while todo:
        c = todo.pop()
        if min_radius(c) > R:
            continue
        if diam(c) <= delta:
            done.append(c)
        else:
            a, b, cc, d = c
            mx, my = 0.5 * (a + b), 0.5 * (cc + d)
            todo += [(a, mx, cc, my), (a, mx, my, d), (mx, b, cc, my), (mx, b, my, d)]
        if len(done) + len(todo) > max_cells:
            raise CombinatorialBlowup("hyperbolic partition exceeds the cell cap")
    done.sort(key=lambda c: (c[0], c[2]))
    return np.array(done, dtype=float), (-R, R, -R, R)


def build_partition(model: SurfaceModel, delta: float, eta: float, eps: float, eps0: float,
                    domain: Optional[tuple] = None, margin: Optional[float] = None,
                    check: bool = True) -> PartitionSpec:
    """Grid (or quadtree) partition of the chart with cells of size <= delta.

    Raises :class:`ConstraintViolation` when (2 + b0/eps0) b0 eta > eps/2,
    b0 = sqrt(K0).  ``domain`` restricts Revolution charts to a band.
    """
    for name, v in (("delta", delta), ("eta", eta), ("eps", eps), ("eps0", eps0)):
        if not v > 0:
            raise ValidationError(f"{name} must be positive")
    b0 = math.sqrt(model.K0)
    if check and (2.0 + b0 / eps0) * b0 * eta > eps / 2.0 + 1e-15:
        raise ConstraintViolation(
            f"(2 + b0/eps0) b0 eta = {(2.0 + b0 / eps0) * b0 * eta:.6g} exceeds eps/2 = {eps / 2:.6g}")
    periodic = (False, False)
    if isinstance(model, FlatTorus):
        dom = model.chart_domain()
        nx = int(math.ceil(model.L[0] / delta - 1e-12))
        ny = int(math.ceil(model.L[1] / delta - 1e-12))
        cells = _grid_cells(dom[0], dom[1], nx, dom[2], dom[3], ny)
        periodic = (True, True)
    elif isinstance(model, Revolution):
        dom = domain or model.chart_domain()
        nu = int(math.ceil((dom[1] - dom[0]) / delta - 1e-12))
        rmax = float(np.max(model.r(np.linspace(dom[0], dom[1], 201))))
        nth = int(math.ceil(2 * math.pi * rmax / delta - 1e-12))
        cells = _grid_cells(dom[0], dom[1], nu, 0.0, 2 * math.pi, nth)
        periodic = (False, True)
    elif isinstance(model, HyperbolicQuotient):
        cells, dom = _hyperbolic_cells(model, delta)
        probe = PartitionSpec(model.kind, cells, cells, delta, eta, eps, eps0, b0, dom)
        cells = cells[cell_nonempty(model, probe)]
    else:
        raise ValidationError(f"cannot partition a {model.kind} model")
    if margin is None:
        margin = 0.25 * float(np.min(np.minimum(cells[:, 1] - cells[:, 0], cells[:, 3] - cells[:, 2])))
    cover = cells + np.array([-margin, margin, -margin, margin])
    return PartitionSpec(model.kind, cells, cover, float(delta), float(eta), float(eps), float(eps0),
                         b0, tuple(float(v) for v in dom), periodic)


def cell_nonempty(model: HyperbolicQuotient, spec: PartitionSpec, samples: int = 64, seed: int = 0) -> np.ndarray:
    """For hyperbolic partitions: does each cell contain a point of the reduced domain?"""
    rng = np.random.default_rng(seed)
    ok = np.zeros(spec.K, dtype=bool)
    for i, (a, b, c, d) in enumerate(spec.cells):
        w = (a + (b - a) * rng.random(samples)) + 1j * (c + (d - c) * rng.random(samples))
        w = w[np.abs(w) < 0.999]
        if w.size == 0:
            continue
        z = 1j * (1 + w) / (1 - w)
        x, y = z.real, z.imag
        g = np.zeros((w.size, 2, 2))
        g[:, 0, 0] = np.sqrt(y)
        g[:, 0, 1] = x / np.sqrt(y)
        g[:, 1, 1] = 1 / np.sqrt(y)
        r = model.reduce(g)
        ok[i] = bool(np.any(np.all(np.abs(r - g) < 1e-10, axis=(1, 2))))
    return ok


def itinerary(model: SurfaceModel, state, eta: float, k: int, spec: PartitionSpec,
              step: Optional[float] = None) -> tuple:
    """Cells visited at times 0, eta, ..., k eta."""
    if k < 0:
        raise ValidationError("k must be >= 0")
    word = []
    s = state
    for j in range(k + 1):
        word.append(int(spec.locate(model.chart_coords(s)[None, :])[0]))
        if j < k:
            s = model.flow(s, eta, step)
    return tuple(word)


# ---------------------------------------------------------------------------
# Roof functions
def _num(v):
    if isinstance(v, (Fraction, int)):
        return Fraction(v)
    if isinstance(v, str):
        return Fraction(v)
    return float(v)


@dataclass
class RoofFunction:
    """Tables f0 and f over symbol pairs.  ``None`` marks an absent pair
    (empty V_g).  Entries are Fractions when supplied exactly."""

    f0: list
    f: list
    eta: Optional[float] = None
    eps0: Optional[float] = None

    def __post_init__(self):
        self.f0 = [[None if v is None else _num(v) for v in row] for row in self.f0]
        self.f = [[None if v is None else _num(v) for v in row] for row in self.f]
        K = len(self.f0)
        if K == 0 or any(len(r) != K for r in self.f0) or len(self.f) != K or any(len(r) != K for r in self.f):
            raise ValidationError("roof tables must be square and of equal size")

    @property
    def K(self) -> int:
        return len(self.f0)

    @classmethod
    def constant(cls, K: int, f0, f=0):
        return cls([[f0] * K for _ in range(K)], [[f] * K for _ in range(K)])

    @property
    def exact(self) -> bool:
        return all(isinstance(v, Fraction) for row in self.f0 for v in row if v is not None)

    def f_plus(self, word) -> object:
        v = self.f0[word[0]][word[1]]
        if v is None:
            raise ValidationError(f"roof entry for pair {tuple(word[:2])} is absent")
        return v

    def f_value(self, word) -> object:
        v = self.f[word[0]][word[1]]
        if v is None:
            raise ValidationError(f"roof entry for pair {tuple(word[:2])} is absent")
        return v

    def transpose(self) -> "RoofFunction":
        """Table for the backward orientation: f-(b) = f0(b_-1, b_0) read on reversed words."""
        return RoofFunction([list(r) for r in zip(*self.f0)], [list(r) for r in zip(*self.f)], self.eta, self.eps0)

    def min_f0(self):
        return min(v for row in self.f0 for v in row if v is not None)

    def max_f0(self):
        return max(v for row in self.f0 for v in row if v is not None)

    def validate(self, eta=None, eps0=None, b0=None, eps=None) -> list:
        """Check the table bounds; returns a list of violated conditions."""
        eta = eta if eta is not None else self.eta
        eps0 = eps0 if eps0 is not None else self.eps0
        bad = []
        for i in range(self.K):
            for j in range(self.K):
                a, b = self.f0[i][j], self.f[i][j]
                if a is None:
                    continue
                if not a > 0:
                    bad.append(f"f0{(i, j)} must be positive")
                if b is not None and not (0 <= b <= a + 1e-15):
                    bad.append(f"need 0 <= f <= f0 at {(i, j)}")
                if eta is not None and eps0 is not None and a < eps0 * eta - 1e-12:
                    bad.append(f"f0{(i, j)} below the floor eps0*eta")
                if eta is not None and b0 is not None and eps0 is not None and a > max(b0, eps0) * eta + 1e-12:
                    bad.append(f"f0{(i, j)} above max(b0, eps0)*eta")
                if eps is not None and a > eps / 2 + 1e-12:
                    bad.append(f"f0{(i, j)} above eps/2")
        return bad

    def to_text(self) -> str:
        """Key-value (INI) serialisation: [roof] K, eta, eps0 and rows f0.i / f.i."""
        def fmt(v):
            return "-" if v is None else str(v)
        lines = ["[roof]", f"K = {self.K}"]
        if self.eta is not None:
            lines.append(f"eta = {self.eta}")
        if self.eps0 is not None:
            lines.append(f"eps0 = {self.eps0}")
        for i, row in enumerate(self.f0):
            lines.append(f"f0.{i} = " + " ".join(fmt(v) for v in row))
        for i, row in enumerate(self.f):
            lines.append(f"f.{i} = " + " ".join(fmt(v) for v in row))
        return "\n".join(lines) + "\n"

    def as_dict(self):
        def c(v):
            return None if v is None else (str(v) if isinstance(v, Fraction) else v)
        return {"f0": [[c(v) for v in r] for r in self.f0], "f": [[c(v) for v in r] for r in self.f],
                "eta": self.eta, "eps0": self.eps0}


def _vgamma_samples(model: SurfaceModel, spec: PartitionSpec, density: int, seed: int):
    """Deterministic low-discrepancy states in the chart and their eta-images."""
    x0, x1, y0, y1 = spec.domain
    n = int(density) * spec.K
    m = max(1, int(math.ceil(math.log2(max(n, 2)))))
    pts = qmc.Sobol(d=3, scramble=True, seed=seed).random_base2(m)
    states = []
    if isinstance(model, HyperbolicQuotient):
        for p in pts:
            w = complex(x0 + (x1 - x0) * p[0], y0 + (y1 - y0) * p[1])
            if abs(w) >= 0.999:
                continue
            z = 1j * (1 + w) / (1 - w)
            g = np.array([[math.sqrt(z.imag), z.real / math.sqrt(z.imag)], [0.0, 1.0 / math.sqrt(z.imag)]])
            th = math.pi * p[2]
            g = g @ np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
            r = model.reduce(g)[0]
            if np.all(np.abs(r - g) < 1e-10):
                states.append(model.from_matrix(g, reduce=False))
    elif isinstance(model, Revolution):
        for p in pts:
            states.append(model.state(x0 + (x1 - x0) * p[0], y0 + (y1 - y0) * p[1], 2 * math.pi * p[2]))
    elif isinstance(model, FlatTorus):
        for p in pts:
            states.append(model.state(x0 + (x1 - x0) * p[0], y0 + (y1 - y0) * p[1], 2 * math.pi * p[2]))
    else:
        raise ValidationError(f"cannot sample a {model.kind} model")
    return states


def roof_tables(model: SurfaceModel, spec: PartitionSpec, density: int = 16, seed: int = 0,
                cfg: Optional[HopfConfig] = None) -> RoofFunction:
    """f0(g) = eta inf_{V_g} max(U^u, eps0), f(g) = eta inf_{V_g} U^u, with
    the infima replaced by minima over a Sobol sample of the chart."""
    K = spec.K
    lo_f = np.full((K, K), np.inf)
    for st in _vgamma_samples(model, spec, density, seed):
        try:
            img = model.flow(st, spec.eta)
        except Exception:
            continue
        a = np.flatnonzero(spec.cover_membership(model.chart_coords(st)[None, :])[0])
        b = np.flatnonzero(spec.cover_membership(model.chart_coords(img)[None, :])[0])
        if a.size == 0 or b.size == 0:
            continue
        try:
            u = hopf_unstable(model, st, cfg)
        except NoConvergence as exc:
            raise NoConvergence(f"Hopf limit failed in V_g for cells {a.tolist()} -> {b.tolist()}: {exc}",
                                exc.iterates) from exc
        sub = lo_f[np.ix_(a, b)]
        lo_f[np.ix_(a, b)] = np.minimum(sub, u)
    f0, f = [], []
    for i in range(K):
        f0.append([None if not np.isfinite(lo_f[i, j]) else spec.eta * max(lo_f[i, j], spec.eps0) for j in range(K)])
        f.append([None if not np.isfinite(lo_f[i, j]) else spec.eta * max(lo_f[i, j], 0.0) for j in range(K)])
    return RoofFunction(f0, f, spec.eta, spec.eps0)


# ---------------------------------------------------------------------------
# Index families
@dataclass
class IndexFamily:
    words: list
    T: object
    orientation: str
    K: int

    def __len__(self):
        return len(self.words)

    def __iter__(self):
        return iter(self.words)

    def as_set(self):
        return set(self.words)


def _forward_family(roof: RoofFunction, T, cap: int) -> list:
    K = roof.K
    f0 = roof.f0
    out = []
    counter = [0]
    # stack of (word, S) where S = sum_{i=1}^{len-2} f0(w_i, w_{i+1})
    stack = []
    for a in range(K):
        for b in range(K):
            if f0[a][b] is None:
                continue
            stack.append(((a, b), 0))
    while stack:
        word, S = stack.pop()
        last = word[-1]
        for c in range(K):
            if f0[last][c] is None:
                continue
            nw = word + (c,)
            # for len(nw) >= 3 the new term is f0(nw[-2], nw[-1]) with index len-2 >= 1
            nS = S + f0[last][c]
            counter[0] += 1
            if counter[0] > cap:
                raise CombinatorialBlowup(f"index family exceeds cap {cap}")
            if nS > T:
                out.append(nw)
            else:
                stack.append((nw, nS))
    out.sort()
    return out


def index_family(roof: RoofFunction, T, orientation: str = "forward", cap: int = DEFAULT_CAP) -> IndexFamily:
    """All words a_0..a_k (k >= 2) with sum_{i=1}^{k-2} f+ <= T < sum_{i=1}^{k-1} f+.

    For ``orientation='backward'`` words are written b_{-k}..b_0 and the
    shifted sums use f-(b) = f0(b_{-1}, b_0); this is the forward family of
    the transposed table read right to left.
    """
    if roof.min_f0() <= 0:
        raise ValidationError("all roof entries must be positive for the family to be finite")
    if orientation == "forward":
        words = _forward_family(roof, T, cap)
    elif orientation == "backward":
        words = sorted(tuple(reversed(w)) for w in _forward_family(roof.transpose(), T, cap))
    else:
        raise ValidationError("orientation must be 'forward' or 'backward'")
    return IndexFamily(words, T, orientation, roof.K)


def brute_force_family(roof: RoofFunction, T, max_len: int = 10, orientation: str = "forward") -> set:
    """Oracle: test the defining inequality on every word of length 3..max_len."""
    out = set()
    for L in range(3, max_len + 1):
        for w in product(range(roof.K), repeat=L):
            r = w if orientation == "forward" else tuple(reversed(w))
            tab = roof if orientation == "forward" else roof.transpose()
            if any(tab.f0[r[i]][r[i + 1]] is None for i in range(L - 1)):
                continue
            k = L - 1
            s_lo = sum((tab.f0[r[i]][r[i + 1]] for i in range(1, k - 1)), 0)
            s_hi = s_lo + tab.f0[r[k - 1]][r[k]]
            if s_lo <= T < s_hi:
                out.add(w)
    return out


def stopping_prefix(x: Iterable[int], roof: RoofFunction, T) -> tuple:
    """The unique prefix of the sequence ``x`` lying in the forward family I(T).

    ``x`` may be any iterable (a finite list acts as a truncated sequence);
    running out of symbols raises :class:`HorizonExhausted`.
    """
    it = iter(x)
    word = []
    S = 0
    while True:
        try:
            word.append(int(next(it)))
        except StopIteration:
            raise HorizonExhausted(f"sequence ended after {len(word)} symbols before the stopping time")
        if len(word) >= 3:
            S = S + roof.f_plus(word[-2:])
            if S > T:
                return tuple(word)


# ---------------------------------------------------------------------------
# Suspension semiflow
@dataclass(frozen=True)
class SuspensionPoint:
    """(x, s) with x a finite truncation of a one-sided sequence and 0 <= s < f+(x)."""

    base: tuple
    s: object

    def check(self, roof: RoofFunction):
        if len(self.base) < 2:
            raise HorizonExhausted("base truncation too short to evaluate the roof")
        if not (0 <= self.s < roof.f_plus(self.base)):
            raise ValidationError("height must satisfy 0 <= s < f+(x)")


def suspension_step(p: SuspensionPoint, t, roof: RoofFunction) -> SuspensionPoint:
    """Suspension semiflow for time t >= 0 with roof f+."""
    if t < 0:
        raise ValidationError("suspension semiflow needs t >= 0")
    p.check(roof)
    total = p.s + t
    x = p.base
    j = 0
    while True:
        if j + 1 >= len(x):
            raise HorizonExhausted("base truncation too short for the requested time")
        r = roof.f_plus(x[j:j + 2])
        if total < r:
            break
        total = total - r
        j += 1
    if j + 1 >= len(x):
        raise HorizonExhausted("base truncation too short for the requested time")
    return SuspensionPoint(tuple(x[j:]), total)


@dataclass
class SuspensionMeasure:
    """Base cylinder measure times normalised Lebesgue measure on fibres."""

    base: object
    roof: RoofFunction
    normalizer: float

    def atom_mass(self, word) -> float:
        """Mass of [word] x [0, f+(word)) (word length >= 2)."""
        return float(self.base.mass(word)) * float(self.roof.f_plus(word)) / self.normalizer

    def total_mass(self) -> float:
        words, masses = self.base.level(2)
        acc = 0.0
        for w, m in zip(words, masses):
            acc += float(m) * float(self.roof.f_plus(tuple(w)))
        return acc / self.normalizer


def suspension_measure(base, roof: RoofFunction) -> SuspensionMeasure:
    """Normalised suspension measure; normalizer = sum_g f+(g) mu([g])."""
    words, masses = base.level(2)
    Z = 0.0
    for w, m in zip(words, masses):
        if m > 0:
            Z += float(m) * float(roof.f_plus(tuple(w)))
    if not Z > 0:
        raise ZeroNormalizer("sum_g f+(g) mu([g]) vanishes")
    return SuspensionMeasure(base, roof, Z)


def abramov(h_base: float, mean_roof: float) -> float:
    """Entropy of the suspension flow: base entropy / mean roof."""
    if not mean_roof > 0:
        raise ValidationError("mean roof must be positive")
    return h_base / mean_roof


def suspension_labels(probs: Sequence[float], roof: RoofFunction, tau, n_steps: int, n_orbits: int,
                      seed: int = 0, fibre_bins: bool = True) -> tuple:
    """Sample the suspension of an i.i.d. base at times 0, tau, 2 tau, ...

    Each orbit starts from the suspension measure (base symbols i.i.d. with
    ``probs``, height uniform on its fibre after size-biasing by the roof);
    the recorded label is the current base symbol x_0 and, with
    ``fibre_bins``, the index of the height sub-interval [i tau, (i+1) tau)
    of the fibre.  Returns (labels, alphabet size).
    """
    rng = np.random.default_rng(seed)
    K = len(probs)
    tau = float(tau)
    f0 = np.array([[float(v) for v in row] for row in roof.f0])
    p = np.asarray(probs, dtype=float)
    out = np.empty((n_orbits, n_steps), dtype=np.int64)
    # enough base symbols to cover the horizon
    horizon = tau * n_steps + f0.max()
    need = int(math.ceil(horizon / f0.min())) + 3
    nb = int(math.ceil(f0.max() / tau - 1e-12)) if fibre_bins else 1
    pair_w = (p[:, None] * p[None, :] * f0).ravel()
    pair_w = pair_w / pair_w.sum()
    for o in range(n_orbits):
        first = rng.choice(K * K, p=pair_w)
        x = np.empty(need, dtype=np.int64)
        x[0], x[1] = divmod(first, K)
        x[2:] = rng.choice(K, size=need - 2, p=p)
        rf = f0[x[:-1], x[1:]]
        cum = np.concatenate([[0.0], np.cumsum(rf)])
        s = rng.random() * rf[0]
        times = s + tau * np.arange(n_steps)
        idx = np.searchsorted(cum, times, side="right") - 1
        if fibre_bins:
            b = np.minimum(np.floor((times - cum[idx]) / tau).astype(np.int64), nb - 1)
            out[o] = x[idx] * nb + b
        else:
            out[o] = x[idx]
    return out, K * nb


# ---------------------------------------------------------------------------
# Refinement partition and joins
@dataclass
class RefinementAtom:
    word: tuple
    lo: object
    hi: object


def fibre_cuts(word, roof: RoofFunction, tau) -> list:
    """Heights in (0, f+(word)) at which the number of roof crossings made
    during one step of length tau changes: S_m(word) - tau for m >= 1."""
    cum = _cumsums(word, roof)
    fp = cum[1]
    return sorted({c - tau for c in cum[1:] if 0 < c - tau < fp})


def refinement_partition(roof: RoofFunction, N0: int, split_fibres: bool = False,
                         cap: int = DEFAULT_CAP) -> list:
    """Atoms [g] x [0, f+(g)) for g in the family I(1/N0).

    With ``split_fibres`` each fibre is further cut at :func:`fibre_cuts`,
    so that an atom also fixes how many base shifts the next step of length
    1/N0 performs; this variant is the one whose joins refine the stopping
    families (the plain one can fail from n = 3 on, see
    :func:`join_refines_family`).
    """
    if N0 < 1:
        raise ValidationError("N0 must be >= 1")
    T = Fraction(1, N0) if roof.exact else 1.0 / N0
    fam = index_family(roof, T, cap=cap)
    out = []
    for w in fam.words:
        edges = [0] + (fibre_cuts(w, roof, T) if split_fibres else []) + [roof.f_plus(w)]
        out.extend(RefinementAtom(w, a, b) for a, b in zip(edges[:-1], edges[1:]))
    return out


@dataclass
class JoinPiece:
    """A maximal s-interval of a base cylinder on which the itinerary through
    the refinement atoms at times 0, 1/N0, ..., (n-1)/N0 is constant."""

    word: tuple
    s_lo: object
    s_hi: object
    labels: tuple
    shifts: tuple
    end_shift: int
    end_sum: object


def _stop_len(x, start, roof, T):
    """Length of the T-stopping prefix of x[start:], or None if x is too short."""
    S = 0
    L = 0
    for j in range(start, len(x)):
        L += 1
        if L >= 3:
            S = S + roof.f0[x[j - 1]][x[j]]
            if S > T:
                return L
    return None


def _cumsums(x, roof):
    cum = [0]
    for j in range(len(x) - 1):
        cum.append(cum[-1] + roof.f0[x[j]][x[j + 1]])
    return cum


def refined_join(roof: RoofFunction, N0: int, n: int, cap: int = 10 ** 6,
                 extra_T=None, split_fibres: bool = False) -> list:
    """Brute-force join of the refinement partition under the suspension
    flow sampled at times j/N0, j = 0..n-1.

    Enumerates base cylinders adaptively (a symbol is added only when some
    piece needs it).  ``extra_T`` additionally requires the T-stopping
    prefix of every base word to be determined (used by refinement checks).
    With ``split_fibres`` labels are (word, fibre sub-interval index) pairs
    of the split refinement partition.  Returns a list of :class:`JoinPiece`.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    exact = roof.exact
    tau = Fraction(1, N0) if exact else 1.0 / N0
    K = roof.K
    pieces = []
    stack = [(a, b) for a in range(K) for b in range(K) if roof.f0[a][b] is not None]
    stack = [tuple(w) for w in stack]
    visited = 0
    while stack:
        w = stack.pop()
        visited += 1
        if visited > cap:
            raise CombinatorialBlowup("refined join exceeds cap")
        cum = _cumsums(w, roof)
        top = cum[1] + n * tau  # sup of s + n tau
        M = next((m for m in range(len(cum)) if cum[m] > top), None)
        ok = M is not None
        if ok:
            for m in range(M):
                if _stop_len(w, m, roof, tau) is None:
                    ok = False
                    break
        if ok and extra_T is not None and _stop_len(w, 0, roof, extra_T) is None:
            ok = False
        if not ok:
            for c in range(K):
                if roof.f0[w[-1]][c] is not None:
                    stack.append(w + (c,))
            continue
        fp = cum[1]
        bps = {0, fp}
        for m in range(M + 1):
            for j in range(n + 1):
                b = cum[m] - j * tau
                if 0 < b < fp:
                    bps.add(b)
        bps = sorted(bps)
        for lo, hi in zip(bps[:-1], bps[1:]):
            mid = (lo + hi) / 2
            labels, shifts = [], []
            for j in range(n):
                t = mid + j * tau
                m = max(i for i in range(len(cum)) if cum[i] <= t)
                L = _stop_len(w, m, roof, tau)
                g = tuple(w[m:m + L])
                if split_fibres:
                    height = t - cum[m]
                    labels.append((g, sum(1 for c in fibre_cuts(g, roof, tau) if c <= height)))
                else:
                    labels.append(g)
                shifts.append(m)
            t = mid + n * tau
            m_end = max(i for i in range(len(cum)) if cum[i] <= t)
            pieces.append(JoinPiece(w, lo, hi, tuple(labels), tuple(shifts), m_end, cum[m_end]))
    return pieces


def sandwich_report(pieces: list, N0: int, n: int, eps: float) -> dict:
    """Check (n/N0)(1-eps) <= sum_{j<k} f+(s^j a) <= (n/N0)(1+eps) for each piece,
    where k is the number of base shifts performed by time n/N0."""
    target = n / N0
    worst = 0.0
    ok = True
    for p in pieces:
        v = float(p.end_sum)
        dev = abs(v - target) / target
        worst = max(worst, dev)
        if not (target * (1 - eps) - 1e-12 <= v <= target * (1 + eps) + 1e-12):
            ok = False
    return {"passed": ok, "max_relative_deviation": worst, "pieces": len(pieces)}


def join_refines_family(pieces: list, roof: RoofFunction, T) -> dict:
    """Does every join atom (pieces grouped by label) sit inside a single
    cylinder of the stopping family I(T)?"""
    owner = {}
    bad = 0
    for p in pieces:
        L = _stop_len(p.word, 0, roof, T)
        if L is None:
            raise HorizonExhausted("piece word too short to determine the T-stopping prefix")
        cyl = tuple(p.word[:L])
        prev = owner.setdefault(p.labels, cyl)
        if prev != cyl:
            bad += 1
    return {"refines": bad == 0, "conflicts": bad, "atoms": len(owner)}
