"""Quantum side on the flat torus T = (R / 2 pi Z)^2, plus a dense-matrix backend.

Conventions
-----------
* Wavefunctions are sampled on an Nx x Ny periodic grid (powers of two)
  with L2 norm  sum |psi|^2 dx dy.  Plane waves e^{i n.x} / (2 pi) are
  Laplacian eigenfunctions with -hbar^2 Delta psi = psi for hbar = 1/|n|.
* The propagator U^t = exp(i t hbar Delta / 2) acts on the Fourier mode
  with wave vector k by the phase exp(-i hbar t |k|^2 / 2).
* Heisenberg evolution A(t) = U^{-t} A U^{t}.  Products of evolved
  multiplication operators are applied in a moving frame: a vector phi is
  stored as xi = U^{s} phi, so P(t) phi corresponds to xi' = P U^{t-s} xi
  and only one FFT pair per factor is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import fft as sfft

from .entropy import CylinderMeasure, PressureReport, log_weight, pressure_from_logs
from .errors import CombinatorialBlowup, HypothesisViolated, ValidationError, ZeroNormalizer
from .symbolic import RoofFunction, index_family

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# Grid and wavefunctions
def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


class TorusGrid:
    """Periodic grid on [0, 2 pi)^2."""

    def __init__(self, shape):
        if np.isscalar(shape):
            shape = (int(shape), int(shape))
        nx, ny = (int(v) for v in shape)
        if not (_is_pow2(nx) and _is_pow2(ny)):
            raise ValidationError("grid sizes must be powers of two")
        self.shape = (nx, ny)
        self.L = TWO_PI
        self.dx = TWO_PI / nx
        self.dy = TWO_PI / ny
        self.x = np.arange(nx) * self.dx
        self.y = np.arange(ny) * self.dy
        self.X, self.Y = np.meshgrid(self.x, self.y, indexing="ij")
        kx = np.fft.fftfreq(nx, 1.0 / nx)
        ky = np.fft.fftfreq(ny, 1.0 / ny)
        self.KX, self.KY = np.meshgrid(kx, ky, indexing="ij")
        self.K2 = self.KX ** 2 + self.KY ** 2
        self._phases = {}

    def phase(self, hbar: float, t: float) -> np.ndarray:
        """Fourier multiplier of U^t (cached; chains reuse a handful of times)."""
        key = (float(hbar), float(t))
        ph = self._phases.get(key)
        if ph is None:
            if len(self._phases) > 256:
                self._phases.clear()
            ph = np.exp(-0.5j * hbar * t * self.K2)
            self._phases[key] = ph
        return ph

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    def norm2(self, f) -> float:
        return float(np.sum(np.abs(f) ** 2) * self.cell_area)

    def inner(self, f, g) -> complex:
        return complex(np.sum(np.conj(f) * g) * self.cell_area)


@dataclass
class GridWavefunction:
    values: np.ndarray
    hbar: float
    grid: TorusGrid

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValidationError("values do not match the grid")
        n = self.norm()
        if abs(n - 1.0) > 1e-10:
            raise ValidationError(f"wavefunction norm {n:.3e} differs from 1")

    def norm(self) -> float:
        return math.sqrt(self.grid.norm2(self.values))

    @classmethod
    def plane_wave(cls, n, grid: TorusGrid, hbar: Optional[float] = None) -> "GridWavefunction":
        """e^{i n.x}/(2 pi); hbar defaults to 1/|n| so that the state sits on the energy shell."""
        n = np.asarray(n, dtype=float)
        if hbar is None:
            if not np.any(n):
                raise ValidationError("the zero mode has no natural hbar")
            hbar = 1.0 / float(np.hypot(*n))
        vals = np.exp(1j * (n[0] * grid.X + n[1] * grid.Y)) / TWO_PI
        return cls(vals, float(hbar), grid)

    @classmethod
    def wave_packet(cls, center, k0, width, grid: TorusGrid, hbar: float) -> "GridWavefunction":
        """Periodised Gaussian packet with mean wave vector k0."""
        vals = np.zeros(grid.shape, dtype=complex)
        for sx in (-1, 0, 1):
            for sy in (-1, 0, 1):
                dx = grid.X - center[0] + sx * TWO_PI
                dy = grid.Y - center[1] + sy * TWO_PI
                vals += np.exp(-(dx ** 2 + dy ** 2) / (2 * width ** 2))
        vals = vals * np.exp(1j * (k0[0] * grid.X + k0[1] * grid.Y))
        vals /= math.sqrt(grid.norm2(vals))
        return cls(vals, float(hbar), grid)

    @classmethod
    def random(cls, grid: TorusGrid, hbar: float, rng) -> "GridWavefunction":
        vals = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
        vals /= math.sqrt(grid.norm2(vals))
        return cls(vals, float(hbar), grid)


def _values(psi):
    return psi.values if isinstance(psi, GridWavefunction) else np.asarray(psi)


def propagate(psi, t: float, hbar: float, grid: TorusGrid) -> np.ndarray:
    """U^t psi = exp(i t hbar Delta / 2) psi by the exact Fourier multiplier."""
    v = _values(psi)
    if t == 0:
        return np.array(v, dtype=complex, copy=True)
    return _fmul(v, grid.phase(hbar, t))


# ---------------------------------------------------------------------------
# Smooth partitions
def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def mollified_indicator(x, a: float, b: float, width: float, period: float = TWO_PI):
    """Periodised smoothing of 1_[a, b); ``width`` = 0 gives the sharp indicator."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for k in (-2, -1, 0, 1, 2):
        xs = x + k * period
        if width == 0:
            out += ((xs >= a) & (xs < b)).astype(float)
        else:
            out += smooth_step((xs - a + width) / (2 * width)) - smooth_step((xs - b + width) / (2 * width))
    return out


class QuantumPartition:
    """Multiplication operators P_i >= 0 with sum P_i^2 = 1.

    ``cells`` are rectangles (x0, x1, y0, y1) on [0, 2 pi)^2; P_i is the
    product of mollified interval indicators, normalised pointwise.  The
    partition can be evaluated at arbitrary points (``evaluate``) for
    classical transport comparisons.
    """

    def __init__(self, cells, width: float, grid: TorusGrid):
        cells = np.atleast_2d(np.asarray(cells, dtype=float))
        if cells.shape[1] != 4:
            raise ValidationError("cells must be (x0, x1, y0, y1) rectangles")
        if width < 0:
            raise ValidationError("width must be >= 0")
        if width > 0 and np.any(np.minimum(cells[:, 1] - cells[:, 0], cells[:, 3] - cells[:, 2]) < 1e-12):
            raise ValidationError("degenerate cell")
        self.cells = cells
        self.width = float(width)
        self.grid = grid
        self.P = self.evaluate_all(grid.X, grid.Y)
        for i, p in enumerate(self.P):
            if not np.max(p) > 1e-12:
                raise ValidationError(f"cell {i} vanishes identically (width too large)")

    @property
    def K(self) -> int:
        return int(self.cells.shape[0])

    def _raw(self, X, Y):
        return [mollified_indicator(X, c[0], c[1], self.width) * mollified_indicator(Y, c[2], c[3], self.width)
                for c in self.cells]

    def evaluate_all(self, X, Y):
        raw = self._raw(X, Y)
        tot = np.sqrt(sum(r * r for r in raw))
        if np.any(tot <= 0):
            raise ValidationError("cells do not cover the torus")
        return [r / tot for r in raw]

    def evaluate(self, i: int, X, Y):
        return self.evaluate_all(X, Y)[i]

    def identity_residual(self) -> float:
        return float(np.max(np.abs(sum(p * p for p in self.P) - 1.0)))


def grid_cells(nx: int, ny: int) -> np.ndarray:
    """Equal nx x ny rectangles of the torus, index = ix * ny + iy."""
    xs = np.linspace(0, TWO_PI, nx + 1)
    ys = np.linspace(0, TWO_PI, ny + 1)
    return np.array([(xs[i], xs[i + 1], ys[j], ys[j + 1]) for i in range(nx) for j in range(ny)])


def smooth_partition(cells, mollifier_width: float, grid: TorusGrid) -> QuantumPartition:
    return QuantumPartition(cells, mollifier_width, grid)


# ---------------------------------------------------------------------------
# Operator chains
class FrameVector:
    """phi = U^{-s} xi; applying P(t) costs one FFT pair."""

    __slots__ = ("xi", "s")

    def __init__(self, xi, s=0.0):
        self.xi = xi
        self.s = s


def _fmul(v, mult):
    """Apply a Fourier multiplier."""
    return sfft.ifft2(sfft.fft2(v, workers=-1) * mult, workers=-1)


def _move(xi, dt, hbar, grid):
    if dt == 0:
        return xi
    return _fmul(xi, grid.phase(hbar, dt))


def apply_evolved(fv: FrameVector, P: np.ndarray, t: float, hbar: float, grid: TorusGrid) -> FrameVector:
    """P(t) phi with P(t) = U^{-t} P U^{t}."""
    return FrameVector(P * _move(fv.xi, t - fv.s, hbar, grid), t)


def to_lab(fv: FrameVector, hbar: float, grid: TorusGrid) -> np.ndarray:
    return _move(fv.xi, -fv.s, hbar, grid)


def word_factors(word, eta: float, orientation: str = "forward") -> list:
    """(symbol, time) factors in application order.

    forward  tau_a = P_{a_k}(k eta) ... P_{a_1}(eta) P_{a_0}
    backward pi_b  = P_{b_-k}(-k eta) ... P_{b_-2}(-2 eta) P_{b_0} P_{b_-1}(-eta)
    with the backward word written b_{-k}, ..., b_0.
    """
    word = tuple(int(a) for a in word)
    if orientation == "forward":
        return [(a, j * eta) for j, a in enumerate(word)]
    if orientation != "backward":
        raise ValidationError("orientation must be 'forward' or 'backward'")
    k = len(word) - 1
    if k == 0:
        return [(word[0], 0.0)]
    b = {-(k - i): a for i, a in enumerate(word)}  # b[-j] = beta_{-j}
    out = [(b[-1], -eta), (b[0], 0.0)]
    for j in range(2, k + 1):
        out.append((b[-j], -j * eta))
    return out


def quantum_word(psi, word, eta: float, hbar: float, partition: QuantumPartition,
                 orientation: str = "forward") -> np.ndarray:
    """tau_a psi (forward) or pi_b psi (backward), unnormalised."""
    grid = partition.grid
    fv = FrameVector(np.array(_values(psi), dtype=complex))
    for a, t in word_factors(word, eta, orientation):
        if a < 0 or a >= partition.K:
            raise ValidationError(f"symbol {a} out of range")
        fv = apply_evolved(fv, partition.P[a], t, hbar, grid)
    return to_lab(fv, hbar, grid)


def word_mass(psi, word, eta, hbar, partition, orientation="forward") -> float:
    grid = partition.grid
    fv = FrameVector(np.array(_values(psi), dtype=complex))
    for a, t in word_factors(word, eta, orientation):
        fv = apply_evolved(fv, partition.P[a], t, hbar, grid)
    return grid.norm2(fv.xi)


def cylinder_measure(psi, depth: int, eta: float, hbar: float, partition: QuantumPartition,
                     orientation: str = "forward", cap: int = 10 ** 6) -> CylinderMeasure:
    """Masses ||tau_a psi||^2 (or ||pi_b psi||^2) for all words of length 1..depth.

    Backward measures are stored in time-reversed order (x_0 = b_0,
    x_1 = b_{-1}, ...), so that extending a cylinder into the past appends a
    symbol; the one-symbol masses follow the compatibility convention
    mu([b_0]) = sum_{b_-1} mu([b_-1, b_0]).
    """
    K = partition.K
    if depth < 1:
        raise ValidationError("depth must be >= 1")
    if sum(K ** d for d in range(1, depth + 1)) > cap:
        raise CombinatorialBlowup("cylinder table exceeds cap")
    grid = partition.grid
    dA = grid.cell_area
    P2 = [p * p for p in partition.P]
    root = FrameVector(np.array(_values(psi), dtype=complex))
    table = {}

    if orientation == "forward":
        def rec(word, fv, j):
            # children at time j * eta
            moved = _move(fv.xi, j * eta - fv.s, hbar, grid)
            a2 = np.abs(moved) ** 2
            for a in range(K):
                w = word + (a,)
                table[w] = float(np.sum(P2[a] * a2) * dA)
                if len(w) < depth:
                    rec(w, FrameVector(partition.P[a] * moved, j * eta), j + 1)
        rec((), root, 0)
    elif orientation == "backward":
        if depth >= 2:
            back = _move(root.xi, -eta, hbar, grid)  # frame s = -eta
            for b1 in range(K):
                fv1 = FrameVector(partition.P[b1] * back, -eta)
                moved = _move(fv1.xi, eta, hbar, grid)  # to s = 0
                for b0 in range(K):
                    xi = partition.P[b0] * moved
                    w = (b0, b1)
                    table[w] = grid.norm2(xi)
                    if depth > 2:
                        _back_rec(w, FrameVector(xi, 0.0), 2, depth, K, partition, P2, eta, hbar, grid, table)
            for b0 in range(K):
                table[(b0,)] = sum(table[(b0, b1)] for b1 in range(K))
        else:
            for b0 in range(K):
                table[(b0,)] = float(np.sum(P2[b0] * np.abs(root.xi) ** 2) * dA)
    else:
        raise ValidationError("orientation must be 'forward' or 'backward'")
    return CylinderMeasure.from_mapping(K, table)


def _back_rec(word, fv, j, depth, K, partition, P2, eta, hbar, grid, table):
    moved = _move(fv.xi, -j * eta - fv.s, hbar, grid)
    a2 = np.abs(moved) ** 2
    for a in range(K):
        w = word + (a,)
        table[w] = float(np.sum(P2[a] * a2) * grid.cell_area)
        if len(w) < depth:
            _back_rec(w, FrameVector(partition.P[a] * moved, -j * eta), j + 1, depth, K, partition, P2,
                      eta, hbar, grid, table)


# ---------------------------------------------------------------------------
def egorov_compare(n, word, eta: float, partition: QuantumPartition, hbar: Optional[float] = None) -> float:
    """|quantum - classical| for the cylinder [word] of a plane wave e^{i n.x}.

    Classical side: integral of prod_j P_{a_j}^2(x + j eta omega) against
    the uniform density 1/(2 pi)^2, omega = n/|n|.
    """
    grid = partition.grid
    psi = GridWavefunction.plane_wave(n, grid, hbar)
    q = word_mass(psi, word, eta, psi.hbar, partition)
    n = np.asarray(n, dtype=float)
    omega = n / np.hypot(*n)
    prod = np.ones(grid.shape)
    for j, a in enumerate(word):
        pa = partition.evaluate(int(a), grid.X + j * eta * omega[0], grid.Y + j * eta * omega[1])
        prod = prod * pa * pa
    c = float(np.sum(prod) * grid.cell_area) / TWO_PI ** 2
    return abs(q - c)


def egorov_error(n, eta: float, partition: QuantumPartition, max_len: int = 3, hbar=None) -> float:
    """max over all words of length 1..max_len of :func:`egorov_compare`."""
    err = 0.0
    for L in range(1, max_len + 1):
        for w in product(range(partition.K), repeat=L):
            err = max(err, egorov_compare(n, w, eta, partition, hbar))
    return err


# ---------------------------------------------------------------------------
# Energy cutoffs
def smooth_plateau(t, delta0: float):
    """chi_{delta0}: 1 on |t| <= e^{-delta0/2}, 0 on |t| >= 1, quintic smoothstep between."""
    a = math.exp(-delta0 / 2.0)
    s = np.clip((np.abs(np.asarray(t, dtype=float)) - a) / (1.0 - a), 0.0, 1.0)
    return 1.0 - s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


@dataclass
class CutoffSpec:
    delta0: float
    n: int
    hbar: float

    def __post_init__(self):
        if not 0 < self.delta0 < 1:
            raise ValidationError("delta0 must lie in (0, 1)")
        if self.n < 0:
            raise ValidationError("n must be >= 0")
        if not 2 * math.exp(self.n * self.delta0) * self.hbar ** (1 - self.delta0) < 1:
            raise ValidationError("cutoff window is not microscopic: 2 e^{n delta0} hbar^{1-delta0} >= 1")

    def symbol(self, energy):
        scale = math.exp(-self.n * self.delta0) * self.hbar ** (-1 + self.delta0)
        return smooth_plateau(scale * (np.asarray(energy) - 0.5), self.delta0)

    def multiplier(self, grid: TorusGrid) -> np.ndarray:
        return self.symbol(0.5 * self.hbar ** 2 * grid.K2)


def energy_cutoff(psi, spec: CutoffSpec, grid: TorusGrid) -> np.ndarray:
    """Op(chi^(n)) psi as a Fourier multiplier in xi = hbar k."""
    return _fmul(_values(psi), spec.multiplier(grid))


# ---------------------------------------------------------------------------
# Finite-dimensional partitions of identity and the uncertainty principle
@dataclass
class MatrixPartition:
    mats: list

    def __post_init__(self):
        self.mats = [np.asarray(m, dtype=complex) for m in self.mats]
        N = self.mats[0].shape[1]
        S = sum(m.conj().T @ m for m in self.mats)
        if np.linalg.norm(S - np.eye(N), 2) > 1e-10:
            raise ValidationError("operators do not form a partition of identity")

    @property
    def dim(self) -> int:
        return self.mats[0].shape[1]

    def __len__(self):
        return len(self.mats)


def coordinate_partition(N: int) -> MatrixPartition:
    mats = []
    for k in range(N):
        e = np.zeros((N, N), dtype=complex)
        e[k, k] = 1.0
        mats.append(e)
    return MatrixPartition(mats)


def random_partition(N: int, m: int, rng) -> MatrixPartition:
    """pi_k = rows kN..(k+1)N of a random (mN x N) isometry."""
    A = rng.standard_normal((m * N, N)) + 1j * rng.standard_normal((m * N, N))
    Q, _ = np.linalg.qr(A)
    return MatrixPartition([Q[k * N:(k + 1) * N] for k in range(m)])


def dft_matrix(N: int) -> np.ndarray:
    j = np.arange(N)
    return np.exp(-2j * math.pi * np.outer(j, j) / N) / math.sqrt(N)


def quantum_pressure(psi, ops, V) -> PressureReport:
    """p = -sum ||pi_k psi||^2 log ||pi_k psi||^2 - 2 sum ||pi_k psi||^2 log V_k."""
    psi = np.asarray(psi, dtype=complex)
    if abs(np.linalg.norm(psi) - 1) > 1e-10:
        raise ValidationError("psi must be normalised")
    if isinstance(ops, MatrixPartition):
        ops = ops.mats
    masses = [float(np.linalg.norm(m @ psi) ** 2) for m in ops]
    V = np.asarray(V, dtype=float)
    if V.shape != (len(masses),):
        raise ValidationError("weights misaligned with the partition")
    return pressure_from_logs(masses, np.log(V))


def op_norm(apply: Callable, apply_adj: Callable, shape, rng, tol: float = 1e-6, max_iter: int = 200) -> float:
    """Largest singular value by power iteration on A*A."""
    v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    v /= np.linalg.norm(v)
    prev = 0.0
    for _ in range(max_iter):
        w = apply_adj(apply(v))
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        est = math.sqrt(nw)
        v = w / nw
        if abs(est - prev) <= tol * est:
            break
        prev = est
    return float(np.linalg.norm(apply(v)))


def eup_check(pi: MatrixPartition, tau: MatrixPartition, U, V, W, psi, O=None,
              delta_prime: float = 0.0) -> dict:
    """Both sides of p_tau(U psi) + p_pi(psi) >= -2 log(c_O + N A B delta')."""
    U = np.asarray(U, dtype=complex)
    N = pi.dim
    if np.linalg.norm(U.conj().T @ U - np.eye(N), 2) > 1e-10:
        raise ValidationError("U must be an isometry")
    psi = np.asarray(psi, dtype=complex)
    O = [np.eye(N)] * len(pi) if O is None else [np.asarray(o, dtype=complex) for o in O]
    resid = max(float(np.linalg.norm((np.eye(N) - o) @ (p @ psi))) for o, p in zip(O, pi.mats))
    if resid > delta_prime + 1e-12:
        raise HypothesisViolated(f"||(Id - O_k) pi_k psi|| = {resid:.3e} exceeds delta' = {delta_prime:.3e}")
    V = np.asarray(V, dtype=float)
    W = np.asarray(W, dtype=float)
    p_pi = quantum_pressure(psi, pi, V)
    p_tau = quantum_pressure(U @ psi, tau, W)
    c = 0.0
    for k, (pk, ok) in enumerate(zip(pi.mats, O)):
        right = U @ pk.conj().T @ ok
        for j, tj in enumerate(tau.mats):
            c = max(c, V[k] * W[j] * float(np.linalg.norm(tj @ right, 2)))
    bound_arg = c + len(pi) * V.max() * W.max() * delta_prime
    left = p_pi.p + p_tau.p
    right_side = -2.0 * math.log(bound_arg)
    return {"left": left, "right": right_side, "slack": left - right_side, "c_O": c,
            "p_pi": p_pi.as_dict(), "p_tau": p_tau.as_dict(), "premise_residual": resid}


def random_eup_instance(rng, N: Optional[int] = None, with_cutoff: bool = False) -> dict:
    """Random (pi, tau, U, V, W, psi[, O, delta']) with N <= 16 and weights in [1, e]."""
    from scipy.stats import unitary_group

    N = int(rng.integers(2, 17)) if N is None else N
    m1, m2 = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    pi = random_partition(N, m1, rng)
    tau = random_partition(N, m2, rng)
    U = unitary_group.rvs(N, random_state=rng)
    V = np.exp(rng.random(m1))
    W = np.exp(rng.random(m2))
    psi = rng.standard_normal(N) + 1j * rng.standard_normal(N)
    psi /= np.linalg.norm(psi)
    inst = {"pi": pi, "tau": tau, "U": U, "V": V, "W": W, "psi": psi}
    if with_cutoff:
        O = []
        for _ in range(m1):
            d = np.clip(1 - 0.2 * rng.random(N), 0, 1)
            Q = unitary_group.rvs(N, random_state=rng)
            O.append(Q @ np.diag(d) @ Q.conj().T)
        inst["O"] = O
        inst["delta_prime"] = max(float(np.linalg.norm((np.eye(N) - o) @ (p @ psi))) for o, p in zip(O, pi.mats))
    return inst


# ---------------------------------------------------------------------------
# Pressure-bound pipeline on the torus
def ehrenfest(hbar: float, eps: float, eps_prime: float) -> tuple:
    """n_E = floor((1 - eps') |log hbar|) and T_E = (1 - eps) n_E."""
    nE = int(math.floor((1 - eps_prime) * abs(math.log(hbar))))
    return nE, (1 - eps) * nE


@dataclass
class PipelineConfig:
    n: Optional[tuple] = None
    cells: tuple = (2, 2)
    width: float = 0.1
    eta: float = 1.2
    eps: float = 0.1
    eps_prime: float = 0.1
    eps0: float = 1.0
    delta0: float = 0.1
    c_chi_orbits: int = 2
    c_chi_samples: int = 0
    seed: int = 0
    cap: int = 10 ** 5


def _chain_apply(steps, v, hbar, grid, adjoint=False):
    """Apply a list of ('P', array, t) / ('U', t) / ('M', multiplier) steps."""
    fv = FrameVector(v, 0.0)
    seq = reversed(steps) if adjoint else steps
    for st in seq:
        if st[0] == "P":
            fv = apply_evolved(fv, st[1], st[2], hbar, grid)
        elif st[0] == "U":
            # U^{dt} phi with phi = U^{-s} xi: xi unchanged, s -> s - dt
            dt = -st[1] if adjoint else st[1]
            fv = FrameVector(fv.xi, fv.s - dt)
        else:
            mult = np.conj(st[1]) if adjoint else st[1]
            lab = to_lab(fv, hbar, grid)
            fv = FrameVector(_fmul(lab, mult), 0.0)
    return to_lab(fv, hbar, grid)


def pressure_bound_pipeline(partition: QuantumPartition, roof: RoofFunction, hbar: float,
                            cfg: Optional[PipelineConfig] = None, psi: Optional[GridWavefunction] = None,
                            norm_cache: Optional[dict] = None) -> dict:
    """Both suspension pressures at the Ehrenfest scale, the measured norm
    constant c_chi and the resulting lower bound.

    For each pair g = (g0, g1), P_g psi = P_{g1} P_{g0}(-eta) psi; the words of
    the forward family I(T_E) are g.a' and those of the backward family are
    b'.g.  The suspension masses are c_g ||tau_{g.a'} psi||^2 (resp.
    ||pi_{b'.g} psi||^2) with c_g = f0(g) / sum_g' f0(g') ||P_g' psi||^2.
    ``norm_cache`` (a dict) lets runs that share the partition, hbar and
    families reuse the measured operator norms.  The bound is

        p+ + p-  >=  -2 log(c_chi + max_g N_g A_g B_g delta'_g) - 2 log max_g c_g ,

    with delta'_g = max_b' ||(Id - Op(chi^(k'))) pi~_b' psi~_g|| measured
    and N_g, A_g, B_g the family size and maximal weights.  The variant with
    a single -log max c_g is reported alongside.
    """
    cfg = cfg or PipelineConfig()
    grid = partition.grid
    K = partition.K
    if roof.K != K:
        raise ValidationError("roof table and partition disagree on K")
    if psi is None:
        n = cfg.n if cfg.n is not None else (int(round(1.0 / hbar)), 0)
        psi = GridWavefunction.plane_wave(n, grid, hbar)
    eta = cfg.eta
    nE, TE = ehrenfest(hbar, cfg.eps, cfg.eps_prime)
    if nE < 1:
        raise ValidationError("hbar too large: Ehrenfest index is zero")
    fwd = index_family(roof, TE, "forward", cap=cfg.cap)
    bwd = index_family(roof, TE, "backward", cap=cfg.cap)

    # forward masses by prefix-sharing depth-first evaluation
    m_plus = {}
    fam_f = fwd.as_set()
    maxlen_f = max(len(w) for w in fwd.words)

    def rec_f(word, fv, j):
        moved = _move(fv.xi, j * eta - fv.s, hbar, grid)
        for a in range(K):
            w = word + (a,)
            xi = partition.P[a] * moved
            if w in fam_f:
                m_plus[w] = grid.norm2(xi)
            elif len(w) < maxlen_f:
                rec_f(w, FrameVector(xi, j * eta), j + 1)
    rec_f((), FrameVector(np.array(psi.values, dtype=complex)), 0)

    # backward: words b_-k..b_0 built from the right end
    m_minus, resid_minus = {}, {}
    fam_b = bwd.as_set()
    maxlen_b = max(len(w) for w in bwd.words)
    a_g, Pg = {}, {}
    back = _move(psi.values.astype(complex), -eta, hbar, grid)
    for g0 in range(K):
        fv1 = partition.P[g0] * back
        moved = _move(fv1, eta, hbar, grid)
        for g1 in range(K):
            xi = partition.P[g1] * moved
            Pg[(g0, g1)] = xi
            a_g[(g0, g1)] = grid.norm2(xi)

    def rec_b(word, fv, j):
        moved = _move(fv.xi, -j * eta - fv.s, hbar, grid)
        for a in range(K):
            w = (a,) + word
            xi = partition.P[a] * moved
            if w in fam_b:
                m_minus[w] = grid.norm2(xi)
                kprime = len(w) - 2
                spec = CutoffSpec(cfg.delta0, kprime, hbar)
                mult = spec.multiplier(grid)
                # (Id - O) commutes with U, so the frame vector can be used directly
                r = _fmul(xi, 1 - mult)
                resid_minus[w] = math.sqrt(grid.norm2(r))
            elif len(w) < maxlen_b:
                rec_b(w, FrameVector(xi, -j * eta), j + 1)
    for g, xi in Pg.items():
        rec_b(g, FrameVector(xi, 0.0), 2)

    Z = sum(float(roof.f_plus(g)) * a_g[g] for g in a_g)
    if not Z > 0:
        raise ZeroNormalizer("sum_g f0(g) ||P_g psi||^2 vanishes")
    c_g = {g: float(roof.f_plus(g)) / Z for g in a_g}

    keys_p = sorted(m_plus)
    keys_m = sorted(m_minus)
    mu_p = [c_g[w[:2]] * m_plus[w] for w in keys_p]
    mu_m = [c_g[w[-2:]] * m_minus[w] for w in keys_m]
    lw_p = [log_weight(w, roof, "forward") for w in keys_p]
    lw_m = [log_weight(w, roof, "backward") for w in keys_m]
    p_plus = pressure_from_logs(mu_p, lw_p)
    p_minus = pressure_from_logs(mu_m, lw_m)

    # conditional families
    by_g_f, by_g_b = {}, {}
    for w in keys_p:
        by_g_f.setdefault(w[:2], []).append(w)
    for w in keys_m:
        by_g_b.setdefault(w[-2:], []).append(w)
    mass_check = max(max(abs(sum(m_plus[w] for w in by_g_f.get(g, [])) - a_g[g]),
                         abs(sum(m_minus[w] for w in by_g_b.get(g, [])) - a_g[g])) for g in a_g)

    X = 0.0
    per_g = {}
    for g in sorted(a_g):
        if a_g[g] <= 1e-300:
            continue
        Ng = len(by_g_b.get(g, []))
        Ag = max(math.exp(lw) for w, lw in zip(keys_m, lw_m) if w[-2:] == g)
        Bg = max(math.exp(lw) for w, lw in zip(keys_p, lw_p) if w[:2] == g)
        dg = max(resid_minus[w] for w in by_g_b[g]) / math.sqrt(a_g[g])
        X = max(X, Ng * Ag * Bg * dg)
        per_g[str(g)] = {"a": a_g[g], "c": c_g[g], "N": Ng, "A": Ag, "B": Bg, "delta_prime": dg}

    c_chi, probes = measure_c_chi(partition, roof, hbar, fwd, bwd, cfg, norm_cache)
    cmax = max(c_g.values())
    arg = c_chi + X
    rhs = -2.0 * math.log(arg) - 2.0 * math.log(cmax)
    rhs_single = -2.0 * math.log(arg) - math.log(cmax)
    # diagnostic: the bound with the cutoff-residual term dropped
    rhs_bare = -2.0 * math.log(c_chi) - 2.0 * math.log(cmax)
    left = p_plus.p + p_minus.p
    return {
        "hbar": hbar, "n_E": nE, "T_E": TE, "eta": eta,
        "family_sizes": {"forward": len(fwd), "backward": len(bwd)},
        "p_plus": p_plus.as_dict(), "p_minus": p_minus.as_dict(), "left": left,
        "c_chi": c_chi, "c_chi_probes": probes, "delta_term": X, "max_c_gamma": cmax,
        "right": rhs, "slack": left - rhs, "right_single_log": rhs_single, "slack_single_log": left - rhs_single,
        "right_without_residual": rhs_bare, "slack_without_residual": left - rhs_bare,
        "conditional_mass_error": mass_check, "per_gamma": per_g,
    }


def _cells_at(partition: QuantumPartition, X, Y) -> np.ndarray:
    """Index of the dominant partition function at each point."""
    vals = partition.evaluate_all(np.mod(X, TWO_PI), np.mod(Y, TWO_PI))
    return np.argmax(np.stack(vals), axis=0)


def orbit_word_pairs(partition: QuantumPartition, fwd, bwd, eta: float, hbar: float,
                     per_gamma: int = 2, n_orbits: int = 512, seed: int = 0) -> dict:
    """Word pairs (g.a', b'.g) read off the itineraries of classical orbits.

    Orbits x + t(cos th, sin th) start at uniform random points with
    directions resolvable on the grid (|hbar^{-1} cos th| and |hbar^{-1} sin th|
    below the Nyquist index).  The cell of x + t v at t = j eta is symbol j;
    the forward word is the family member that prefixes the itinerary on
    t >= 0 and the backward word the member that suffixes it on t <= eta.
    Returns {g: [(wf, wb), ...]} with at most ``per_gamma`` distinct pairs.
    """
    rng = np.random.default_rng(seed)
    grid = partition.grid
    fam_f, fam_b = fwd.as_set(), bwd.as_set()
    Lf = max(len(w) for w in fwd.words)
    Lb = max(len(w) for w in bwd.words)
    kmax = (np.array(grid.shape) // 2 - 1) * hbar
    th = rng.uniform(0.0, TWO_PI, 4 * n_orbits)
    start = rng.uniform(0.0, TWO_PI, (4 * n_orbits, 2))
    ok = (np.abs(np.cos(th)) <= kmax[0]) & (np.abs(np.sin(th)) <= kmax[1])
    th, start = th[ok][:n_orbits], start[ok][:n_orbits]
    times = np.arange(2 - Lb, max(Lf, 2)) * eta
    X = start[:, :1] + times[None, :] * np.cos(th)[:, None]
    Y = start[:, 1:] + times[None, :] * np.sin(th)[:, None]
    cells = _cells_at(partition, X, Y)
    zero = Lb - 2  # column of t = 0
    out = {}
    for row in cells:
        ahead = tuple(int(v) for v in row[zero:zero + Lf])
        behind = tuple(int(v) for v in row[:zero + 2])
        wf = next((ahead[:m] for m in range(1, Lf + 1) if ahead[:m] in fam_f), None)
        wb = next((behind[-m:] for m in range(1, Lb + 1) if behind[-m:] in fam_b), None)
        if wf is None or wb is None:
            continue
        lst = out.setdefault(wf[:2], [])
        if (wf, wb) not in lst and len(lst) < per_gamma:
            lst.append((wf, wb))
    return out


def measure_c_chi(partition: QuantumPartition, roof: RoofFunction, hbar: float, fwd, bwd,
                  cfg: PipelineConfig, norm_cache: Optional[dict] = None) -> tuple:
    """max W+ W- ||tau~_a' U^{-eta} pi~_b'^* Op(chi^(k'))|| over sampled (g, a', b').

    The sample holds, for every g, up to ``c_chi_orbits`` pairs following
    classical orbits (:func:`orbit_word_pairs`; these carry the large norms,
    since words that no orbit realises are suppressed), plus
    ``c_chi_samples`` uniformly random pairs; a g that no sampled orbit
    realises gets one random pair.  Everything is seeded by ``cfg.seed``.
    Norms are stored in ``norm_cache`` keyed by (hbar, delta0, a', b').
    """
    rng = np.random.default_rng(cfg.seed)
    grid = partition.grid
    eta = cfg.eta
    cache = {} if norm_cache is None else norm_cache
    mults = {}
    by_g_f, by_g_b = {}, {}
    for w in fwd.words:
        by_g_f.setdefault(w[:2], []).append(w)
    for w in bwd.words:
        by_g_b.setdefault(w[-2:], []).append(w)
    orbit_pairs = orbit_word_pairs(partition, fwd, bwd, eta, hbar, cfg.c_chi_orbits, seed=cfg.seed) \
        if cfg.c_chi_orbits > 0 else {}
    best = 0.0
    probes = 0
    for g in sorted(set(by_g_f) & set(by_g_b)):
        F, B = by_g_f[g], by_g_b[g]
        picks = list(orbit_pairs.get(g, []))
        n_random = cfg.c_chi_samples if picks else max(1, cfg.c_chi_samples)
        for _ in range(n_random):
            picks.append((F[int(rng.integers(len(F)))], B[int(rng.integers(len(B)))]))
        for wf, wb in picks:
            key = (float(hbar), float(cfg.delta0), tuple(wf), tuple(wb))
            if key not in cache:
                kprime = len(wb) - 2
                if kprime not in mults:
                    mults[kprime] = CutoffSpec(cfg.delta0, kprime, hbar).multiplier(grid)
                steps = [("M", mults[kprime])]
                # pi~_b'^* = P_{b'_-2}(-2 eta) ... P_{b'_-n}(-n eta): apply b'_-n first
                n_b = len(wb) - 2
                for i in range(n_b):
                    j = n_b + 1 - i  # time index n, n-1, ..., 2
                    steps.append(("P", partition.P[wb[i]], -j * eta))
                steps.append(("U", -eta))
                for i, a in enumerate(wf[2:]):
                    steps.append(("P", partition.P[a], (i + 2) * eta))
                cache[key] = op_norm(lambda v: _chain_apply(steps, v, hbar, grid),
                                     lambda v: _chain_apply(steps, v, hbar, grid, adjoint=True),
                                     grid.shape, np.random.default_rng(cfg.seed))
            val = math.exp(log_weight(wf, roof, "forward") + log_weight(wb, roof, "backward")) * cache[key]
            best = max(best, val)
            probes += 1
    return best, probes
