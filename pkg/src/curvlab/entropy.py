"""Entropy and pressure of partitions, cylinder measures and their joins.

All logarithms are natural.  Sums run over atoms in sorted key order so
that repeated evaluations reproduce bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import CombinatorialBlowup, ValidationError
from .symbolic import RoofFunction, refined_join

MASS_TOL = 1e-9


# ---------------------------------------------------------------------------
class CylinderMeasure:
    """Masses of cylinders [a_0 ... a_{d-1}] for depths d = 1..max_depth.

    Either built from explicit tables (``levels[d] = (words, masses)`` with
    ``words`` an (n, d) integer array in lexicographic order) or from a rule
    ``word -> mass`` valid at every length (product and Markov measures).
    """

    def __init__(self, K: int, levels: Optional[dict] = None, rule: Optional[Callable] = None,
                 max_depth: Optional[int] = None):
        if K < 1:
            raise ValidationError("alphabet size must be >= 1")
        if levels is None and rule is None:
            raise ValidationError("need explicit levels or a mass rule")
        self.K = int(K)
        self._levels = {} if levels is None else dict(levels)
        self._rule = rule
        if max_depth is None:
            max_depth = max(self._levels) if self._levels else 16
        self.max_depth = int(max_depth)
        self._lookup = {}

    # -- constructors -----------------------------------------------------
    @classmethod
    def from_mapping(cls, K: int, table: Mapping) -> "CylinderMeasure":
        """From a {word tuple: mass} mapping holding every depth 1..D."""
        by_depth = {}
        for w, m in table.items():
            w = tuple(int(a) for a in w)
            if any(a < 0 or a >= K for a in w):
                raise ValidationError(f"symbol out of range in {w}")
            if m < 0:
                raise ValidationError(f"negative mass for {w}")
            by_depth.setdefault(len(w), {})[w] = float(m)
        levels = {}
        for d, tab in by_depth.items():
            keys = sorted(tab)
            levels[d] = (np.array(keys, dtype=np.int64).reshape(len(keys), d),
                         np.array([tab[k] for k in keys], dtype=float))
        return cls(K, levels)

    @classmethod
    def bernoulli(cls, probs: Sequence[float], max_depth: int = 16) -> "CylinderMeasure":
        p = np.asarray(probs, dtype=float)
        if np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
            raise ValidationError("probabilities must be nonnegative and sum to 1")
        return cls(len(p), rule=lambda w: float(np.prod(p[list(w)])), max_depth=max_depth)

    @classmethod
    def markov(cls, P, pi=None, max_depth: int = 16) -> "CylinderMeasure":
        """Stationary Markov measure; ``pi`` defaults to the stationary vector."""
        P = np.asarray(P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or np.any(P < 0) or not np.allclose(P.sum(1), 1):
            raise ValidationError("P must be a square stochastic matrix")
        if pi is None:
            w, v = np.linalg.eig(P.T)
            pi = np.real(v[:, np.argmin(np.abs(w - 1))])
            pi = pi / pi.sum()
        pi = np.asarray(pi, dtype=float)

        def rule(word):
            m = pi[word[0]]
            for a, b in zip(word[:-1], word[1:]):
                m *= P[a, b]
            return float(m)
        return cls(P.shape[0], rule=rule, max_depth=max_depth)

    @classmethod
    def periodic(cls, word: Sequence[int], K: int, max_depth: int = 12) -> "CylinderMeasure":
        """Invariant measure on the orbit of the periodic sequence word word word ..."""
        word = tuple(int(a) for a in word)
        p = len(word)
        ext = word * (max_depth // p + 2)

        def rule(w):
            L = len(w)
            return sum(1 for r in range(p) if ext[r:r + L] == tuple(w)) / p
        return cls(K, rule=rule, max_depth=max_depth)

    @classmethod
    def from_sequences(cls, seqs, K: int, depth: int, burn_in: float = 0.1) -> "CylinderMeasure":
        """Empirical (Birkhoff) cylinder frequencies from symbol sequences.

        ``seqs`` is an (orbits, length) integer array; the first ``burn_in``
        fraction of every orbit is discarded.  Windows of each depth are
        counted across all orbits.
        """
        seqs = np.atleast_2d(np.asarray(seqs, dtype=np.int64))
        start = int(math.floor(burn_in * seqs.shape[1]))
        seqs = seqs[:, start:]
        L = seqs.shape[1]
        if L < depth:
            raise ValidationError("sequences shorter than the requested depth after burn-in")
        if K ** depth > 2 ** 62:
            raise CombinatorialBlowup("depth too large for integer word codes")
        levels = {}
        nwin = L - depth + 1  # same window count at every depth keeps compatibility exact
        for d in range(1, depth + 1):
            code = np.zeros((seqs.shape[0], nwin), dtype=np.int64)
            for j in range(d):
                code = code * K + seqs[:, j:j + nwin]
            keys, counts = np.unique(code.ravel(), return_counts=True)
            words = np.empty((keys.size, d), dtype=np.int64)
            rest = keys.copy()
            for j in range(d - 1, -1, -1):
                words[:, j] = rest % K
                rest //= K
            levels[d] = (words, counts / counts.sum())
        return cls(K, levels, max_depth=depth)

    # -- access --------------------------------------------------------------
    def level(self, d: int):
        """(words, masses) of all depth-d cylinders in lexicographic order."""
        if d < 1:
            raise ValidationError("depth must be >= 1")
        if d in self._levels:
            return self._levels[d]
        if self._rule is None or d > self.max_depth:
            raise ValidationError(f"depth {d} exceeds the stored depth {self.max_depth}")
        if self.K ** d > 10 ** 7:
            raise CombinatorialBlowup(f"K^{d} cylinders exceed the enumeration cap")
        words = np.array(np.unravel_index(np.arange(self.K ** d), (self.K,) * d)).T.reshape(-1, d)
        masses = np.array([self._rule(tuple(w)) for w in words], dtype=float)
        self._levels[d] = (words, masses)
        return self._levels[d]

    def mass(self, word) -> float:
        word = tuple(int(a) for a in word)
        if self._rule is not None:
            return float(self._rule(word))
        d = len(word)
        if d not in self._levels:
            raise ValidationError(f"depth {d} not stored")
        if d not in self._lookup:
            words, masses = self._levels[d]
            self._lookup[d] = {tuple(w): m for w, m in zip(words.tolist(), masses)}
        return float(self._lookup[d].get(word, 0.0))

    def depths(self):
        return sorted(self._levels) if self._rule is None else list(range(1, self.max_depth + 1))

    def compatibility_error(self, max_depth: Optional[int] = None) -> float:
        """max |sum_a mu([w a]) - mu([w])| over stored depths, and |total - 1|."""
        D = min(max_depth or self.max_depth, self.max_depth)
        err = abs(float(self.level(1)[1].sum()) - 1.0)
        for d in range(1, D):
            words, masses = self.level(d + 1)
            parent = self.level(d)
            acc = {}
            for w, m in zip(words.tolist(), masses):
                k = tuple(w[:-1])
                acc[k] = acc.get(k, 0.0) + m
            for w, m in zip(parent[0].tolist(), parent[1]):
                err = max(err, abs(acc.get(tuple(w), 0.0) - m))
        return err

    def shifted(self, d: int) -> dict:
        """Depth-d masses of the pushed-forward measure: sum_a mu([a w])."""
        words, masses = self.level(d + 1)
        out = {}
        for w, m in zip(words.tolist(), masses):
            k = tuple(w[1:])
            out[k] = out.get(k, 0.0) + m
        return out

    def records(self):
        """Iterate (word, mass) over every stored depth (serialisation order)."""
        for d in self.depths():
            words, masses = self.level(d)
            for w, m in zip(words.tolist(), masses):
                yield tuple(w), float(m)


# ---------------------------------------------------------------------------
def partition_entropy(masses) -> float:
    """-sum m log m with 0 log 0 = 0."""
    m = np.asarray(masses, dtype=float).ravel()
    if np.any(m < -1e-15):
        raise ValidationError("negative mass")
    if m.sum() > 1 + MASS_TOL:
        raise ValidationError(f"masses sum to {m.sum():.12g} > 1")
    acc = 0.0
    for v in m:
        if v > 0:
            acc -= v * math.log(v)
    return acc


def refined_entropy(mu: CylinderMeasure, n: int) -> float:
    """Entropy of the partition into depth-n cylinders."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    if n > mu.max_depth:
        raise ValidationError(f"depth {n} exceeds measure depth {mu.max_depth}")
    return partition_entropy(mu.level(n)[1])


def ks_entropy_estimate(mu: CylinderMeasure, n_max: int) -> dict:
    """H_n/n and H_{n+1} - H_n for n = 1..n_max; the headline estimate is the last difference."""
    if n_max < 3:
        raise ValidationError("n_max must be >= 3")
    H = [refined_entropy(mu, n) for n in range(1, n_max + 1)]
    ratios = [h / (i + 1) for i, h in enumerate(H)]
    diffs = [H[i + 1] - H[i] for i in range(len(H) - 1)]
    monotone = all(diffs[i + 1] <= diffs[i] + 1e-9 for i in range(len(diffs) - 1))
    return {"H": H, "H_over_n": ratios, "differences": diffs, "estimate": diffs[-1],
            "differences_nonincreasing": monotone}


def entropy_of_labels(labels, weights=None) -> float:
    """Entropy of the partition of a finite probability space given by labels."""
    labels = np.asarray(labels)
    if labels.ndim == 1:
        labels = labels[:, None]
    w = np.full(labels.shape[0], 1.0 / labels.shape[0]) if weights is None else np.asarray(weights, float)
    _, inv = np.unique(labels, axis=0, return_inverse=True)
    masses = np.bincount(inv.ravel(), weights=w)
    return partition_entropy(masses)


# ---------------------------------------------------------------------------
def weights(word, f: RoofFunction, orientation: str = "forward") -> float:
    """W = exp(1/2 sum_{j=1}^{k-1} f(s^j a)) for a word of length k+1.

    Backward words are written b_{-k}..b_0 and shifted by s_-, which reads
    the pairs from the right end leftwards.
    """
    return math.exp(log_weight(word, f, orientation))


def log_weight(word, f: RoofFunction, orientation: str = "forward") -> float:
    word = tuple(word)
    if len(word) < 2:
        raise ValidationError("weights need words of length >= 2")
    k = len(word) - 1
    acc = 0.0
    if orientation == "forward":
        pairs = [(word[j], word[j + 1]) for j in range(1, k)]
    elif orientation == "backward":
        pairs = [(word[k - j - 1], word[k - j]) for j in range(1, k)]
    else:
        raise ValidationError("orientation must be 'forward' or 'backward'")
    for a, b in pairs:
        v = f.f[a][b]
        if v is None:
            raise ValidationError(f"roof entry for pair {(a, b)} is absent")
        acc += float(v)
    return 0.5 * acc


@dataclass
class PressureReport:
    H: float
    weight_term: float
    p: float
    atoms: int

    def as_dict(self):
        return {"H": self.H, "weight_term": self.weight_term, "p": self.p, "atoms": self.atoms}


def pressure(masses, W) -> PressureReport:
    """p = H - 2 sum m log W (left-to-right summation in the given order)."""
    m = np.asarray(masses, dtype=float).ravel()
    W = np.asarray(W, dtype=float).ravel()
    if m.shape != W.shape:
        raise ValidationError("masses and weights are misaligned")
    if np.any(W <= 0):
        raise ValidationError("weights must be positive")
    H = partition_entropy(m)
    wt = 0.0
    for mi, wi in zip(m, W):
        wt += mi * math.log(wi)
    wt = -2.0 * wt
    return PressureReport(H, wt, H + wt, int(m.size))


def pressure_from_logs(masses, logW) -> PressureReport:
    """Same as :func:`pressure` with log-weights supplied directly."""
    m = np.asarray(masses, dtype=float).ravel()
    lw = np.asarray(logW, dtype=float).ravel()
    if m.shape != lw.shape:
        raise ValidationError("masses and weights are misaligned")
    H = partition_entropy(m)
    wt = 0.0
    for mi, li in zip(m, lw):
        wt += mi * li
    wt = -2.0 * wt
    return PressureReport(H, wt, H + wt, int(m.size))


def join_atoms(base: CylinderMeasure, roof: RoofFunction, N0: int, n: int,
               split_fibres: bool = False, cap: int = 10 ** 6) -> dict:
    """Suspension masses of the atoms of the n-fold join of the refinement
    partition: {label tuple: mass}."""
    pieces = refined_join(roof, N0, n, cap=cap, split_fibres=split_fibres)
    words, masses = base.level(2)
    Z = sum(float(m) * float(roof.f_plus(tuple(w))) for w, m in zip(words.tolist(), masses))
    if not Z > 0:
        raise ValidationError("suspension normaliser vanishes")
    atoms = {}
    for p in pieces:
        mass = base.mass(p.word) * float(p.s_hi - p.s_lo) / Z
        atoms[p.labels] = atoms.get(p.labels, 0.0) + mass
    return atoms


def refined_pressure(base: CylinderMeasure, roof: RoofFunction, N0: int, n: int,
                     split_fibres: bool = False, cap: int = 10 ** 6) -> PressureReport:
    """p_n = H_n - 2 sum_A mu(A) log W_A with W_A = prod_j W_{g_j}."""
    atoms = join_atoms(base, roof, N0, n, split_fibres, cap)
    keys = sorted(atoms)
    masses = [atoms[k] for k in keys]
    logs = []
    for lab in keys:
        words = [g[0] for g in lab] if split_fibres else list(lab)
        logs.append(sum(log_weight(g, roof) for g in words))
    return pressure_from_logs(masses, logs)


def subadditivity_check(mu: CylinderMeasure, n: int, m: int) -> dict:
    """Slack H_n + H_m - H_{n+m} and a shift-invariance diagnostic."""
    if n < 1 or m < 1 or n + m > mu.max_depth:
        raise ValidationError("need n, m >= 1 and n + m within the stored depth")
    Hn, Hm, Hnm = (refined_entropy(mu, k) for k in (n, m, n + m))
    d = min(n, m)
    words, masses = mu.level(d)
    sh = mu.shifted(d) if d + 1 <= mu.max_depth else {}
    tv = 0.5 * sum(abs(sh.get(tuple(w), 0.0) - mm) for w, mm in zip(words.tolist(), masses))
    slack = Hn + Hm - Hnm
    return {"slack": slack, "H_n": Hn, "H_m": Hm, "H_n_plus_m": Hnm, "shift_tv": tv,
            "invariant": tv <= 1e-9, "passed": slack >= -1e-9 or tv > 1e-9}


def ruelle_check(h: float, mean_uu: float, tol: float = 1e-9) -> dict:
    """Ruelle slack int U^u - h and the half-gap h - 1/2 int U^u."""
    if not (math.isfinite(h) and math.isfinite(mean_uu)):
        raise ValidationError("inputs must be finite")
    slack = mean_uu - h
    return {"h": h, "mean_Uu": mean_uu, "ruelle_slack": slack, "half_gap": h - 0.5 * mean_uu,
            "passed": slack >= -tol}


def markov_entropy_rate(P, pi=None) -> float:
    """-sum pi_i P_ij log P_ij."""
    P = np.asarray(P, dtype=float)
    if pi is None:
        w, v = np.linalg.eig(P.T)
        pi = np.real(v[:, np.argmin(np.abs(w - 1))])
        pi = pi / pi.sum()
    acc = 0.0
    for i in range(P.shape[0]):
        for j in range(P.shape[1]):
            if P[i, j] > 0:
                acc -= pi[i] * P[i, j] * math.log(P[i, j])
    return acc


def suspension_entropy_estimate(probs, roof: RoofFunction, tau: float = 1.0, depth: int = 8,
                                n_orbits: int = 2000, length: int = 200, seed: int = 0) -> dict:
    """Empirical entropy per unit time of the suspension of an i.i.d. base,
    observed through (base symbol, fibre bin) at times 0, tau, 2 tau, ..."""
    from .symbolic import suspension_labels

    seqs, K = suspension_labels(probs, roof, tau, length, n_orbits, seed)
    mu = CylinderMeasure.from_sequences(seqs, K, depth, burn_in=0.0)
    est = ks_entropy_estimate(mu, depth)
    return {"per_step": est["estimate"], "per_time": est["estimate"] / tau, "details": est}
