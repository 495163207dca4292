"""Named experiments behind ``curvlab run``.

Every experiment takes an :class:`ExperimentConfig`, returns a
:class:`Report` (nested JSON-ready data, a list of named checks and zero or
more CSV tables) and is a pure function of the config: all randomness comes
from ``numpy.random.default_rng`` streams derived from ``config.seed``, and
reports carry no timestamps, so identical configs give byte-identical files.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from . import __version__, quantum
from .entropy import (CylinderMeasure, ks_entropy_estimate, markov_entropy_rate, partition_entropy,
                      refined_entropy, ruelle_check, subadditivity_check, suspension_entropy_estimate)
from .errors import ValidationError
from .fileio import load_model, load_roof
from .riccati import growth_bound_check, hopf_unstable, lyapunov_upper, riccati_residual, unstable_trace
from .surface import (FlatTorus, HyperbolicQuotient, Revolution, SyntheticProfile, preset,
                      validate_nonpositive)
from .symbolic import (RoofFunction, SuspensionPoint, abramov, build_partition, index_family,
                       roof_tables, suspension_step)

EXPERIMENTS = ("surface-validate", "hopf", "lyapunov", "words", "entropy", "ruelle", "eup", "pipeline")
OUTPUT_ENV = "CURVLAB_OUTPUT_DIR"


# ---------------------------------------------------------------------------
# Configuration
@dataclass
class ExperimentConfig:
    """Every tunable of the experiments (defaults = the ``desk`` preset)."""

    model: str = "bolza"
    seed: int = 0
    workers: int = 1
    # partition / roof parameters
    delta: float = 9.0
    eta: float = 1.25
    eps: float = 0.1
    eps_prime: float = 0.1
    eps0: float = 1.0
    N0: int = 2
    delta0: float = 0.1
    # Riccati side
    hopf_orbits: int = 10
    growth_triples: int = 100
    growth_tmax: float = 10.0
    lyapunov_orbits: int = 100
    lyapunov_T: float = 50.0
    validate_samples: int = 100
    # symbolic words
    roof: Optional[str] = None
    words_eta: float = 0.0125
    words_T: float = 0.05
    # entropy / Ruelle
    liouville_orbits: int = 20000
    liouville_steps: int = 60
    entropy_depth: int = 8
    flat_directions: int = 16
    flat_depth: int = 16
    suspension_orbits: int = 4000
    semigroup_cases: int = 1000
    # quantum
    eup_n: Optional[int] = None
    eup_trials: int = 1000
    hbars: tuple = (1 / 64, 1 / 128)
    pipeline_cells: int = 2
    pipeline_width: float = 0.1
    pipeline_eta: float = 1.2
    pipeline_eps0: float = 1.0
    out: Optional[str] = None

    def __post_init__(self):
        self.hbars = tuple(float(h) for h in self.hbars)
        if self.N0 < 1:
            raise ValidationError("N0 must be >= 1")
        for name in ("eta", "eps", "eps_prime", "eps0", "delta", "words_eta", "words_T"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")

    def chain_warnings(self) -> list:
        """The ordering eps < 4 eps' << 1/N0 << eps0 (checked loosely, never fatal)."""
        out = []
        if not self.eps < 4 * self.eps_prime:
            out.append(f"eps = {self.eps} is not below 4 eps' = {4 * self.eps_prime}")
        if not 4 * self.eps_prime < 1.0 / self.N0:
            out.append(f"4 eps' = {4 * self.eps_prime} is not below 1/N0 = {1 / self.N0}")
        if not 1.0 / self.N0 < self.eps0:
            out.append(f"1/N0 = {1 / self.N0} is not below eps0 = {self.eps0}")
        return out

    def as_dict(self) -> dict:
        # the output location is excluded so reports written to different
        # directories stay byte-identical
        d = dataclasses.asdict(self)
        d.pop("out")
        return _clean(d)

    def replace(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_file(cls, path: str, base: Optional["ExperimentConfig"] = None) -> "ExperimentConfig":
        """Read an ``[experiment]`` INI section; keys are field names."""
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            with open(path) as fh:
                cp.read_string(fh.read())
        except FileNotFoundError as exc:
            raise ValidationError(f"config file {path!r} not found") from exc
        except configparser.Error as exc:
            raise ValidationError(f"malformed config file: {exc}") from exc
        if "experiment" not in cp:
            raise ValidationError("config file needs an [experiment] section")
        base = base or cls()
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kw = {}
        for key, raw in cp["experiment"].items():
            if key not in types:
                raise ValidationError(f"unknown config key {key!r}")
            kw[key] = _coerce(getattr(base, key), raw, key)
        return dataclasses.replace(base, **kw)


def _coerce(current, raw: str, key: str):
    raw = raw.strip()
    try:
        if key == "hbars":
            return tuple(float(Fraction(t)) for t in raw.replace(",", " ").split())
        if raw.lower() in ("none", ""):
            return None
        if isinstance(current, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(current, int) or key in ("eup_n",):
            return int(raw)
        if isinstance(current, float):
            return float(Fraction(raw))
        return raw
    except (ValueError, ZeroDivisionError) as exc:
        raise ValidationError(f"bad value for {key}: {raw!r}") from exc


PRESETS = {
    "desk": {},
    # a few-second variant used by the test-suite and for smoke runs
    "smoke": dict(hopf_orbits=3, growth_triples=12, lyapunov_orbits=8, validate_samples=20,
                  liouville_orbits=2000, suspension_orbits=500,
                  semigroup_cases=100, eup_trials=50, hbars=(1 / 16, 1 / 32)),
}


def preset_config(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ExperimentConfig(**PRESETS[name])


# ---------------------------------------------------------------------------
# Reports
@dataclass
class Report:
    experiment: str
    config: dict
    data: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)  # name -> (header, rows)
    warnings: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def check(self, name: str, passed: bool, **info):
        self.checks[name] = _clean(dict(passed=bool(passed), **info))

    def document(self) -> dict:
        return _clean({"experiment": self.experiment, "version": __version__, "config": self.config,
                       "passed": self.passed, "checks": self.checks, "warnings": self.warnings,
                       "data": self.data})

    def json_text(self) -> str:
        return json.dumps(self.document(), indent=2, sort_keys=True) + "\n"

    def csv_text(self, name: str) -> str:
        header, rows = self.tables[name]
        buf = io.StringIO()
        buf.write(f"# curvlab {__version__} experiment={self.experiment} "
                  f"config={json.dumps(self.config, sort_keys=True)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        return buf.getvalue()

    def write(self, out_dir: str) -> list:
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        p = os.path.join(out_dir, f"{self.experiment}.json")
        with open(p, "w") as fh:
            fh.write(self.json_text())
        paths.append(p)
        for name in sorted(self.tables):
            p = os.path.join(out_dir, f"{name}.csv")
            with open(p, "w") as fh:
                fh.write(self.csv_text(name))
            paths.append(p)
        return paths


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}" if abs(v) >= 1e-3 or v == 0 else f"{float(v):.6e}"
    return v


def _clean(obj):
    """Convert numpy scalars/arrays and tuples into plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, Fraction):
        return str(obj)
    return obj


def _pmap(fn: Callable, items: list, workers: int) -> list:
    """Order-preserving map over a bounded process pool (serial when workers <= 1)."""
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _rng(cfg: ExperimentConfig, stream: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, stream])


# ---------------------------------------------------------------------------
# Models used across experiments
def oscillating_profile() -> SyntheticProfile:
    return SyntheticProfile(lambda t: -(1.0 + 0.5 * np.sin(t)), name="oscillating")


def variable_revolution() -> Revolution:
    """r(u) = 2 + cosh u: curvature -cosh u / (2 + cosh u), varying in [-1, -1/3]."""
    return Revolution([2.0, 1.0])


def reference_models() -> dict:
    return {"flat-torus": preset("flat-torus"), "bolza": preset("bolza"),
            "catenoid-profile": preset("catenoid-profile"), "revolution-2-1": variable_revolution(),
            "oscillating": oscillating_profile()}


# ---------------------------------------------------------------------------
# surface-validate
def exp_surface_validate(cfg: ExperimentConfig) -> Report:
    rep = Report("surface-validate", cfg.as_dict())
    models = reference_models()
    models.pop("oscillating")
    if cfg.model not in models:
        models[cfg.model] = load_model(cfg.model)
    rows = []
    rng = _rng(cfg, 1)
    for name, m in models.items():
        v = validate_nonpositive(m, cfg.validate_samples)
        s = m.random_state(rng)
        t = 5.0
        phi = m.tangent(s, t)
        det_err = abs(float(np.linalg.det(phi)) - 1.0)
        end = m.flow(s, t)
        drift = abs(m.covector_norm(end) - 1.0)
        comp = m.distance(m.flow(m.flow(s, 2.0), 3.0), end)
        rows.append([name, v.min_curvature, v.max_curvature, v.K0, v.passed, det_err, drift, comp])
        rep.check(f"nonpositive[{name}]", v.passed, max_curvature=v.max_curvature, K0=v.K0)
        rep.check(f"flow[{name}]", det_err <= 1e-6 and drift <= 1e-9 * (1 + t) and comp <= 1e-6,
                  det_error=det_err, energy_drift=drift, composition=comp)
        rep.data[name] = v.as_dict()
    rep.tables["surface-validate"] = (["model", "min_K", "max_K", "K0", "passed", "det_error",
                                       "energy_drift", "composition_error"], rows)
    return rep


# ---------------------------------------------------------------------------
# hopf (+ growth bound)
def _hopf_row(args):
    name, model, state, idx = args
    res = hopf_unstable(model, state, details=True)
    tr = unstable_trace(model, state, 1.0)
    prof = model.curvature_along(state, 1.0)
    kv, h = prof
    resid = riccati_residual(tr, lambda t: np.interp(t, np.arange(kv.size) * h / 2.0, kv))
    return [name, idx, res.horizons[-1], res.value, resid, res.monotone]


def _growth_row(args):
    name, model, state, t, idx = args
    r = growth_bound_check(model, state, t)
    return [name, idx, t, r.left, r.right, r.U0, r.passed]


def exp_hopf(cfg: ExperimentConfig) -> Report:
    rep = Report("hopf", cfg.as_dict())
    model = load_model(cfg.model)
    rng = _rng(cfg, 2)
    jobs = [(cfg.model, model, model.random_state(rng), i) for i in range(cfg.hopf_orbits)]
    rows = _pmap(_hopf_row, jobs, cfg.workers)
    rep.tables["hopf"] = (["model", "orbit", "horizon", "U_u", "riccati_residual", "monotone"], rows)
    b0 = math.sqrt(model.K0)
    vals = [r[3] for r in rows]
    rep.check("hopf_range", all(-1e-8 <= v <= b0 + 1e-8 for v in vals), min=min(vals), max=max(vals), b0=b0)
    rep.check("hopf_monotone", all(r[5] for r in rows))
    rep.check("riccati_residual", max(r[4] for r in rows) <= 1e-5, max=max(r[4] for r in rows))
    if isinstance(model, HyperbolicQuotient):
        rep.check("constant_curvature_value", max(abs(v - 1.0) for v in vals) <= 1e-6)
    if isinstance(model, FlatTorus):
        rep.check("flat_value", max(abs(v) for v in vals) <= 1e-6)

    # growth bound across all reference models
    models = reference_models()
    names = list(models)
    grng = _rng(cfg, 3)
    gjobs = []
    for i in range(cfg.growth_triples):
        name = names[i % len(names)]
        m = models[name]
        gjobs.append((name, m, m.random_state(grng), float(grng.uniform(0.0, cfg.growth_tmax)), i))
    grows = _pmap(_growth_row, gjobs, cfg.workers)
    rep.tables["growth"] = (["model", "case", "t", "left", "right", "U0", "passed"], grows)
    rep.check("growth_bound", all(r[6] for r in grows), cases=len(grows),
              min_ratio=min(r[4] / r[3] for r in grows))
    return rep


# ---------------------------------------------------------------------------
# lyapunov
def _lyap_row(args):
    model, state, T, idx = args
    r = lyapunov_upper(model, state, T)
    return [idx, T, r["riccati"], r["tangent"]]


def exp_lyapunov(cfg: ExperimentConfig) -> Report:
    rep = Report("lyapunov", cfg.as_dict())
    model = load_model(cfg.model)
    rng = _rng(cfg, 4)
    jobs = [(model, model.random_state(rng), cfg.lyapunov_T, i) for i in range(cfg.lyapunov_orbits)]
    rows = _pmap(_lyap_row, jobs, cfg.workers)
    rep.tables["lyapunov"] = (["orbit", "T", "riccati", "tangent"], rows)
    ric = float(np.mean([r[2] for r in rows]))
    tan = float(np.mean([r[3] for r in rows]))
    rep.data = {"mean_riccati": ric, "mean_tangent": tan, "orbits": len(rows)}
    if isinstance(model, HyperbolicQuotient):
        rep.check("bolza_tangent_route", abs(tan - 1.0) <= 0.02, mean=tan)
        rep.check("bolza_riccati_route", abs(ric - 1.0) <= 1e-6, mean=ric)
    else:
        gap = max(abs(r[2] - r[3]) for r in rows)
        rep.check("routes_agree", gap <= 0.05, max_gap=gap)
    return rep


# ---------------------------------------------------------------------------
# words
def _words_roof(cfg: ExperimentConfig) -> tuple:
    if cfg.roof:
        return load_roof(cfg.roof), {"source": cfg.roof}
    model = load_model(cfg.model)
    spec = build_partition(model, cfg.delta, cfg.words_eta, cfg.eps, cfg.eps0)
    roof = roof_tables(model, spec, seed=cfg.seed)
    return roof, {"source": cfg.model, "cells": spec.K}


def exp_words(cfg: ExperimentConfig) -> Report:
    rep = Report("words", cfg.as_dict())
    roof, src = _words_roof(cfg)
    fwd = index_family(roof, cfg.words_T, "forward")
    bwd = index_family(roof, cfg.words_T, "backward")
    words = fwd.words
    fam = fwd.as_set()
    prefix_free = not any(w[:m] in fam for w in words for m in range(1, len(w)))
    K = roof.K
    uniform_mass = math.fsum(K ** -len(w) for w in words)
    mirrored = index_family(roof.transpose(), cfg.words_T, "forward").as_set()
    symmetric = {tuple(reversed(w)) for w in bwd.words} == mirrored
    rng = _rng(cfg, 5)
    unique = 0
    for _ in range(1000):
        seq = rng.integers(0, K, size=64)
        hits = [m for m in range(1, 65) if tuple(seq[:m]) in fam]
        unique += len(hits) == 1
    rep.data = {"roof": roof.as_dict(), "source": src, "T": cfg.words_T, "K": K,
                "forward_size": len(fwd), "backward_size": len(bwd),
                "lengths": sorted({len(w) for w in words})}
    rep.check("prefix_free", prefix_free)
    rep.check("uniform_mass", abs(uniform_mass - 1.0) <= 1e-12, mass=uniform_mass)
    rep.check("backward_forward_symmetry", symmetric)
    rep.check("unique_stopping_prefix", unique == 1000, sequences=1000, unique=unique)
    rep.tables["words"] = (["index"] + ["word"], [[i, " ".join(map(str, w))] for i, w in enumerate(words)])
    return rep


# ---------------------------------------------------------------------------
# entropy
def _markov_closed_form(P, n):
    pi = np.array([0.5, 0.5])
    return partition_entropy(pi) + (n - 1) * markov_entropy_rate(P, pi)


def exp_entropy(cfg: ExperimentConfig) -> Report:
    rep = Report("entropy", cfg.as_dict())
    # Markov chain: exact H_n and entropy rate
    P = np.array([[0.9, 0.1], [0.1, 0.9]])
    mu = CylinderMeasure.markov(P, max_depth=9)
    errs = [abs(refined_entropy(mu, n) - _markov_closed_form(P, n)) for n in range(1, 9)]
    rate = markov_entropy_rate(P)
    est = ks_entropy_estimate(mu, 8)
    rep.check("markov_Hn", max(errs) <= 1e-9, max_error=max(errs))
    rep.check("markov_rate", abs(est["estimate"] - rate) <= 1e-6, estimate=est["estimate"], exact=rate)
    sub = min(subadditivity_check(mu, n, m)["slack"] for n in range(1, 5) for m in range(1, 5))
    rep.check("subadditivity", sub >= -1e-9, min_slack=sub)

    # refinement monotonicity on random joint distributions
    rng = _rng(cfg, 6)
    worst = 0.0
    for _ in range(100):
        a, b = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        J = rng.random((a, b)) * (rng.random((a, b)) < 0.8)
        J = J / J.sum() if J.sum() > 0 else np.full((a, b), 1.0 / (a * b))
        Hj = partition_entropy(J.ravel())
        Hp, Hq = partition_entropy(J.sum(1)), partition_entropy(J.sum(0))
        worst = min(worst, Hj - max(Hp, Hq), Hp + Hq - Hj)
    rep.check("refinement_monotonicity", worst >= -1e-12, worst=worst)

    # suspension entropy against Abramov
    const = RoofFunction([[2, 2], [2, 2]], [[0, 0], [0, 0]])
    s1 = suspension_entropy_estimate([0.5, 0.5], const, tau=1.0, depth=8,
                                     n_orbits=cfg.suspension_orbits, length=200, seed=cfg.seed)
    target = abramov(math.log(2), 2.0)
    rel1 = abs(s1["per_time"] - target) / target
    rep.check("suspension_constant_roof", rel1 <= 0.05, estimate=s1["per_time"], abramov=target)
    two = RoofFunction([[1, 3], [1, 3]], [[0, 0], [0, 0]])
    s2 = suspension_entropy_estimate([0.5, 0.5], two, tau=1.0, depth=8,
                                     n_orbits=cfg.suspension_orbits, length=200, seed=cfg.seed + 1)
    target2 = abramov(math.log(2), 2.0)  # mean roof 0.5*1 + 0.5*3
    rel2 = abs(s2["per_time"] - target2) / target2
    rep.check("suspension_two_valued_roof", rel2 <= 0.05, estimate=s2["per_time"], abramov=target2)

    # semigroup law on rational roofs
    bad = 0
    srng = _rng(cfg, 7)
    for _ in range(cfg.semigroup_cases):
        roof = _random_rational_roof(srng, int(srng.integers(1, 4)))
        x = tuple(int(v) for v in srng.integers(0, roof.K, size=200))
        f0 = roof.f_plus(x[:2])
        p = SuspensionPoint(x, Fraction(int(srng.integers(0, 100)), 100) * f0)
        s = Fraction(int(srng.integers(0, 400)), 100)
        t = Fraction(int(srng.integers(0, 400)), 100)
        a = suspension_step(suspension_step(p, s, roof), t, roof)
        b = suspension_step(p, s + t, roof)
        bad += not (a.base == b.base and a.s == b.s)
    rep.check("suspension_semigroup", bad == 0, cases=cfg.semigroup_cases, failures=bad)
    rep.data = {"markov_errors": errs, "markov_rate": rate, "ks": est,
                "suspension_constant": {k: s1[k] for k in ("per_step", "per_time")},
                "suspension_two_valued": {k: s2[k] for k in ("per_step", "per_time")}}
    return rep


def _random_rational_roof(rng, K) -> RoofFunction:
    f0 = [[Fraction(int(rng.integers(1, 20)), 10) for _ in range(K)] for _ in range(K)]
    return RoofFunction(f0, [[Fraction(0)] * K for _ in range(K)])


# ---------------------------------------------------------------------------
# ruelle
def bolza_liouville_sequences(n_orbits: int, n_steps: int, eta: float, delta: float, seed) -> tuple:
    """Itineraries of Liouville-distributed Bolza orbits through the quadtree cells."""
    m = preset("bolza")
    spec = build_partition(m, delta, eta, 1.0, 1.0, check=False)
    rng = np.random.default_rng(seed)
    g = m.liouville_frames(rng, n_orbits)
    a = np.diag([math.exp(eta / 2.0), math.exp(-eta / 2.0)])
    seqs = np.empty((n_orbits, n_steps), dtype=np.int64)
    for j in range(n_steps):
        w = m.disc(g)
        seqs[:, j] = spec.locate(np.stack([w.real, w.imag], 1))
        g = m.reduce(g @ a)
    return seqs, spec.K


def flat_liouville_entropy(n_directions: int, depth: int, seed, eta: float = 1.0, delta: float = 0.5,
                           n_orbits: int = 2000, length: int = 200) -> dict:
    """Entropy of the Liouville measure on the unit flat torus via its ergodic decomposition.

    Liouville is the average over directions of the invariant measures on
    the linear tori; each direction's cylinder differences d_n decay like
    1/n (word complexity is polynomial), so its entropy is the intercept of
    a least-squares fit d_n = h + c/n on the second half of the differences.
    """
    m = FlatTorus(1.0, 1.0)
    spec = build_partition(m, delta, eta, 1.0, 1.0, check=False)
    rng = np.random.default_rng(seed)
    raw, fit = [], []
    for _ in range(n_directions):
        th = rng.uniform(0.0, 2.0 * math.pi)
        v = np.array([math.cos(th), math.sin(th)])
        x = rng.random((n_orbits, 2))
        seqs = np.stack([spec.locate((x + j * eta * v) % 1.0) for j in range(length)], 1)
        mu = CylinderMeasure.from_sequences(seqs, spec.K, depth)
        d = np.array(ks_entropy_estimate(mu, depth)["differences"])
        n = np.arange(1, depth, dtype=float)
        tail = slice(len(d) // 2, None)
        A = np.stack([np.ones(d[tail].size), 1.0 / n[tail]], 1)
        h, _ = np.linalg.lstsq(A, d[tail], rcond=None)[0]
        raw.append(d[-1] / eta)
        fit.append(h / eta)
    return {"h": float(np.mean(fit)), "raw_last_difference": float(np.mean(raw)),
            "per_direction": fit}


def exp_ruelle(cfg: ExperimentConfig) -> Report:
    rep = Report("ruelle", cfg.as_dict())
    bolza = preset("bolza")
    # closed geodesic: delta measure, zero entropy, U^u = 1 along it
    s = bolza.random_state(_rng(cfg, 8))
    uu = hopf_unstable(bolza, s)
    closed = ruelle_check(0.0, uu)
    rep.check("closed_geodesic", abs(closed["ruelle_slack"] - 1.0) <= 1e-9 and closed["h"] == 0.0,
              h=closed["h"], mean_Uu=closed["mean_Uu"], ruelle_slack=closed["ruelle_slack"],
              half_gap=closed["half_gap"])

    seqs, K = bolza_liouville_sequences(cfg.liouville_orbits, cfg.liouville_steps, cfg.eta, cfg.delta,
                                        [cfg.seed, 9])
    mu = CylinderMeasure.from_sequences(seqs, K, cfg.entropy_depth)
    est = ks_entropy_estimate(mu, cfg.entropy_depth)
    h = est["estimate"] / cfg.eta
    bl = ruelle_check(h, 1.0)
    rep.check("bolza_liouville_entropy", 0.7 <= h <= 1.1, h=h, cells=K)
    rep.check("bolza_liouville_ruelle", bl["ruelle_slack"] >= -0.1, ruelle_slack=bl["ruelle_slack"],
              half_gap=bl["half_gap"])

    flat = flat_liouville_entropy(cfg.flat_directions, cfg.flat_depth, [cfg.seed, 10])
    tor = preset("flat-torus")
    frng = _rng(cfg, 11)
    mean_uu = float(np.mean([hopf_unstable(tor, tor.random_state(frng)) for _ in range(10)]))
    fl = ruelle_check(flat["h"], mean_uu, tol=0.1)
    rep.check("flat_liouville", abs(flat["h"]) <= 0.1 and abs(mean_uu) <= 1e-9, h=flat["h"], mean_Uu=mean_uu,
              ruelle_slack=fl["ruelle_slack"])
    rep.data = {"closed_geodesic": closed, "bolza_liouville": {"h": h, "differences_per_time":
                [d / cfg.eta for d in est["differences"]], "ruelle": bl},
                "flat_liouville": {**flat, "mean_Uu": mean_uu, "ruelle": fl}}
    return rep


# ---------------------------------------------------------------------------
# eup
def exp_eup(cfg: ExperimentConfig) -> Report:
    rep = Report("eup", cfg.as_dict())
    rng = _rng(cfg, 12)
    rows = []
    for i in range(cfg.eup_trials):
        inst = quantum.random_eup_instance(rng, cfg.eup_n, with_cutoff=bool(i % 2))
        r = quantum.eup_check(inst["pi"], inst["tau"], inst["U"], inst["V"], inst["W"], inst["psi"],
                              inst.get("O"), inst.get("delta_prime", 0.0))
        rows.append([i, inst["pi"].dim, len(inst["pi"]), len(inst["tau"]), r["left"], r["right"], r["slack"]])
    rep.tables["eup"] = (["trial", "N", "m_pi", "m_tau", "left", "right", "slack"], rows)
    worst = min(r[6] for r in rows) if rows else 0.0
    rep.check("eup_random", worst >= -1e-9, trials=len(rows), min_slack=worst)
    eq = []
    for N in (2, 4, 8, 16):
        cp = quantum.coordinate_partition(N)
        e0 = np.zeros(N, dtype=complex)
        e0[0] = 1.0
        r = quantum.eup_check(cp, cp, quantum.dft_matrix(N), np.ones(N), np.ones(N), e0)
        eq.append({"N": N, "left": r["left"], "right": r["right"], "slack": r["slack"]})
    rep.check("dft_equality", max(abs(e["slack"]) for e in eq) <= 1e-9, cases=eq)
    return rep


# ---------------------------------------------------------------------------
# pipeline
def synthetic_roof(K: int, f0: Fraction) -> RoofFunction:
    """Constant f0 with a nonzero weight table 0 <= f(a, b) <= f0."""
    f = [[Fraction((a + b) % 3, 3) * f0 for b in range(K)] for a in range(K)]
    return RoofFunction([[f0] * K for _ in range(K)], f)


def exp_pipeline(cfg: ExperimentConfig) -> Report:
    rep = Report("pipeline", cfg.as_dict())
    K = cfg.pipeline_cells ** 2
    f0 = Fraction(cfg.pipeline_eta).limit_denominator(1000) * Fraction(cfg.pipeline_eps0).limit_denominator(1000)
    roofs = {"zero": RoofFunction([[f0] * K for _ in range(K)], [[Fraction(0)] * K for _ in range(K)]),
             "synthetic": synthetic_roof(K, f0)}
    pcfg = quantum.PipelineConfig(eta=cfg.pipeline_eta, eps=cfg.eps, eps_prime=cfg.eps_prime,
                                  eps0=cfg.pipeline_eps0, delta0=cfg.delta0, width=cfg.pipeline_width,
                                  cells=(cfg.pipeline_cells, cfg.pipeline_cells), seed=cfg.seed)
    results = {}
    cache = {}
    for hb in cfg.hbars:
        n = int(round(1.0 / hb))
        grid = quantum.TorusGrid((4 * n, 64))
        part = quantum.smooth_partition(quantum.grid_cells(cfg.pipeline_cells, cfg.pipeline_cells),
                                        cfg.pipeline_width, grid)
        for name, roof in roofs.items():
            r = quantum.pressure_bound_pipeline(part, roof, hb, pcfg, norm_cache=cache)
            results[f"{name}@{hb:.6g}"] = r
            rep.check(f"slack[{name}, hbar={hb:.6g}]", r["slack"] >= 0, slack=r["slack"],
                      slack_without_residual=r["slack_without_residual"])
    hs = sorted(cfg.hbars, reverse=True)
    for name in roofs:
        c = [results[f"{name}@{h:.6g}"]["c_chi"] for h in hs]
        ok = all(c[i + 1] >= c[i] / 2.0 for i in range(len(c) - 1))
        rep.check(f"c_chi_trend[{name}]", ok, hbar=hs, c_chi=c)
    rep.data = {"roofs": {k: v.as_dict() for k, v in roofs.items()}, "runs": results}
    return rep


# ---------------------------------------------------------------------------
RUNNERS = {
    "surface-validate": exp_surface_validate,
    "hopf": exp_hopf,
    "lyapunov": exp_lyapunov,
    "words": exp_words,
    "entropy": exp_entropy,
    "ruelle": exp_ruelle,
    "eup": exp_eup,
    "pipeline": exp_pipeline,
}


def run_experiment(name: str, cfg: ExperimentConfig) -> list:
    """Run one experiment (or ``all``) and return the reports."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        chain = cfg.chain_warnings()
        if name == "all":
            reps = [RUNNERS[e](cfg) for e in EXPERIMENTS]
        elif name in RUNNERS:
            reps = [RUNNERS[name](cfg)]
        else:
            raise ValidationError(f"unknown experiment {name!r}; choose from {list(RUNNERS) + ['all']}")
    for r in reps:
        r.warnings = list(chain)
    return reps


def summary_document(reps: list, cfg: ExperimentConfig) -> dict:
    return _clean({"version": __version__, "config": cfg.as_dict(),
                   "passed": all(r.passed for r in reps),
                   "experiments": {r.experiment: {"passed": r.passed,
                                                  "checks": {k: v["passed"] for k, v in r.checks.items()}}
                                   for r in reps}})
