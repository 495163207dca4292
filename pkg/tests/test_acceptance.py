"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test records a PASS/FAIL line that ``conftest.py`` prints in the
terminal summary, so ``pytest tests/test_acceptance.py`` yields a compact
scorecard even when some criteria fail.
"""

import filecmp
import json
import math
import os
import subprocess
import sys
import time
from fractions import Fraction
from itertools import product

import numpy as np
import pytest

from curvlab import quantum
from curvlab.entropy import CylinderMeasure
from curvlab.experiments import (exp_entropy, exp_eup, exp_ruelle, preset_config,
                                 reference_models)
from curvlab.riccati import (growth_bound_check, hopf_unstable, jacobi_solve,
                             lyapunov_upper, unstable_trace)
from curvlab.surface import SyntheticProfile, preset
from curvlab.symbolic import RoofFunction, index_family, stopping_prefix

RESULTS = {}


def record(num, title, passed, detail=""):
    line = f"criterion {num:>2} {'PASS' if passed else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
    RESULTS[num] = line
    print(line)
    return passed


@pytest.fixture(scope="module")
def desk_cfg():
    return preset_config("desk")


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    """Two end-to-end ``run all --preset desk`` invocations in fresh directories."""
    out = []
    for tag in ("first", "second"):
        d = tmp_path_factory.mktemp(f"desk_{tag}")
        t0 = time.perf_counter()
        proc = subprocess.run([sys.executable, "-m", "curvlab", "run", "all", "--preset", "desk",
                               "--out", str(d)], capture_output=True, text=True)
        out.append({"dir": d, "seconds": time.perf_counter() - t0, "code": proc.returncode,
                    "stderr": proc.stderr})
    return out


# 1 -------------------------------------------------------------------------
def test_c01_hopf_constant_curvature():
    worst, slowest = 0.0, 0.0
    for a in (0.0, 0.5, 1.0, 2.0):
        prof = SyntheticProfile.constant(-a * a)
        t0 = time.perf_counter()
        u = hopf_unstable(prof, prof.state(0.0))
        slowest = max(slowest, time.perf_counter() - t0)
        worst = max(worst, abs(u - a))
    ok = record(1, "Hopf limit on constant curvature", worst <= 1e-6 and slowest < 1.0,
                f"max error {worst:.2e}, slowest call {slowest:.3f}s")
    assert ok


# 2 -------------------------------------------------------------------------
def _random_profile(rng):
    """K(t) = -(c + sum a_k sin(w_k t + p_k))^2 <= 0."""
    c = rng.uniform(0.0, 1.5)
    a = rng.uniform(-0.5, 0.5, 3)
    w = rng.uniform(0.2, 3.0, 3)
    p = rng.uniform(0, 2 * math.pi, 3)
    return SyntheticProfile(lambda t: -(c + sum(a[k] * np.sin(w[k] * t + p[k]) for k in range(3))) ** 2)


def test_c02_jacobi_riccati_growth_identity():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(20):
        prof = _random_profile(rng)
        st = prof.state(0.0)
        tr = unstable_trace(prof, st, 10.0)
        grid = np.linspace(0.0, 10.0, 101)
        sol = jacobi_solve(prof.K, 1.0, float(tr.U[0]), grid)
        idx = np.rint(grid / (tr.times[1] - tr.times[0])).astype(int)
        gap = np.abs(np.log(sol.J) - tr.integral[idx])
        worst = max(worst, float(gap.max()))
    ok = record(2, "log J^u growth equals the U^u integral", worst <= 1e-5, f"max gap {worst:.2e}")
    assert ok


# 3 -------------------------------------------------------------------------
def test_c03_growth_bound():
    models = reference_models()
    names = sorted(models)
    rng = np.random.default_rng(3)
    fails, worst = 0, math.inf
    for i in range(100):
        m = models[names[i % len(names)]]
        r = growth_bound_check(m, m.random_state(rng), float(rng.uniform(0.0, 10.0)))
        fails += not r.passed
        worst = min(worst, r.right / r.left)
    ok = record(3, "growth bound on 100 random triples", fails == 0,
                f"{fails} failures, min right/left {worst:.4f}, models {names}")
    assert ok


# 4 -------------------------------------------------------------------------
def test_c04_bolza_lyapunov():
    m = preset("bolza")
    rng = np.random.default_rng(4)
    rows = [lyapunov_upper(m, m.random_state(rng), 50.0) for _ in range(100)]
    tan = float(np.mean([r["tangent"] for r in rows]))
    ric = float(np.mean([r["riccati"] for r in rows]))
    ok = record(4, "Bolza upper Lyapunov exponent", abs(tan - 1.0) <= 0.02 and abs(ric - 1.0) <= 1e-6,
                f"tangent {tan:.4f}, riccati {ric:.8f}")
    assert ok


# 5 -------------------------------------------------------------------------
def test_c05_ruelle(desk_cfg):
    rep = exp_ruelle(desk_cfg)
    c = rep.checks
    d = rep.data
    ok = all(c[k]["passed"] for k in ("closed_geodesic", "bolza_liouville_entropy",
                                       "bolza_liouville_ruelle", "flat_liouville"))
    detail = (f"closed slack {d['closed_geodesic']['ruelle_slack']:.3g}, "
              f"Bolza h {d['bolza_liouville']['h']:.3f} (slack {d['bolza_liouville']['ruelle']['ruelle_slack']:.3f}), "
              f"flat h {d['flat_liouville']['h']:.4f}, flat mean U^u {d['flat_liouville']['mean_Uu']:.1e}")
    assert record(5, "Ruelle inequality cases", ok, detail)


# 6 -------------------------------------------------------------------------
def _oracle_family(f0, K, T):
    """Words a_0..a_k whose partial roof sums (from the second pair) first pass T at the last pair."""
    lo = min(v for row in f0 for v in row if v is not None)
    max_len = 3 + int(T / lo) + 1
    out = set()
    for L in range(3, max_len + 1):
        for w in product(range(K), repeat=L):
            if any(f0[w[i]][w[i + 1]] is None for i in range(L - 1)):
                continue
            partial = [sum(f0[w[i]][w[i + 1]] for i in range(1, j)) for j in range(2, L)]
            if partial[-1] > T and all(s <= T for s in partial[:-1]):
                out.add(w)
    return out


def _random_table(rng, K, holes):
    f0 = [[Fraction(int(rng.integers(3, 10)), 10) for _ in range(K)] for _ in range(K)]
    if holes:
        for a in range(K):
            for b in range(K):
                if (a, b) != (a, (a + 1) % K) and rng.random() < 0.2:
                    f0[a][b] = None
    return RoofFunction(f0, [[None if v is None else Fraction(0) for v in r] for r in f0])


def test_c06_index_families():
    rng = np.random.default_rng(6)
    mismatches = 0
    for trial in range(30):
        K = int(rng.integers(1, 4))
        roof = _random_table(rng, K, holes=trial % 2 == 1)
        T = Fraction(int(rng.integers(5, 16)), 10)
        fam = index_family(roof, T).as_set()
        mismatches += fam != _oracle_family(roof.f0, K, T)
    # unique stopping prefixes and total mass on full tables
    roof = _random_table(rng, 3, holes=False)
    T = Fraction(17, 10)
    fam = index_family(roof, T).as_set()
    nonunique = 0
    for _ in range(10_000):
        x = tuple(int(v) for v in rng.integers(0, 3, size=64))
        hits = [m for m in range(1, 65) if x[:m] in fam]
        nonunique += not (len(hits) == 1 and hits[0] == len(stopping_prefix(x, roof, T)))
    p = rng.dirichlet(np.ones(3))
    mu = CylinderMeasure.bernoulli(p, max_depth=64)
    mass = math.fsum(mu.mass(w) for w in fam)
    ok = mismatches == 0 and nonunique == 0 and abs(mass - 1.0) <= 1e-12
    assert record(6, "index families", ok,
                  f"{mismatches} family mismatches, {nonunique} bad prefixes, mass error {abs(mass - 1):.1e}")


# 7, 8 ------------------------------------------------------------------------
@pytest.fixture(scope="module")
def entropy_report(desk_cfg):
    return exp_entropy(desk_cfg)


def test_c07_suspension_abramov(entropy_report):
    c = entropy_report.checks
    sg, s1 = c["suspension_semigroup"], c["suspension_constant_roof"]
    ok = sg["passed"] and sg["cases"] >= 1000 and s1["passed"]
    assert record(7, "suspension semigroup and Abramov", ok,
                  f"semigroup failures {sg['failures']}/{sg['cases']}, "
                  f"estimate {s1['estimate']:.4f} vs {s1['abramov']:.4f}")


def test_c08_entropy_kernel(entropy_report):
    c = entropy_report.checks
    ok = all(c[k]["passed"] for k in ("markov_Hn", "subadditivity", "refinement_monotonicity"))
    assert record(8, "entropy kernel", ok,
                  f"Markov H_n error {c['markov_Hn']['max_error']:.1e}, "
                  f"subadditivity min slack {c['subadditivity']['min_slack']:.2e}")


# 9 -------------------------------------------------------------------------
def test_c09_entropic_uncertainty(desk_cfg):
    rep = exp_eup(desk_cfg)
    c = rep.checks
    ok = c["eup_random"]["passed"] and c["eup_random"]["trials"] >= 1000 and c["dft_equality"]["passed"]
    worst_eq = max(abs(e["slack"]) for e in c["dft_equality"]["cases"])
    assert record(9, "entropic uncertainty principle", ok,
                  f"min slack {c['eup_random']['min_slack']:.3e}, DFT |slack| {worst_eq:.1e}")


# 10 ------------------------------------------------------------------------
def test_c10_quantum_cylinders():
    rng = np.random.default_rng(10)
    worst = 0.0
    for shape in ((64, 64), (256, 16)):
        grid = quantum.TorusGrid(shape)
        part = quantum.smooth_partition(quantum.grid_cells(2, 2), 0.3, grid)
        psi = quantum.GridWavefunction.random(grid, 1 / 16, rng)
        for orient in ("forward", "backward"):
            mu = quantum.cylinder_measure(psi, 4, 0.7, 1 / 16, part, orient)
            worst = max(worst, mu.compatibility_error(), abs(float(mu.level(1)[1].sum()) - 1.0))
    fid = 0.0
    for n, hb in (((64, 0), 1 / 64), ((3, 4), 1 / 5), ((0, 128), 1 / 128)):
        grid = quantum.TorusGrid(256)
        psi = quantum.GridWavefunction.plane_wave(n, grid, hb)
        out = quantum.energy_cutoff(psi, quantum.CutoffSpec(0.1, 1, hb), grid)
        fid = max(fid, math.sqrt(grid.norm2(out - psi.values)))
    ok = worst <= 1e-10 and fid <= 1e-12
    assert record(10, "quantum cylinder compatibility and cutoff fidelity", ok,
                  f"compatibility {worst:.1e}, fidelity {fid:.1e}")


# 11 ------------------------------------------------------------------------
def test_c11_egorov_decay():
    errs = {}
    for n in (64, 128):
        grid = quantum.TorusGrid((8 * n, 64))
        part = quantum.smooth_partition(quantum.grid_cells(2, 2), 0.1, grid)
        errs[n] = quantum.egorov_error((n, 0), 1.0, part, max_len=2)
    ratio = errs[64] / errs[128]
    ok = 1.3 <= ratio <= 3.0
    assert record(11, "Egorov error decay on doubling |n|", ok,
                  f"errors {errs[64]:.3e} -> {errs[128]:.3e}, ratio {ratio:.2f}")


# 12 ------------------------------------------------------------------------
def test_c12_pressure_pipeline(desk_runs):
    with open(os.path.join(desk_runs[0]["dir"], "pipeline.json")) as fh:
        doc = json.load(fh)
    runs = doc["data"]["runs"]
    hbars = doc["config"]["hbars"]
    assert sorted(hbars) == sorted([1 / 64, 1 / 128])
    slacks = {k: v["slack"] for k, v in runs.items()}
    trend = {k: v for k, v in doc["checks"].items() if k.startswith("c_chi_trend")}
    ok = len(slacks) == 4 and min(slacks.values()) >= 0 and all(v["passed"] for v in trend.values())
    detail = ", ".join(f"{k} slack {v:.2f}" for k, v in sorted(slacks.items()))
    detail += "; c_chi " + ", ".join(f"{k[12:-1]} {v['c_chi']}" for k, v in sorted(trend.items()))
    assert record(12, "pressure-bound pipeline", ok, detail)


# 13 ------------------------------------------------------------------------
def test_c13_determinism_and_runtime(desk_runs):
    a, b = desk_runs
    names = sorted(os.listdir(a["dir"]))
    same_names = names == sorted(os.listdir(b["dir"]))
    _, mismatch, errors = filecmp.cmpfiles(a["dir"], b["dir"], names, shallow=False)
    ok = (a["code"] == 0 and b["code"] == 0 and same_names and not mismatch and not errors
          and max(a["seconds"], b["seconds"]) < 600)
    assert record(13, "desk run is bitwise reproducible and fast", ok,
                  f"{len(names)} files, mismatched {mismatch}, runtimes "
                  f"{a['seconds']:.0f}s/{b['seconds']:.0f}s")
