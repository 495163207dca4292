import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curvlab import quantum as q
from curvlab.errors import HypothesisViolated, ValidationError
from curvlab.symbolic import RoofFunction


@pytest.fixture(scope="module")
def grid64():
    return q.TorusGrid(64)


def test_grid_rejects_non_power_of_two():
    with pytest.raises(ValidationError):
        q.TorusGrid((48, 64))


def test_partition_identity(grid64):
    single = q.smooth_partition(np.array([[0, 2 * math.pi, 0, 2 * math.pi]]), 0.0, grid64)
    assert np.allclose(single.P[0], 1.0)
    g = q.TorusGrid(256)
    part = q.smooth_partition(q.grid_cells(4, 4), 0.05, g)
    assert part.identity_residual() <= 1e-10
    halves = q.smooth_partition(q.grid_cells(2, 1), 1e-9, g)
    inside = (g.X > 0.1) & (g.X < math.pi - 0.1)
    assert np.allclose(halves.P[0][inside], 1.0)


def test_propagate_plane_wave_phase(grid64):
    psi = q.GridWavefunction.plane_wave((3, -2), grid64)
    out = q.propagate(psi, 1.7, psi.hbar, grid64)
    ratio = out / psi.values
    assert np.allclose(np.abs(out), np.abs(psi.values))
    assert np.allclose(ratio, ratio.flat[0])
    assert np.allclose(q.propagate(psi, 0.0, psi.hbar, grid64), psi.values)


def test_propagate_round_trip(grid64):
    psi = q.GridWavefunction.wave_packet((1.0, 2.0), (8, 3), 0.4, grid64, 1 / 8)
    fwd = q.propagate(psi, 2.3, 1 / 8, grid64)
    back = q.propagate(fwd, -2.3, 1 / 8, grid64)
    assert math.sqrt(grid64.norm2(back - psi.values)) <= 1e-10
    assert grid64.norm2(fwd) == pytest.approx(1.0, abs=1e-12)


def test_quantum_word_cases(grid64):
    part = q.smooth_partition(q.grid_cells(2, 2), 0.3, grid64)
    psi = q.GridWavefunction.random(grid64, 1 / 10, np.random.default_rng(0))
    one = q.quantum_word(psi, (2,), 0.5, 1 / 10, part)
    assert np.allclose(one, part.P[2] * psi.values)
    trivial = q.smooth_partition(np.array([[0, 2 * math.pi, 0, 2 * math.pi]]), 0.0, grid64)
    assert np.allclose(q.quantum_word(psi, (0, 0, 0), 0.5, 1 / 10, trivial), psi.values)
    total = sum(q.word_mass(psi, w, 0.5, 1 / 10, part)
                for w in np.ndindex(4, 4, 4))
    assert total == pytest.approx(1.0, abs=1e-10)


def test_cylinder_measure_compatibility(grid64):
    part = q.smooth_partition(q.grid_cells(2, 2), 0.3, grid64)
    psi = q.GridWavefunction.random(grid64, 1 / 10, np.random.default_rng(1))
    for orient in ("forward", "backward"):
        mu = q.cylinder_measure(psi, 3, 0.4, 1 / 10, part, orient)
        assert mu.compatibility_error() <= 1e-10
        assert float(mu.level(2)[1].sum()) == pytest.approx(1.0, abs=1e-10)
    trivial = q.smooth_partition(np.array([[0, 2 * math.pi, 0, 2 * math.pi]]), 0.0, grid64)
    mu = q.cylinder_measure(psi, 3, 0.4, 1 / 10, trivial)
    assert all(m == pytest.approx(1.0) for _, m in mu.records())


def test_cylinder_depth_one_quadrature():
    g = q.TorusGrid((128, 16))
    part = q.smooth_partition(q.grid_cells(2, 1), 0.4, g)
    psi = q.GridWavefunction.plane_wave((5, 0), g, 1 / 5)
    mu = q.cylinder_measure(psi, 1, 0.2, 1 / 5, part)
    # |psi|^2 = 1/(2 pi)^2: the mass is the average of P_i^2, by a fine 1-d quadrature
    x = np.linspace(0, 2 * math.pi, 200001)[:-1]
    cells = q.grid_cells(2, 1)
    raw = [q.mollified_indicator(x, c[0], c[1], 0.4) for c in cells]
    tot = sum(r * r for r in raw)
    for i in range(2):
        assert mu.mass((i,)) == pytest.approx(float(np.mean(raw[i] ** 2 / tot)), abs=1e-8)


def test_egorov_cases():
    g = q.TorusGrid((256, 32))
    trivial = q.smooth_partition(np.array([[0, 2 * math.pi, 0, 2 * math.pi]]), 0.0, g)
    assert q.egorov_error((32, 0), 0.5, trivial, max_len=2) < 1e-12
    # vertical strips, flow along y: strips 0 and 2 never meet, so both the quantum
    # and the classical mass of the word (0, 2) vanish
    xs = np.linspace(0, 2 * math.pi, 5)
    strips = q.smooth_partition(np.array([[xs[i], xs[i + 1], 0, 2 * math.pi] for i in range(4)]), 0.1,
                                q.TorusGrid((256, 256)))
    assert q.egorov_compare((0, 32), (0, 2), 0.5, strips) <= 1e-6


def test_energy_cutoff_cases():
    g = q.TorusGrid(64)
    hb = 1 / 20
    spec = q.CutoffSpec(0.1, 1, hb)
    on = q.GridWavefunction.plane_wave((12, 16), g, hb)       # H = 1/2 exactly
    assert math.sqrt(g.norm2(q.energy_cutoff(on, spec, g) - on.values)) <= 1e-12
    off = q.GridWavefunction.plane_wave((30, 0), g, hb)
    assert math.sqrt(g.norm2(q.energy_cutoff(off, spec, g))) <= 1e-12
    once = q.energy_cutoff(on, spec, g)
    assert np.allclose(q.energy_cutoff(once, spec, g), once, atol=1e-12)
    # mixed modes: each Fourier coefficient is scaled by the scalar symbol
    modes = [(20, 0), (21, 0), (0, 22), (23, 1)]
    vals = sum(np.exp(1j * (a * g.X + b * g.Y)) for a, b in modes) / (2 * math.pi * 2)
    out = q.energy_cutoff(vals, spec, g)
    for a, b in modes:
        e = np.exp(1j * (a * g.X + b * g.Y)) / (2 * math.pi)
        coef = g.inner(e, out) / g.inner(e, vals)
        assert coef.real == pytest.approx(float(spec.symbol(0.5 * hb ** 2 * (a * a + b * b))), abs=1e-12)
    with pytest.raises(ValidationError):
        q.CutoffSpec(0.1, 40, hb)


def test_quantum_pressure_cases():
    rng = np.random.default_rng(2)
    pi = q.coordinate_partition(4)
    psi = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    psi /= np.linalg.norm(psi)
    m = np.abs(psi) ** 2
    assert q.quantum_pressure(psi, pi.mats, np.ones(4)).p == pytest.approx(-(m * np.log(m)).sum())
    e = np.zeros(4, complex)
    e[2] = 1.0
    c = 0.8
    assert q.quantum_pressure(e, pi.mats, np.array([1, 1, math.exp(c / 2), 1])).p == pytest.approx(-c)
    part = q.random_partition(8, 3, rng)
    V = np.exp(rng.random(3))
    psi8 = rng.standard_normal(8) + 0j
    psi8 /= np.linalg.norm(psi8)
    w = np.array([np.linalg.norm(p @ psi8) ** 2 for p in part.mats])
    direct = -(w * np.log(w)).sum() - 2 * (w * np.log(V)).sum()
    assert q.quantum_pressure(psi8, part.mats, V).p == pytest.approx(direct)


@pytest.mark.parametrize("N", [2, 4, 8, 16])
def test_eup_dft_equality(N):
    cp = q.coordinate_partition(N)
    e0 = np.zeros(N, complex)
    e0[0] = 1
    r = q.eup_check(cp, cp, q.dft_matrix(N), np.ones(N), np.ones(N), e0)
    assert r["left"] == pytest.approx(math.log(N), abs=1e-9)
    assert r["c_O"] == pytest.approx(N ** -0.5)
    assert abs(r["slack"]) <= 1e-9


def test_eup_identity_unitary():
    rng = np.random.default_rng(3)
    pi = q.random_partition(6, 2, rng)
    V, W = np.array([1.5, 2.0]), np.array([1.2, 1.1])
    psi = np.ones(6, complex) / math.sqrt(6)
    r = q.eup_check(pi, pi, np.eye(6), V, W, psi)
    assert r["slack"] >= 0
    assert r["c_O"] <= max(V * W) + 1e-12


def test_eup_premise_violation():
    cp = q.coordinate_partition(3)
    psi = np.ones(3, complex) / math.sqrt(3)
    O = [np.zeros((3, 3))] * 3
    with pytest.raises(HypothesisViolated):
        q.eup_check(cp, cp, np.eye(3), np.ones(3), np.ones(3), psi, O, 0.1)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31), st.booleans())
def test_eup_random_instances(seed, cutoff):
    inst = q.random_eup_instance(np.random.default_rng(seed), with_cutoff=cutoff)
    r = q.eup_check(inst["pi"], inst["tau"], inst["U"], inst["V"], inst["W"], inst["psi"],
                    inst.get("O"), inst.get("delta_prime", 0.0))
    assert r["slack"] >= -1e-9


def test_op_norm_power_iteration():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((12, 12)) + 1j * rng.standard_normal((12, 12))
    est = q.op_norm(lambda v: A @ v, lambda v: A.conj().T @ v, (12,), np.random.default_rng(0))
    assert est == pytest.approx(np.linalg.norm(A, 2), rel=1e-5)


def test_ehrenfest():
    nE, TE = q.ehrenfest(1 / 64, 0.1, 0.1)
    assert nE == math.floor(0.9 * math.log(64)) and TE == pytest.approx(0.9 * nE)


def test_pipeline_trivial_partition():
    g = q.TorusGrid((64, 16))
    part = q.smooth_partition(np.array([[0, 2 * math.pi, 0, 2 * math.pi]]), 0.0, g)
    roof = RoofFunction.constant(1, Fraction(6, 5), 0)
    cfg = q.PipelineConfig(eta=1.2, width=0.0, cells=(1, 1))
    r = q.pressure_bound_pipeline(part, roof, 1 / 16, cfg)
    assert abs(r["left"]) < 1e-12
    assert r["right"] <= 0 and r["slack"] >= 0
