import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curvlab.entropy import (CylinderMeasure, entropy_of_labels, join_atoms, ks_entropy_estimate,
                             log_weight, markov_entropy_rate, partition_entropy, pressure,
                             pressure_from_logs, refined_entropy, refined_pressure, ruelle_check,
                             subadditivity_check, suspension_entropy_estimate, weights)
from curvlab.errors import ValidationError
from curvlab.symbolic import RoofFunction

P_STAY = np.array([[0.9, 0.1], [0.1, 0.9]])


def H(p):
    p = np.asarray(p, float)
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def test_partition_entropy_cases():
    assert partition_entropy([0.5, 0.5]) == pytest.approx(math.log(2))
    assert partition_entropy([1.0, 0.0]) == 0.0
    assert partition_entropy([0.25] * 4) == pytest.approx(math.log(4))
    with pytest.raises(ValidationError):
        partition_entropy([0.7, 0.7])
    with pytest.raises(ValidationError):
        partition_entropy([-0.1, 1.1])


def test_refined_entropy_bernoulli_and_periodic():
    mu = CylinderMeasure.bernoulli([0.5, 0.5], max_depth=8)
    for n in range(1, 9):
        assert refined_entropy(mu, n) == pytest.approx(n * math.log(2))
    per = CylinderMeasure.periodic([0, 0, 1], 2, max_depth=8)
    assert refined_entropy(per, 8) == pytest.approx(math.log(3))
    const = CylinderMeasure.periodic([1], 2, max_depth=8)
    assert refined_entropy(const, 8) == 0.0


def test_markov_closed_form():
    mu = CylinderMeasure.markov(P_STAY, max_depth=8)
    rate = -(0.9 * math.log(0.9) + 0.1 * math.log(0.1))
    for n in range(1, 9):
        assert refined_entropy(mu, n) == pytest.approx(math.log(2) + (n - 1) * rate, abs=1e-9)
    assert markov_entropy_rate(P_STAY) == pytest.approx(rate)
    est = ks_entropy_estimate(mu, 8)
    assert est["estimate"] == pytest.approx(rate, abs=1e-6)
    assert est["differences_nonincreasing"]


def test_ks_estimate_cases():
    assert ks_entropy_estimate(CylinderMeasure.bernoulli([0.5, 0.5]), 6)["estimate"] == pytest.approx(math.log(2))
    assert ks_entropy_estimate(CylinderMeasure.periodic([0, 1, 1], 2), 6)["estimate"] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValidationError):
        ks_entropy_estimate(CylinderMeasure.bernoulli([0.5, 0.5]), 2)


def test_empirical_measure_is_compatible():
    rng = np.random.default_rng(0)
    seqs = rng.integers(0, 3, size=(50, 200))
    mu = CylinderMeasure.from_sequences(seqs, 3, 5)
    assert mu.compatibility_error() < 1e-12
    assert refined_entropy(mu, 1) == pytest.approx(math.log(3), abs=0.01)


def test_subadditivity():
    b = subadditivity_check(CylinderMeasure.bernoulli([0.2, 0.8], max_depth=8), 3, 4)
    assert abs(b["slack"]) < 1e-9 and b["invariant"]
    m = subadditivity_check(CylinderMeasure.markov(P_STAY, max_depth=8), 3, 4)
    assert m["slack"] >= -1e-9 and m["passed"]
    # a non-invariant measure: Markov chain started away from stationarity
    bad = CylinderMeasure.markov(np.array([[0.0, 1.0], [0.0, 1.0]]), pi=[1.0, 0.0], max_depth=6)
    r = subadditivity_check(bad, 1, 1)
    assert not r["invariant"] and r["passed"]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4))
def test_markov_subadditivity_property(rows):
    P = np.array([[rows[0], 1 - rows[0] + 0.0], [rows[1], 1 - rows[1]]])
    P = np.clip(P, 0, 1)
    P = P / P.sum(1, keepdims=True)
    mu = CylinderMeasure.markov(P, max_depth=6)
    for n in range(1, 4):
        assert subadditivity_check(mu, n, 6 - n - 1)["slack"] >= -1e-9


def test_entropy_of_labels():
    labels = np.array([0, 0, 1, 1, 2, 3, 3, 3])
    assert entropy_of_labels(labels) == pytest.approx(H([2 / 8, 2 / 8, 1 / 8, 3 / 8]))


def test_weights():
    zero = RoofFunction.constant(2, 1, 0)
    assert weights((0, 1, 1, 0), zero) == 1.0
    c = RoofFunction.constant(2, 1, Fraction(3, 10))
    # word of length k + 1 = 5: k - 1 = 3 shifted terms
    assert weights((0, 1, 1, 0, 1), c) == pytest.approx(math.exp(0.3 * 3 / 2))
    rng = np.random.default_rng(1)
    tab = [[float(v) for v in row] for row in rng.random((3, 3))]
    roof = RoofFunction([[1.0] * 3] * 3, tab)
    for _ in range(100):
        w = tuple(int(v) for v in rng.integers(0, 3, int(rng.integers(2, 9))))
        k = len(w) - 1
        direct = 0.5 * sum(tab[w[j]][w[j + 1]] for j in range(1, k))
        assert log_weight(w, roof) == pytest.approx(direct)
        back = 0.5 * sum(tab[w[k - j - 1]][w[k - j]] for j in range(1, k))
        assert log_weight(w, roof, "backward") == pytest.approx(back)
    with pytest.raises(ValidationError):
        weights((0,), c)


def test_pressure_cases():
    m = [0.1, 0.2, 0.3, 0.4]
    assert pressure(m, [1, 1, 1, 1]).p == pytest.approx(H(m))
    c = 0.7
    assert pressure([1.0, 0.0], [math.exp(c / 2), 5.0]).p == pytest.approx(-c)
    W = [1.0, 2.0, 3.0, 4.0]
    hand = math.log(4) - 2 * 0.25 * (math.log(2) + math.log(3) + math.log(4))
    assert pressure([0.25] * 4, W).p == pytest.approx(hand)
    assert pressure_from_logs([0.25] * 4, np.log(W)).p == pytest.approx(hand)
    with pytest.raises(ValidationError):
        pressure([0.5, 0.5], [1.0])
    with pytest.raises(ValidationError):
        pressure([0.5, 0.5], [1.0, 0.0])


def test_refined_pressure_constant_roof_oracle():
    # roof 1, N0 = 1: each step shifts exactly one symbol, atoms of the 3-fold join are
    # the cylinders x_0..x_5 and every label word carries weight exp(phi)
    p = [0.3, 0.7]
    phi = 0.2
    roof = RoofFunction.constant(2, Fraction(1), Fraction(1, 5))
    base = CylinderMeasure.bernoulli(p, max_depth=12)
    rep = refined_pressure(base, roof, 1, 3)
    assert rep.H == pytest.approx(6 * H(p), abs=1e-12)
    assert rep.p == pytest.approx(6 * H(p) - 6 * phi, abs=1e-12)
    n1 = refined_pressure(base, roof, 1, 1)
    assert n1.H == pytest.approx(4 * H(p), abs=1e-12)
    zero = RoofFunction.constant(2, Fraction(1), 0)
    assert refined_pressure(base, zero, 1, 2).p == pytest.approx(refined_pressure(base, zero, 1, 2).H)
    assert sum(join_atoms(base, roof, 1, 2).values()) == pytest.approx(1.0)


def test_ruelle_check_cases():
    r = ruelle_check(0.0, 1.0)
    assert r["ruelle_slack"] == 1.0 and r["half_gap"] == -0.5 and r["passed"]
    assert ruelle_check(0.0, 0.0)["ruelle_slack"] == 0.0
    assert not ruelle_check(1.5, 1.0)["passed"]
    with pytest.raises(ValidationError):
        ruelle_check(float("nan"), 1.0)


def test_suspension_entropy_two_valued_roof():
    roof = RoofFunction([[1, 3], [1, 3]], [[0, 0], [0, 0]])
    est = suspension_entropy_estimate([0.5, 0.5], roof, depth=8, n_orbits=2000, seed=3)
    target = math.log(2) / 2.0
    assert abs(est["per_time"] - target) / target <= 0.05
