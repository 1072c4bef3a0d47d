from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from macroresponse import maps
from macroresponse.maps import (
    ConfigurationError,
    DiscreteAtoms,
    LogisticUnitState,
    RaisedCosine,
    StepFault,
    TorusUnitState,
)

# Computed with mpmath at 40 digits straight from the formulas, not from this package.
EXPANDING_AT_QUARTER = -0.74096731568439977851
TORUS_ORACLE = (0.425, 0.91629509039022584028)


def test_idle_branch_only_moves_cocycle():
    s = maps.step_logistic(LogisticUnitState(0.3, 0.25), a=3.9, phi_mean=2.0, eps=0.3)
    assert (s.q, s.r) == (0.3, 0.5)


def test_active_branch_values():
    s = maps.step_logistic(LogisticUnitState(0.5, 0.75), 3.75, 0.0, 0.0, coupled=True)
    assert s.q == pytest.approx(0.9375, abs=1e-15) and s.r == 0.5
    s = maps.step_logistic(LogisticUnitState(0.5, 0.75), 3.75, 0.0, 0.1)
    assert s.q == pytest.approx(0.9625, abs=1e-15) and s.r == 0.5


def test_perturbation_and_coupling_values():
    assert [maps.perturbation_g(q) for q in (0.0, 0.5, 1.0)] == [0.0, 0.25, 0.0]
    assert maps.coupling_h(0.7, 0.0) == 0.0
    assert maps.coupling_h(0.5, 3.0) == 0.0
    assert maps.coupling_h(0.25, 1.0) == pytest.approx(0.5 * 0.1875 * math.tanh(1.0), rel=1e-14)
    assert maps.coupling_h(0.25, 1.0) == pytest.approx(0.071399, abs=1e-6)


def test_observables_at_endpoints():
    assert [maps.phi_logistic(q) for q in (0.5, 1.0, 0.0)] == pytest.approx([1.0, 5.0, -3.0], abs=1e-14)
    assert maps.phi_expanding(0.0) == pytest.approx(-23 / 30, abs=1e-15)
    assert maps.phi_expanding(1.0) == pytest.approx(11 / 15, abs=1e-15)


def test_phi_logistic_is_shifted_chebyshev():
    q = np.linspace(0, 1, 101)
    ref = 4 * np.polynomial.chebyshev.chebval(2 * q - 1, [0, 0, 0, 0, 0, 1]) + 1
    assert np.allclose([maps.phi_logistic(x) for x in q], ref, atol=1e-12)


def test_phi_expanding_has_zero_uniform_mean():
    val, _ = integrate.quad(lambda q: maps.phi_expanding(q) / 2, -1, 1, epsabs=1e-14)
    assert abs(val) < 1e-12


def test_expanding_step_values():
    assert maps.step_expanding(0.25, 0.0) == -0.5
    assert maps.step_expanding(-0.25, 0.0) == 0.5
    assert maps.step_expanding(0.25, math.tanh(-2.0)) == pytest.approx(EXPANDING_AT_QUARTER, abs=1e-14)


def test_expanding_reduces_to_doubling_at_zero_shape():
    q = np.linspace(-1, 1, 10_000)
    got = np.array([maps.step_expanding(x, 0.0) for x in q])
    want = 2 * q - np.sign(q)
    assert np.max(np.abs(got - want)) <= 1e-12


def test_expanding_rejects_bad_shape():
    with pytest.raises(ConfigurationError):
        maps.step_expanding(0.1, 1.0)


def test_torus_values():
    assert maps.step_torus(TorusUnitState(0.0, 0.0), 3.9, 0.0) == TorusUnitState(0.0, 0.0)
    s = maps.step_torus(TorusUnitState(0.0, 0.5), 4.0, 0.0)
    assert s.x == 0.0 and s.y == pytest.approx(0.5, abs=1e-14)
    s = maps.step_torus(TorusUnitState(0.5, 0.25), 3.7, 0.05)
    assert (s.x, s.y) == pytest.approx(TORUS_ORACLE, abs=1e-14)


def test_escape_is_a_step_fault():
    with pytest.raises(StepFault) as info:
        maps.step_logistic(LogisticUnitState(0.5, 0.75), 4.0, 0.0, 1.0)
    assert info.value.value > 1.0


# the logistic experiments use eps in [-0.2, 0]; at a=3.8 and eps=+0.2 orbits can leave [0, 1]
@given(st.floats(0.0, 1.0), st.floats(0.0, 0.999999), st.floats(3.7, 3.8), st.floats(-0.2, 0.0),
       st.floats(-3.0, 5.0))
def test_logistic_step_stays_in_domain(q, r, a, eps, phi):
    s = maps.step_logistic(LogisticUnitState(q, r), a, phi, eps)
    assert 0.0 <= s.q <= 1.0 and 0.0 <= s.r < 1.0


@given(st.floats(0.0, 1.0), st.floats(0.5, 0.999), st.floats(3.7, 3.8), st.floats(-0.2, 0.2))
def test_uncoupled_equals_coupled_at_zero_field(q, r, a, eps):
    s0 = maps.step_logistic(LogisticUnitState(q, r), a, 0.0, eps, coupled=False)
    s1 = maps.step_logistic(LogisticUnitState(q, r), a, 0.0, eps, coupled=True)
    assert s0 == s1


@given(st.floats(-1.0, 1.0), st.floats(-0.999, 0.999))
def test_expanding_step_stays_in_domain(q, K):
    assert -1.0 <= maps.step_expanding(q, K) <= 1.0


@given(st.floats(0.0, 0.999999), st.floats(0.0, 0.999999), st.floats(3.7, 4.3), st.floats(0.0, 0.1))
def test_torus_step_stays_on_torus(x, y, a, eps):
    s = maps.step_torus(TorusUnitState(x, y), a, eps)
    assert 0.0 <= s.x < 1.0 and 0.0 <= s.y < 1.0


def test_domain_preservation_at_scale():
    # 10^6 random draws from the experiment ranges; the compiled kernel is checked on a subset
    g = np.random.default_rng(0)
    n = 1_000_000
    q = g.random(n)
    a = g.uniform(3.7, 3.8, n)
    th = np.tanh(g.uniform(-3, 5, n))
    eps = g.uniform(-0.2, 0.0, n)
    u = q * (1 - q)
    out = a * u + (1 - 2 * q) * u * th + eps * 4 * u * u
    assert out.min() >= 0.0 and out.max() <= 1.0
    sub = np.array([maps.logistic_active(*v) for v in zip(q[:5000], a, th, eps)])
    assert np.array_equal(sub, out[:5000])
    K = np.clip(np.tanh(g.uniform(-20, 20, 20_000)), -1 + 1e-12, 1 - 1e-12)
    qe = g.uniform(-1, 1, K.size)
    vals = np.array([maps.expanding_map(x, k) for x, k in zip(qe, K)])
    assert np.all(np.abs(vals) <= 1 + maps.STEP_TOL)


def test_raised_cosine_normalised_and_supported():
    rc = maps.RAISED_COSINE_LOGISTIC
    mass, _ = integrate.quad(rc.pdf, 3.7, 3.8)
    assert mass == pytest.approx(1.0, abs=1e-12)
    assert rc.cdf(3.7) == pytest.approx(0.0, abs=1e-15) and rc.cdf(3.8) == pytest.approx(1.0, abs=1e-15)
    torus = maps.RAISED_COSINE_TORUS
    mass, _ = integrate.quad(torus.pdf, 3.7, 4.3)
    assert mass == pytest.approx(1.0, abs=1e-12)


def test_raised_cosine_sampling():
    M = 1_000_000
    a = maps.sample_parameters(maps.RAISED_COSINE_LOGISTIC, M, seed=11)
    assert a.min() >= 3.7 and a.max() <= 3.8
    assert abs(a.mean() - 3.75) <= 4 * a.std() / math.sqrt(M)
    s = np.sort(a)
    ecdf_hi = np.arange(1, M + 1) / M
    cdf = maps.RAISED_COSINE_LOGISTIC.cdf(s)
    assert max(np.max(np.abs(ecdf_hi - cdf)), np.max(np.abs(ecdf_hi - 1 / M - cdf))) < 2e-3


def test_ppf_inverts_cdf():
    rc = RaisedCosine(2.0, 0.5)
    u = np.linspace(0, 1, 201)
    assert np.allclose(rc.cdf(rc.ppf(u)), u, atol=1e-11)


def test_three_atom_frequencies():
    a = maps.sample_parameters(maps.THREE_ATOMS, 300_000, seed=2)
    for loc in (3.72, 3.75, 3.78):
        assert abs(np.mean(a == loc) - 1 / 3) < 0.005
    assert np.unique(a).size == 3


def test_sampling_is_deterministic():
    a = maps.sample_parameters(maps.RAISED_COSINE_LOGISTIC, 1000, 5)
    b = maps.sample_parameters(maps.RAISED_COSINE_LOGISTIC, 1000, 5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, maps.sample_parameters(maps.RAISED_COSINE_LOGISTIC, 1000, 6))


@pytest.mark.parametrize("bad", [
    lambda: RaisedCosine(3.75, 0.0),
    lambda: RaisedCosine(3.75, -1.0),
    lambda: DiscreteAtoms(((3.7, 0.5), (3.8, 0.6))),
    lambda: DiscreteAtoms(((3.7, -0.5), (3.8, 1.5))),
    lambda: maps.sample_parameters(maps.THREE_ATOMS, 0, 1),
])
def test_invalid_distributions(bad):
    with pytest.raises(ConfigurationError):
        bad()
