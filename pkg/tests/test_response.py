from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special
from scipy import stats as sps

from macroresponse import response as R
from macroresponse.response import Basis, ChebyshevSeries, ResponseCurve


def _curve(values, lo=-1.0, hi=1.0, se=1.0, n_steps=1):
    J = len(values)
    eps = R.chebyshev_grid(lo, hi, J)
    return ResponseCurve(eps, np.asarray(values, float), np.full(J, se * math.sqrt(n_steps)),
                         n_steps, lo, hi)


def _gamma_q_oracle(a, x):
    """Upper regularised incomplete gamma by series / continued fraction, in plain floats."""
    lg = math.lgamma(a)
    if x < a + 1:
        term = total = 1.0 / a
        ap = a
        for _ in range(10_000):
            ap += 1
            term *= x / ap
            total += term
            if abs(term) < abs(total) * 1e-17:
                break
        return 1.0 - total * math.exp(-x + a * math.log(x) - lg)
    # modified Lentz
    tiny = 1e-300
    b = x + 1 - a
    c = 1 / tiny
    d = 1 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1 / d
        delta = d * c
        h *= delta
        if abs(delta - 1) < 1e-17:
            break
    return math.exp(-x + a * math.log(x) - lg) * h


def test_grid_is_chebyshev_roots():
    g = R.chebyshev_grid(-1, 1, 8)
    assert np.all(np.diff(g) > 0)
    assert np.allclose(np.polynomial.chebyshev.chebval(g, [0] * 8 + [1]), 0, atol=1e-14)
    g = R.chebyshev_grid(-0.2, 0.0, 8)
    assert g.min() > -0.2 and g.max() < 0.0


def test_sweep_identity_responder():
    c = R.sweep(lambda e, s: e + 1e-9 * (s % 7), -0.2, 0.0, 8, realizations=3)
    assert np.allclose(c.mean, c.eps, atol=1e-8)
    assert c.J == 8 and np.all(c.sigma > 0)
    with pytest.raises(ValueError, match="grid size"):
        R.sweep(lambda e, s: e, 0, 1, 3)
    with pytest.raises(ValueError):
        R.sweep(lambda e, s: e, 0, 1, 8, realizations=1)
    with pytest.raises(ValueError, match="zero spread"):
        R.sweep(lambda e, s: e, 0, 1, 8)


def test_sweep_anova_pools_spread():
    noise = lambda e, s: e + 0.01 * ((s % 1000) / 1000 - 0.5)
    c = R.sweep(noise, 0, 1, 16, realizations=5, sigma_method="anova")
    assert np.unique(c.stderr).size == 1
    with pytest.raises(ValueError):
        R.sweep(noise, 0, 1, 16, sigma_method="median")


def test_fit_recovers_single_polynomial():
    J = 16
    x = R.chebyshev_grid(-1, 1, J)
    s = R.cheb_fit(_curve(4 * x ** 3 - 3 * x))
    want = np.zeros(J)
    want[3] = 1
    assert np.allclose(s.coeffs, want, atol=1e-14)
    s = R.cheb_fit(_curve(np.full(J, 2.5)))
    assert s.coeffs[0] == pytest.approx(2.5) and np.allclose(s.coeffs[1:], 0, atol=1e-14)


def test_fit_of_exponential_matches_bessel_coefficients():
    # e^x = I_0(1) + 2 sum I_k(1) T_k(x)
    J = 32
    c = R.cheb_fit(_curve(np.exp(R.chebyshev_grid(-1, 1, J)))).coeffs
    want = 2 * special.iv(np.arange(J), 1.0)
    want[0] /= 2
    assert np.allclose(c[:16], want[:16], atol=1e-10, rtol=0)


def test_fit_evaluates_back_and_roundtrips(tmp_path):
    lo, hi = -0.2, 0.0
    e = R.chebyshev_grid(lo, hi, 20)
    s = R.cheb_fit(_curve(np.sin(30 * e), lo, hi))
    assert np.allclose(s(e), np.sin(30 * e), atol=1e-12)
    s.to_csv(tmp_path / "c.csv")
    assert np.array_equal(ChebyshevSeries.from_csv(tmp_path / "c.csv").coeffs, s.coeffs)


def test_fit_rejects_foreign_grid():
    c = ResponseCurve(np.linspace(0, 1, 8), np.zeros(8), np.ones(8), 1, 0.0, 1.0)
    with pytest.raises(ValueError):
        R.cheb_fit(c)


@pytest.mark.parametrize("p", [4.0, 1.5])
def test_decay_rate_of_power_law(p):
    k = np.arange(1, 200)
    s = ChebyshevSeries(-1, 1, np.concatenate([[1.0], k ** -p]))
    assert R.decay_rate(s).slope == pytest.approx(-p, abs=1e-12)


def test_decay_rate_with_noise_and_floor():
    g = np.random.default_rng(4)
    k = np.arange(1, 129)
    c = k ** -4.0 * np.exp(0.2 * g.standard_normal(k.size))
    s = ChebyshevSeries(-1, 1, np.concatenate([[1.0], c]))
    assert R.decay_rate(s).slope == pytest.approx(-4, abs=0.3)
    floor = np.full(129, 1e-6)
    fit = R.decay_rate(s, floor=floor)
    assert fit.k_used.max() < 40 and fit.k_excluded.size > 0
    with pytest.raises(ValueError):
        R.decay_rate(ChebyshevSeries(-1, 1, np.ones(4)))


@given(st.floats(1e-3, 1e3), st.floats(1.0, 6.0))
def test_decay_rate_is_scale_invariant(scale, p):
    k = np.arange(1, 60)
    c = np.concatenate([[1.0], k ** -p])
    a = R.decay_rate(ChebyshevSeries(-1, 1, c)).slope
    b = R.decay_rate(ChebyshevSeries(-1, 1, scale * c)).slope
    assert a == pytest.approx(b, abs=1e-9)


def test_usable_range_stops_at_noise():
    c = np.zeros(40)
    c[1:] = 2.0 ** -np.arange(1, 40)
    se = np.full(40, 1e-4)
    lo, hi = R.usable_range(ChebyshevSeries(-1, 1, c), se)
    # 2^-k > 3e-4 for k <= 11
    assert lo == 1 and hi == 11


def test_coefficient_stderr_matches_monte_carlo():
    g = np.random.default_rng(1)
    J = 12
    curve = _curve(np.zeros(J), se=0.5)
    sims = np.array([R.cheb_fit(_curve(0.5 * g.standard_normal(J))).coeffs for _ in range(4000)])
    assert np.allclose(sims.std(axis=0), R.coefficient_stderr(curve), rtol=0.06)


def test_curve_csv_roundtrip(tmp_path):
    c = _curve(np.arange(8.0), se=0.1, n_steps=100)
    c.to_csv(tmp_path / "curve.csv")
    back = ResponseCurve.from_csv(tmp_path / "curve.csv")
    assert np.array_equal(back.mean, c.mean) and np.allclose(back.stderr, c.stderr)
    assert (tmp_path / "curve.csv").read_text().splitlines()[0].startswith("eps,mean,sigma,stderr")


def test_basis_parse():
    assert Basis.parse("chebyshev:30") == Basis("chebyshev", 30)
    assert str(Basis.parse(" Taylor:5 ")) == "taylor:5"
    for bad in ("fourier:3", "chebyshev:0", "chebyshev:x"):
        with pytest.raises(ValueError):
            Basis.parse(bad)


def test_lrt_exact_fit():
    x = R.chebyshev_grid(-1, 1, 40)
    r = R.lrt_test(_curve(np.polynomial.chebyshev.chebval(x, np.arange(1.0, 11.0))), "chebyshev:10")
    assert r.chi2 == 0.0 and r.p_value == 1.0 and r.dof == 30


def test_lrt_null_distribution():
    g = np.random.default_rng(2024)
    J, I, trials = 64, 10, 1000
    x = R.chebyshev_grid(-1, 1, J)
    smooth = 0.3 + 0.2 * x - 0.1 * x ** 2
    res = [R.lrt_test(_curve(smooth + 0.01 * g.standard_normal(J), se=0.01), Basis("chebyshev", I))
           for _ in range(trials)]
    p = np.array([r.p_value for r in res])
    chi = np.array([r.chi2 for r in res])
    assert sps.kstest(p, "uniform").pvalue > 0.01
    assert abs(chi.mean() - (J - I)) < 3 * math.sqrt(2 * (J - I) / trials)


def test_lrt_rejects_rough_curve():
    J = 64
    x = R.chebyshev_grid(-1, 1, J)
    r = R.lrt_test(_curve(np.abs(x) ** 0.5, se=1e-3), "chebyshev:10")
    assert r.p_value < 1e-10


def test_lrt_is_basis_invariant():
    g = np.random.default_rng(5)
    c = _curve(g.standard_normal(30), se=0.7)
    a = R.lrt_test(c, "chebyshev:6")
    b = R.lrt_test(c, "taylor:6")
    assert a.chi2 == pytest.approx(b.chi2, rel=1e-9)
    # shifting the interval rescales the Taylor basis affinely; the span is unchanged
    shifted = ResponseCurve(c.eps + 3, c.mean, c.sigma, c.n_steps, c.lo + 3, c.hi + 3)
    assert R.lrt_test(shifted, "taylor:6").chi2 == pytest.approx(a.chi2, rel=1e-9)


def test_lrt_errors():
    c = _curve(np.zeros(8))
    with pytest.raises(ValueError, match="more grid points"):
        R.lrt_test(c, "chebyshev:8")
    wide = ResponseCurve(np.array([-1, -0.5, 0, 0.5, 1.0]), np.zeros(5), np.ones(5), 1, -1e6, 1e6)
    with pytest.raises(ValueError, match="rank"):
        R.lrt_test(wide, "taylor:4")


@pytest.mark.parametrize("x,dof", [(0.5, 1), (3.0, 2), (10.0, 5), (50.0, 34), (90.0, 34), (500.0, 98)])
def test_chi2_sf_against_independent_oracle(x, dof):
    assert R.chi2_sf(x, dof) == pytest.approx(_gamma_q_oracle(dof / 2, x / 2), rel=1e-10, abs=1e-300)


def test_bias_check():
    J = 40
    x = R.chebyshev_grid(-1, 1, J)
    c = _curve(1 + x, se=0.01)
    assert R.bias_check(c, "chebyshev:2") == 0.0
    # T_2 outside a linear basis: its residual is all of it
    q = 2 * x ** 2 - 1
    got = R.bias_check(c, "chebyshev:2", expected=q)
    assert got == pytest.approx(float(q @ q) / 0.01 ** 2, rel=1e-10)
    # standard errors shrink like 1/sqrt(N): the check grows linearly
    vals = [R.bias_check(_curve(q, se=0.01 / math.sqrt(n)), "chebyshev:2") for n in (1, 4, 16)]
    assert vals[1] == pytest.approx(4 * vals[0]) and vals[2] == pytest.approx(16 * vals[0])


def test_result_json():
    r = R.lrt_test(_curve(np.random.default_rng(0).standard_normal(12)), "chebyshev:4")
    d = json.loads(r.to_json())
    assert set(d) == {"chi2", "dof", "p_value", "basis", "bias_check"}
    assert R.LrtTestResult.from_json(r.to_json()) == r
