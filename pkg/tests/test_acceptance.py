"""Acceptance criteria, one test each, at desk scale.

Each test records a one-line verdict that is printed in the terminal summary
(and immediately when run with ``-s``). Sizes are the desk-scale substitutes
of the full-scale runs; the slow ones take minutes on a single core.
"""
from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import special
from scipy import stats as sps

from macroresponse import cli
from macroresponse import ensemble as E
from macroresponse import maps, stats
from macroresponse import response as R
from macroresponse import thermo as T
from macroresponse.thermo import DensityRep

VERDICTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS[n] = line
    print(line)
    assert ok, line


def test_criterion_01_transfer_operator_exactness():
    g = np.random.default_rng(101)
    # K = 0 keeps the uniform density
    u = T.transfer_step(DensityRep.uniform(), 0.0, order=64)
    err_uniform = float(np.max(np.abs(u(np.linspace(-1, 1, 1001)) - 0.5)))
    # mass before renormalisation, over 1000 random densities and shapes
    worst = 0.0
    for _ in range(1000):
        n = int(g.integers(2, 24))
        c = g.standard_normal(n) * 0.3 / np.arange(1, n + 1) ** 2
        c[0] = 0.0
        x = np.linspace(-1, 1, 513)
        c[0] = 0.5 - min(0.0, float(np.min(np.polynomial.chebyshev.chebval(x, c)))) + 0.05
        rho = DensityRep(c / DensityRep(c).mass())
        out = T.transfer_step(rho, float(g.uniform(-0.99, 0.99)))
        worst = max(worst, abs(1.0 / out.renorm - 1.0))
    # invariant density at K = tanh(-2) against 10^6 independent units
    K = math.tanh(maps.K_BASE)
    rho = T.invariant_density(K)
    M = 1_000_000
    s = E.init_ensemble("expanding", M, None, 2024)
    E.run(s, E.ScenarioConfig("uncoupled", 0.0), N=61, burn_in=60, record_phi=False)
    edges = np.linspace(-1, 1, 65)
    counts, _ = np.histogram(s.q, edges)
    anti = np.polynomial.chebyshev.chebint(rho.coeffs, lbnd=-1)
    p = np.diff(np.polynomial.chebyshev.chebval(edges, anti))
    z = (counts / M - p) / np.sqrt(p * (1 - p) / M)
    ok = err_uniform <= 1e-12 and worst <= 1e-10 and np.max(np.abs(z)) < 4
    record(1, ok, f"uniform err {err_uniform:.1e}, worst mass err {worst:.1e}, "
                  f"max |z| over 64 bins {np.max(np.abs(z)):.2f}")


def test_criterion_02_finite_size_convergence():
    eps = 15.0
    target = T.solve_fixed_point(eps).phi_bar
    sizes = np.array([1_000, 10_000, 100_000])
    bias, se = [], []
    for M, reps in zip(sizes, (10, 5, 4)):
        m = [E.run(E.init_ensemble("expanding", int(M), None, 100 + r), E.ScenarioConfig("coupled", eps),
                   20_000, 500).phi.mean() for r in range(reps)]
        bias.append(abs(np.mean(m) - target))
        se.append(np.std(m, ddof=1) / math.sqrt(reps))
    slope = np.polyfit(np.log(sizes), np.log(bias), 1)[0]
    record(2, abs(slope + 1) <= 0.3, f"log-log slope {slope:.3f} (bias {', '.join(f'{b:.2e}' for b in bias)}; "
                                     f"se {', '.join(f'{x:.1e}' for x in se)})")


def test_criterion_03_bifurcation_thresholds():
    boundary = T.stability_boundary(15.0, 19.0, tol=1e-4)
    lam = T.lyapunov_spectrum(30.0, n_exp=3, N=2000, burn_in=200, order=192)
    ok = 18.3 <= boundary <= 18.6 and abs(lam[0] - 0.18) <= 0.03
    record(3, ok, f"stability lost at eps={boundary:.4f}; lambda_1(30)={lam[0]:.4f}")


def test_criterion_04_response_formula():
    worst = 0.0
    parts = []
    for eps in (5.0, 10.0, 15.0):
        pred = T.fixed_point_response(eps)["dphi_deps"]
        h = 1e-4
        fd = (T.solve_fixed_point(eps + h).phi_bar - T.solve_fixed_point(eps - h).phi_bar) / (2 * h)
        rel = abs(pred / fd - 1)
        worst = max(worst, rel)
        parts.append(f"{eps:g}: {pred:.6g} vs {fd:.6g}")
    record(4, worst < 0.01, f"worst relative gap {worst:.1e} ({'; '.join(parts)})")


def test_criterion_05_smooth_parameter_response():
    # 5000 units x 20 fresh parameter draws = 10^5 parameter samples per grid point
    ex = E.Experiment("logistic", maps.RAISED_COSINE_LOGISTIC, M=5000, N=30_000, burn_in=1000)
    curve = R.sweep(ex, -0.2, 0.0, 128, realizations=20, seed=5, sigma_method="anova")
    res = R.lrt_test(curve, "chebyshev:30")
    series = R.cheb_fit(curve)
    se = R.coefficient_stderr(curve)
    k_lo, k_hi = R.usable_range(series, se)
    fit = R.decay_rate(series, k_lo, k_hi)
    ok = res.p_value > 0.01 and fit.slope <= -2.5
    record(5, ok, f"p={res.p_value:.3f} (chi2 {res.chi2:.1f}/{res.dof}); decay slope {fit.slope:.2f} "
                  f"on k={k_lo}..{k_hi}")


def test_criterion_06_three_atom_roughness():
    N = 30_000
    while True:
        ex = E.Experiment("logistic", maps.THREE_ATOMS, M=300, N=N, burn_in=1000, param_seed=7)
        curve = R.sweep(ex, -0.2, 0.0, 128, realizations=10, seed=6, sigma_method="anova")
        if curve.stderr.max() < 1e-4 or N >= 480_000:
            break
        N *= 2
    res = R.lrt_test(curve, "chebyshev:30")
    ok = curve.stderr.max() < 1e-4 and res.p_value < 0.01
    record(6, ok, f"N={N}, max stderr {curve.stderr.max():.1e}, p={res.p_value:.2e} "
                  f"(chi2 {res.chi2:.0f}/{res.dof})")


def test_criterion_07_test_calibration():
    g = np.random.default_rng(7)
    J, I = 128, 30
    x = R.chebyshev_grid(-0.2, 0.0, J)
    basis = R.Basis("chebyshev", I)
    truth = basis.matrix(x, -0.2, 0.0) @ (g.standard_normal(I) / np.arange(1, I + 1) ** 2)
    ones = np.ones(J)
    pvals = np.array([R.lrt_test(R.ResponseCurve(x, truth + g.standard_normal(J), ones, 1, -0.2, 0.0),
                                 basis).p_value for _ in range(1000)])
    ks = sps.kstest(pvals, "uniform").pvalue
    exact = R.lrt_test(R.ResponseCurve(x, truth, ones, 1, -0.2, 0.0), basis)
    ok = ks > 0.01 and exact.chi2 == 0.0 and exact.p_value == 1.0
    record(7, ok, f"KS p-value {ks:.3f} over 1000 nulls; exact fit chi2={exact.chi2}, p={exact.p_value}")


def test_criterion_08_noise_destroys_windows():
    counts = {}
    for sigma in (1e-6, 1e-3):
        scan = stats.noisy_logistic_scan(3.7, 3.8, 1e-5, sigma, 100_000, seed=8, burn_in=1000)
        counts[sigma] = stats.count_outliers(scan.mean, 21, 0.01)
    record(8, counts[1e-3] < counts[1e-6],
           f"outliers at sigma=1e-3: {counts[1e-3]}, at sigma=1e-6: {counts[1e-6]}")


def test_criterion_09_analytic_oracles():
    full = stats.noisy_logistic_scan(4.0, 4.0, 0.1, 0.0, 1_000_000, seed=9, burn_in=100)
    ok_a4 = abs(full.mean[0] - 0.5) < 5 * full.stderr[0]
    a = 3.2
    two = stats.noisy_logistic_scan(a, a, 0.1, 0.0, 100_000, seed=9, burn_in=10_000)
    want = (a + 1) / (2 * a)  # mean of the period-2 orbit
    # the orbit is exactly periodic, so the batch standard error is zero up to rounding
    ok_p2 = abs(two.mean[0] - want) <= max(5 * two.stderr[0], 8 * np.finfo(float).eps)
    J = 32
    x = R.chebyshev_grid(-1, 1, J)
    c = R.cheb_fit(R.ResponseCurve(x, np.exp(x), np.ones(J), 1, -1.0, 1.0)).coeffs
    classic = 2 * special.iv(np.arange(J), 1.0)
    classic[0] /= 2
    cheb_err = float(np.max(np.abs(c[:20] - classic[:20])))
    ok = ok_a4 and ok_p2 and cheb_err <= 1e-10
    record(9, ok, f"a=4 mean {full.mean[0]:.5f}+-{full.stderr[0]:.1e}; a=3.2 mean {two.mean[0]:.12f} "
                  f"vs {want:.12f}; exp coefficients err {cheb_err:.1e}")


def test_criterion_10_coupled_logistic_regime_change():
    M = 100_000
    track = np.arange(0, M, 100)
    calm = E.run(E.init_ensemble("logistic", M, maps.RAISED_COSINE_LOGISTIC, 11),
                 E.ScenarioConfig("coupled", -0.15), 6000, 4000, track=track)
    c0 = stats.unit_autocovariance(calm.tracked, 0).values[0]
    var_calm = float(np.var(calm.phi[-1000:], ddof=1))
    converges = var_calm < 10 * c0 / M
    wild = E.run(E.init_ensemble("logistic", M, maps.RAISED_COSINE_LOGISTIC, 11),
                 E.ScenarioConfig("coupled", 0.0), 6000, 4000, track=track)
    c0_wild = stats.unit_autocovariance(wild.tracked, 0).values[0]
    var_wild = float(np.var(wild.phi[-1000:], ddof=1))
    oscillates = var_wild > 100 * c0_wild / M
    ex = E.Experiment("logistic", maps.RAISED_COSINE_LOGISTIC, M=M, N=4000, burn_in=1000, mode="driven")
    roots = stats.mean_field_fixed_points(ex, 0.0, seed=5, lo=0.0, hi=1.0, n_grid=11)
    # the static gain at the root is small; the instability lives in the delayed response,
    # which the sustained oscillation above demonstrates. Take the root the oscillation surrounds.
    centre = float(wild.phi.mean())
    psi = min(roots, key=lambda r: abs(r.phi - centre)).psi if roots else math.nan
    near = abs(psi - 0.615) <= 0.02
    record(10, converges and oscillates and near,
           f"eps=-0.15 var {var_calm:.1e} vs 10 C0/M {10 * c0 / M:.1e}; eps=0 var {var_wild:.1e}; "
           f"mean-field fixed point Psi={psi:.4f}, time mean {wild.psi.mean():.4f} (target 0.615+-0.02)")


TINY = {
    "sweep-uncoupled": dict(M=300, N=400, burn_in=50, J=8, realizations=2),
    "sweep-torus": dict(M=100, N=300, burn_in=50, J=8, realizations=2),
    "sweep-coupled": dict(family="expanding", M=3000, N=300, burn_in=50, J=8, realizations=2,
                          eps_lo=10, eps_hi=15),
    "noisy-scan": dict(da=0.01, N=2000, burn_in=100),
    "thermo-fixed-point": dict(eps="5, 15"),
    "thermo-bifurcate": dict(eps_lo=18, eps_hi=19, n_eps=3, N=100, burn_in=50),
    "thermo-lyapunov": dict(eps=15, N=100, burn_in=20, order=64),
    "thermo-susceptibility": dict(horizon=50),
    "surrogate-compare": dict(M=3000, N=2000, burn_in=100, realizations=2, tracked=100),
    "multistability-search": dict(M=3000, N=300, burn_in=200, realizations=3, mean_field_roots="true"),
}


def _write_ini(path, recipe, out, params):
    lines = ["[experiment]", f"recipe = {recipe}", "seed = 11", f"output = {out}"]
    lines += [f"{k} = {v}" for k, v in params.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _data_files(run_dir):
    return {f.name: f.read_bytes() for f in sorted(run_dir.iterdir()) if f.name != "manifest.json"}


def test_criterion_11_determinism(tmp_path):
    differing = []
    checked = 0
    # lrt-test and cheb-analyze read a sweep curve, so they run after it
    configs = dict(TINY)
    for recipe, params in configs.items():
        runs = []
        for i, threads in enumerate((1, 2)):
            out = tmp_path / f"out{i}"
            ini = _write_ini(tmp_path / f"{recipe}.ini", recipe, out, params)
            assert cli.main([recipe, "--config", str(ini), "--threads", str(threads)]) == 0
            (d,) = (out / recipe).iterdir()
            runs.append(_data_files(d))
        checked += 1
        if runs[0] != runs[1]:
            differing.append(recipe)
    (d,) = (tmp_path / "out0" / "sweep-uncoupled").iterdir()
    for recipe, extra in (("lrt-test", {"basis": "chebyshev:4"}), ("cheb-analyze", {})):
        runs = []
        for i, threads in enumerate((1, 2)):
            out = tmp_path / f"post{i}"
            ini = _write_ini(tmp_path / f"{recipe}.ini", recipe, out, {"curve": d / "data.csv", **extra})
            assert cli.main([recipe, "--config", str(ini), "--threads", str(threads)]) == 0
            (r,) = (out / recipe).iterdir()
            runs.append(_data_files(r))
        checked += 1
        if runs[0] != runs[1]:
            differing.append(recipe)
    assert checked == len(cli.RECIPES)
    record(11, not differing, f"{checked} recipes rerun with 1 and 2 threads; differing: {differing or 'none'}")
