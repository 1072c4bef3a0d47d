"""Smooth parameters give a smooth response; three atoms do not.

A heterogeneous ensemble of perturbed logistic maps is swept over eps on a
Chebyshev grid. When the map parameter is spread by a smooth density the
periodic windows of individual maps average out. When it sits on three
atoms they do not, and the chi-square test against a 30-term Chebyshev
basis notices once the error bars are small. Sizes here are far below the
acceptance runs, so the smooth case is only a sketch (about a minute).
"""
from __future__ import annotations

from macroresponse import ensemble, maps, response

J, BASIS = 64, "chebyshev:30"

smooth = ensemble.Experiment("logistic", maps.RAISED_COSINE_LOGISTIC, M=2000, N=5000, burn_in=500)
curve = response.sweep(smooth, -0.2, 0.0, J, realizations=4, seed=1, sigma_method="anova")
res = response.lrt_test(curve, BASIS)
print(f"raised cosine: chi2 = {res.chi2:.1f} on {res.dof} dof, p = {res.p_value:.3f}")

atoms = ensemble.Experiment("logistic", maps.THREE_ATOMS, M=300, N=20_000, burn_in=500, param_seed=7)
curve = response.sweep(atoms, -0.2, 0.0, J, realizations=4, seed=1, sigma_method="anova")
res = response.lrt_test(curve, BASIS)
print(f"three atoms:   chi2 = {res.chi2:.1f} on {res.dof} dof, p = {res.p_value:.2e}")

series = response.cheb_fit(curve)
se = response.coefficient_stderr(curve)
print("\n k   |c_k|      3 se")
for k in (1, 2, 4, 8, 16, 32, 48):
    print(f"{k:2d}  {abs(series.coeffs[k]):.2e}  {3 * se[k]:.2e}")
