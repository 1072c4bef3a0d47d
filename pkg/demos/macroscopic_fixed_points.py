"""Walk the thermodynamic-limit fixed point of the coupled expanding maps.

At eps = 0 every unit sees the same map and the mean field settles on the
invariant density at K = tanh(-2). Turning the coupling up shifts that fixed
point, and somewhere past eps = 18 the feedback through the mean field makes
it unstable. Run with ``python3 demos/macroscopic_fixed_points.py``.
"""
from __future__ import annotations

from macroresponse import thermo

print(" eps    Phi_bar      R(1)     radius  stable")
for eps in (0.0, 5.0, 10.0, 15.0, 18.0, 19.0, 25.0):
    fp = thermo.solve_fixed_point(eps)
    print(f"{eps:4.0f}  {fp.phi_bar:9.6f}  {fp.r_at_1:8.4f}  {fp.spectral_radius:8.4f}  {fp.stable}")

edge = thermo.stability_boundary(15.0, 19.0)
print(f"\nthe principal fixed point loses stability near eps = {edge:.4f}")

# what replaces it: the closed recurrence no longer settles
tail = thermo.run_macro(19.0, 1200).phi[-8:]
print("last mean fields at eps = 19:", " ".join(f"{p:.4f}" for p in tail))

lam = thermo.lyapunov_spectrum(30.0, n_exp=2)
print(f"leading Lyapunov exponents at eps = 30: {lam[0]:.3f}, {lam[1]:.3f}")

# the linear response of the fixed point, checked against a finite difference
r = thermo.fixed_point_response(10.0)
h = 1e-4
fd = (thermo.solve_fixed_point(10 + h).phi_bar - thermo.solve_fixed_point(10 - h).phi_bar) / (2 * h)
print(f"\ndPhi/deps at eps = 10: formula {r['dphi_deps']:.8f}, finite difference {fd:.8f}")
