"""Thermodynamic limit of the mean-field coupled expanding maps.

For ``M = infinity`` the unit law is a density ``rho_n`` on [-1, 1] that is
pushed forward by the transfer operator of ``q -> g_K(T(q))`` with
``K_n = tanh(eps * Phi_n - 2)`` and ``Phi_n = int phi rho_n``. Densities are
stored as Chebyshev coefficients; the transfer operator is evaluated by
collocation at the Chebyshev roots, summing over the two branch preimages.

The macroscopic map ``rho -> L_{K(rho)} rho`` is then iterated, linearised
(susceptibilities, Lyapunov exponents) and solved for fixed points.
"""
from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np
from numpy.polynomial import chebyshev as C
from scipy import fft as sfft
from scipy import linalg, optimize

from . import maps, rng
from .maps import ConfigurationError
from .stats import AutocovarianceEstimate, SurrogateNoiseModel, synthesize_noise

__all__ = [
    "TransferError",
    "FixedPointError",
    "DensityRep",
    "MacroTrajectory",
    "FixedPointResult",
    "SusceptibilitySeries",
    "BifurcationTable",
    "transfer_step",
    "invariant_density",
    "phi_invariant",
    "macro_step",
    "run_macro",
    "run_macro_noisy",
    "fixed_points",
    "solve_fixed_point",
    "susceptibility",
    "impulse_response",
    "fixed_point_response",
    "stability_boundary",
    "lyapunov_spectrum",
    "bifurcation_scan",
    "phi_autocovariance",
]

START_ORDER = 32
MAX_ORDER = 4096
TAIL_TOL = 1e-13
RENORM_TOL = 1e-8
PHI_RANGE = (-23.0 / 30.0, -23.0 / 30.0 + 3.5 * 0.875 - 2.0 * 0.875 ** 2)  # range of phi on [-1, 1]


class TransferError(RuntimeError):
    pass


class FixedPointError(RuntimeError):
    def __init__(self, message: str, last: float = math.nan):
        super().__init__(message)
        self.last = last


# --------------------------------------------------------------------------
# Chebyshev bookkeeping

_PHI_CHEB = C.poly2cheb([-23.0 / 30.0, 0.0, 3.5, 0.0, -2.0])


@functools.lru_cache(maxsize=None)
def _mass_weights(n: int) -> np.ndarray:
    """``int_{-1}^{1} T_k`` for ``k < n``."""
    k = np.arange(n)
    w = np.zeros(n)
    even = k % 2 == 0
    w[even] = 2.0 / (1.0 - k[even].astype(float) ** 2)
    w.flags.writeable = False
    return w


@functools.lru_cache(maxsize=None)
def _phi_weights(n: int) -> np.ndarray:
    """``int phi T_k`` for ``k < n``, from ``T_j T_k = (T_{j+k} + T_{|j-k|}) / 2``."""
    big = _mass_weights(n + _PHI_CHEB.size)
    k = np.arange(n)
    w = np.zeros(n)
    for j, pj in enumerate(_PHI_CHEB):
        w += pj * 0.5 * (big[k + j] + big[np.abs(k - j)])
    w.flags.writeable = False
    return w


@functools.lru_cache(maxsize=None)
def _roots(n: int) -> np.ndarray:
    y = np.cos(np.pi * (np.arange(n) + 0.5) / n)
    y.flags.writeable = False
    return y


def _values_to_coeffs(v: np.ndarray) -> np.ndarray:
    c = sfft.dct(v, type=2, axis=0) / v.shape[0]
    c[0] *= 0.5
    return c


def _mass(c) -> float:
    return float(np.dot(c, _mass_weights(c.size)))


def _phi(c) -> float:
    return float(np.dot(c, _phi_weights(c.size)))


# --------------------------------------------------------------------------
# branch inversion


def _shape(t, K):
    c = 1.0 - 0.97 * K * K
    s = t + K
    return (t + K * (1.0 - np.sqrt(0.03 * c + 0.97 * s * s))) / c


def _shape_prime(t, K):
    c = 1.0 - 0.97 * K * K
    s = t + K
    return (1.0 - 0.97 * K * s / np.sqrt(0.03 * c + 0.97 * s * s)) / c


@numba.njit(cache=True)
def _invert_shape(y, K, t_out):
    for i in range(y.size):
        lo, hi = -1.0, 1.0
        t = y[i]
        for _ in range(100):
            f = maps.expanding_shape(t, K) - y[i]
            if f < 0.0:
                lo = t
            else:
                hi = t
            c = 1.0 - 0.97 * K * K
            s = t + K
            gp = (1.0 - 0.97 * K * s / math.sqrt(0.03 * c + 0.97 * s * s)) / c
            tn = t - f / gp
            if not (lo < tn < hi):
                tn = 0.5 * (lo + hi)
            done = abs(tn - t) <= 1e-15
            t = tn
            if done:
                break
        t_out[i] = t


@numba.njit(cache=True)
def _clenshaw_pair(t, c, out):
    """``out[i] = f((t_i - 1)/2) + f((t_i + 1)/2)`` for the Chebyshev series ``c``."""
    n = c.size
    for i in range(t.size):
        tot = 0.0
        for x in ((t[i] - 1.0) * 0.5, (t[i] + 1.0) * 0.5):
            x2 = 2.0 * x
            b1 = 0.0
            b2 = 0.0
            for k in range(n - 1, 0, -1):
                b0 = c[k] + x2 * b1 - b2
                b2 = b1
                b1 = b0
            tot += c[0] + x * b1 - b2
        out[i] = tot


@functools.lru_cache(maxsize=64)
def _preimages(K: float, n: int):
    """Preimages ``t`` of the collocation points under ``g_K`` and weights ``1/(2 g')``.

    Newton's method safeguarded by bisection on the bracket [-1, 1].
    """
    y = _roots(n)
    t = np.empty(n)
    _invert_shape(y, K, t)
    # g' > 1/2 on [-1, 1], so the residual bounds the error in t; evaluating
    # g itself carries rounding of order eps / (1 - 0.97 K^2)
    resid = np.max(np.abs(_shape(t, K) - y))
    gp = _shape_prime(t, K)
    if not resid <= 64 * np.finfo(float).eps / (1.0 - 0.97 * K * K) or not np.all(gp > 0):
        raise TransferError(f"branch inversion failed at K={K}: residual {resid:.3g}")
    w = 0.5 / gp
    t.flags.writeable = False
    w.flags.writeable = False
    return t, w


def _push(c: np.ndarray, K: float, n: int) -> np.ndarray:
    """Transfer operator applied to coefficients ``c`` at collocation order ``n``.

    ``c`` may be a matrix with one coefficient vector per column.
    """
    t, w = _preimages(float(K), n)
    if c.ndim == 2:
        return np.column_stack([_push(c[:, i], K, n) for i in range(c.shape[1])])
    v = np.empty(n)
    _clenshaw_pair(t, np.ascontiguousarray(c, dtype=float), v)
    return _values_to_coeffs(v * w)


def _transfer_matrix(K: float, n: int) -> np.ndarray:
    """Matrix of the order-``n`` truncated transfer operator on coefficients."""
    t, w = _preimages(float(K), n)
    V = (C.chebvander((t - 1.0) / 2.0, n - 1) + C.chebvander((t + 1.0) / 2.0, n - 1)) * w[:, None]
    return _values_to_coeffs(V)


def _tail(c: np.ndarray) -> float:
    top = np.max(np.abs(c))
    return float(np.max(np.abs(c[-2:])) / top) if top > 0 else 0.0


def _drop_mass(d: np.ndarray) -> np.ndarray:
    """Remove the (rounding-level) mass of a perturbation along ``T_0``.

    Mass is conserved, so any mass in a perturbation would persist forever
    instead of decaying with the rest of it.
    """
    d[0] -= _mass(d) / 2.0
    return d


def _pad(c: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(n)
    m = min(n, c.size)
    out[:m] = c[:m]
    return out


# --------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class DensityRep:
    """Chebyshev coefficients of a density on [-1, 1].

    ``renorm`` is the factor that restored unit mass after the step that
    produced this density (1 for constructed densities).
    """

    coeffs: np.ndarray
    renorm: float = 1.0

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float, copy=True).ravel()
        if c.size == 0 or not np.all(np.isfinite(c)):
            raise ValueError("density coefficients must be finite and nonempty")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def uniform(cls) -> "DensityRep":
        return cls(np.array([0.5]))

    @property
    def order(self) -> int:
        return self.coeffs.size

    def mass(self) -> float:
        return _mass(self.coeffs)

    def phi(self) -> float:
        """``int phi_expanding(q) rho(q) dq``."""
        return _phi(self.coeffs)

    def __call__(self, x):
        return C.chebval(np.asarray(x, dtype=float), self.coeffs)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "coeff", "lo", "hi"])
            for k, ck in enumerate(self.coeffs):
                w.writerow([k, repr(float(ck)), -1, 1])

    @classmethod
    def from_csv(cls, path) -> "DensityRep":
        d = np.genfromtxt(path, delimiter=",", names=True)
        return cls(np.atleast_1d(d["coeff"]))


@dataclass
class MacroTrajectory:
    """``phi[n]`` is the mean field of ``rho_n`` and ``K[n]`` the shape
    parameter that maps ``rho_n`` to ``rho_{n+1}``, for ``n = 0..N``."""

    phi: np.ndarray
    K: np.ndarray
    eps: float
    densities: list = field(default_factory=list)
    final: Optional[DensityRep] = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "phi", "K"])
            for n, (p, k) in enumerate(zip(self.phi, self.K)):
                w.writerow([n, repr(float(p)), repr(float(k))])


@dataclass(frozen=True)
class SusceptibilitySeries:
    chi: np.ndarray  # chi[k-1] for k = 1..horizon
    r_of_one: float
    remainder: float
    decaying: bool

    def R(self, z):
        """``R(z) = sum_k chi_k z^k`` (truncated)."""
        z = np.asarray(z, dtype=complex)
        return np.polynomial.polynomial.polyval(z, np.concatenate([[0.0], self.chi]))

    def zeros_in_disk(self, n_nodes: int = 1024) -> int:
        """Zeros of ``1 - R(z)`` in the open unit disk, by the argument principle."""
        z = np.exp(2j * np.pi * np.arange(n_nodes + 1) / n_nodes)
        f = 1.0 - self.R(z)
        dphase = np.angle(f[1:] / f[:-1])
        return int(round(dphase.sum() / (2 * np.pi)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "chi", "partial_R1"])
            s = 0.0
            for k, x in enumerate(self.chi, start=1):
                s += float(x)
                w.writerow([k, repr(float(x)), repr(s)])


@dataclass(frozen=True)
class FixedPointResult:
    eps: float
    phi_bar: float
    density: DensityRep
    residual: float
    stable: bool
    r_at_1: float
    K: float
    spectral_radius: float
    others: tuple = ()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["eps", "phi_bar", "K", "residual", "stable", "r_at_1", "spectral_radius",
                        "principal"])
            w.writerow([repr(self.eps), repr(self.phi_bar), repr(self.K), repr(self.residual),
                        int(self.stable), repr(self.r_at_1), repr(self.spectral_radius), 1])
            for p in self.others:
                w.writerow([repr(self.eps), repr(float(p)), "", "", "", "", "", 0])


@dataclass
class BifurcationTable:
    eps: np.ndarray
    samples: list

    def n_distinct(self, tol: float = 1e-6) -> np.ndarray:
        out = []
        for s in self.samples:
            v = np.sort(np.asarray(s))
            out.append(1 + int(np.sum(np.diff(v) > tol)) if v.size else 0)
        return np.array(out)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["eps", "i", "phi"])
            for e, s in zip(self.eps, self.samples):
                for i, p in enumerate(s):
                    w.writerow([repr(float(e)), i, repr(float(p))])


# --------------------------------------------------------------------------
# transfer operator


def _check_K(K: float) -> float:
    K = float(K)
    if not abs(K) < 1.0:
        raise ConfigurationError(f"|K| must be < 1, got {K}")
    return K


def transfer_step(rho: DensityRep, K: float, order: Optional[int] = None,
                  max_order: int = MAX_ORDER) -> DensityRep:
    """Push ``rho`` forward by the transfer operator at shape parameter ``K``.

    With ``order=None`` the collocation order starts at 32 and doubles until
    the last coefficients fall below ``1e-13`` of the largest; otherwise the
    order is pinned. The result is renormalised to unit mass; the factor is
    kept in ``renorm`` and must be within ``1e-8`` of 1.
    """
    K = _check_K(K)
    if order is not None:
        c = _push(rho.coeffs, K, int(order))
    else:
        n = START_ORDER
        while True:
            c = _push(rho.coeffs, K, n)
            if _tail(c) <= TAIL_TOL:
                break
            n *= 2
            if n > max_order:
                raise TransferError(f"order exceeded cap {max_order} at K={K} (tail {_tail(c):.3g})")
    m = _mass(c)
    f = 1.0 / m
    if not abs(f - 1.0) <= RENORM_TOL:
        raise TransferError(f"mass {m!r} after transfer step is not 1 within {RENORM_TOL}")
    return DensityRep(c * f, f)


def invariant_density(K: float, order: Optional[int] = None,
                      max_order: int = MAX_ORDER) -> DensityRep:
    """Invariant density of the truncated transfer operator at fixed ``K``.

    Solves ``(I - L + e_0 w^T) c = e_0`` where ``w`` integrates a Chebyshev
    series, which forces ``L c = c`` and unit mass in one linear solve.
    """
    K = _check_K(K)
    n = START_ORDER if order is None else int(order)
    while True:
        A = -_transfer_matrix(K, n)
        A[np.diag_indices(n)] += 1.0
        A[0, :] += _mass_weights(n)
        rhs = np.zeros(n)
        rhs[0] = 1.0
        c = linalg.solve(A, rhs)
        if order is not None or _tail(c) <= TAIL_TOL:
            break
        n *= 2
        if n > max_order:
            raise TransferError(f"invariant density needs order > {max_order} at K={K}")
    return DensityRep(c / _mass(c))


def phi_invariant(K: float, order: Optional[int] = None) -> float:
    """Mean field of the invariant density at fixed ``K``."""
    return invariant_density(K, order).phi()


def _shape_of(eps: float, d: float) -> float:
    return math.tanh(eps * d + maps.K_BASE)


# --------------------------------------------------------------------------
# macroscopic dynamics


def macro_step(rho: DensityRep, eps: float, driver_override: Optional[float] = None,
               order: Optional[int] = None) -> tuple[DensityRep, float]:
    """One step of the closed (or driven) macroscopic recurrence.

    Returns the new density and its mean field.
    """
    d = rho.phi() if driver_override is None else float(driver_override)
    new = transfer_step(rho, _shape_of(eps, d), order)
    return new, new.phi()


def _iterate(eps, N, init, order, zeta_scaled, keep_every):
    rho = DensityRep.uniform() if init is None else init
    if order is not None:
        rho = DensityRep(_pad(rho.coeffs, order))
    phi = np.empty(N + 1)
    Ks = np.empty(N + 1)
    dens = []
    for n in range(N + 1):
        p = rho.phi()
        phi[n] = p
        d = p if zeta_scaled is None else p + zeta_scaled[n]
        Ks[n] = _shape_of(eps, d)
        if keep_every and n % keep_every == 0:
            dens.append(rho)
        if n < N:
            rho = transfer_step(rho, Ks[n], order)
    return MacroTrajectory(phi, Ks, float(eps), dens, rho)


def run_macro(eps: float, N: int, init: Optional[DensityRep] = None, order: Optional[int] = None,
              keep_every: int = 0) -> MacroTrajectory:
    """``N`` steps of ``rho_{n+1} = L_{K_n} rho_n``, ``K_n = tanh(eps Phi_n - 2)``.

    Starts from the uniform density unless ``init`` is given. ``order`` pins
    the truncation; ``keep_every`` stores every k-th density.
    """
    return _iterate(float(eps), int(N), init, order, None, keep_every)


def run_macro_noisy(eps: float, N: int, M_eff: float, noise: SurrogateNoiseModel, seed: int,
                    init: Optional[DensityRep] = None, order: Optional[int] = None,
                    antithetic: bool = False) -> MacroTrajectory:
    """Macroscopic recurrence driven by ``Phi_n + zeta_n / sqrt(M_eff)``.

    ``zeta`` is a Gaussian surrogate with the model's autocovariance. With
    ``antithetic`` the sign of ``zeta`` is flipped, which pairs naturally
    with a run on the same seed.
    """
    if not M_eff > 0:
        raise ConfigurationError(f"M_eff must be positive, got {M_eff}")
    if math.isinf(M_eff):
        return _iterate(float(eps), int(N), init, order, None, 0)
    z = synthesize_noise(noise, N + 1, seed) / math.sqrt(M_eff)
    if antithetic:
        z = -z
    return _iterate(float(eps), int(N), init, order, z, 0)


# --------------------------------------------------------------------------
# fixed points and their linearisation


def _fp_residual(eps: float, p: float, order: Optional[int]) -> float:
    return phi_invariant(_shape_of(eps, p), order) - p


def fixed_points(eps: float, order: Optional[int] = None, grid_step: float = 0.02,
                 tol: float = 1e-13) -> list[float]:
    """All roots of ``Phi_inv(tanh(eps Phi - 2)) = Phi`` found by a grid scan
    of the attainable range of ``Phi`` followed by Brent refinement."""
    lo, hi = PHI_RANGE
    if eps != 0.0:
        # keep |K| representably below 1
        a, b = sorted(((-18.0 - maps.K_BASE) / eps, (18.0 - maps.K_BASE) / eps))
        lo, hi = max(lo, a), min(hi, b)
    grid = np.linspace(lo, hi, int(math.ceil((hi - lo) / grid_step)) + 1)
    vals = np.array([_fp_residual(eps, p, order) for p in grid])
    roots = []
    for i in range(grid.size - 1):
        if vals[i] == 0.0:
            roots.append(float(grid[i]))
        elif vals[i] * vals[i + 1] < 0:
            roots.append(optimize.brentq(lambda p: _fp_residual(eps, p, order), grid[i], grid[i + 1],
                                         xtol=tol, rtol=4 * np.finfo(float).eps))
    return roots


def _local_root(eps, guess, order, tol):
    f = lambda p: _fp_residual(eps, p, order)
    f0 = f(guess)
    step = 1e-3
    a, b = guess, guess
    fa = fb = f0
    for _ in range(60):
        if fa * fb <= 0 and a != b:
            break
        a, b = max(PHI_RANGE[0], a - step), min(PHI_RANGE[1], b + step)
        fa, fb = f(a), f(b)
        step *= 1.6
    else:
        raise FixedPointError(f"no sign change bracketing a fixed point near {guess}", guess)
    if fa * fb > 0:
        raise FixedPointError(f"no sign change bracketing a fixed point near {guess}", guess)
    return optimize.brentq(f, a, b, xtol=tol, rtol=4 * np.finfo(float).eps)


def solve_fixed_point(eps: float, tol: float = 1e-13, phi_guess: Optional[float] = None,
                      order: Optional[int] = None, all_roots: Optional[bool] = None,
                      horizon: int = 400) -> FixedPointResult:
    """Fixed point of the macroscopic map with its stability.

    Without ``phi_guess`` every root is located and the smallest one is
    returned as the principal fixed point (the branch continued from
    ``eps = 0``); the rest are listed in ``others``. With a guess only the
    nearest root is refined unless ``all_roots`` is set.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    eps = float(eps)
    if all_roots is None:
        all_roots = phi_guess is None
    others: list[float] = []
    if all_roots:
        roots = fixed_points(eps, order, tol=tol)
        if not roots:
            raise FixedPointError(f"no fixed point found at eps={eps}")
        if phi_guess is None:
            p = roots[0]
        else:
            p = min(roots, key=lambda r: abs(r - phi_guess))
        others = [r for r in roots if r != p]
    else:
        p = _local_root(eps, float(phi_guess), order, tol)
    K = _shape_of(eps, p)
    rho = invariant_density(K, order)
    resid = abs(rho.phi() - p)
    chi = susceptibility(eps, p, horizon=horizon, density=rho)
    rad = _spectral_radius(eps, rho)
    stable = chi.decaying and chi.zeros_in_disk() == 0
    return FixedPointResult(eps, float(p), rho, float(resid), bool(stable), chi.r_of_one, K,
                            rad, tuple(others))


def _shape_gain(eps: float, phi_bar: float) -> float:
    K = _shape_of(eps, phi_bar)
    return eps * (1.0 - K * K)


def _K_derivative(rho: DensityRep, K: float, n: int, h: float = 1e-7) -> np.ndarray:
    """``d/dK (L_K rho)`` by central differences at pinned order ``n``."""
    c = _pad(rho.coeffs, n)
    return (_push(c, K + h, n) - _push(c, K - h, n)) / (2 * h)


def _spectral_radius(eps: float, rho: DensityRep) -> float:
    """Spectral radius of the linearised macroscopic map on mass-zero perturbations."""
    n = rho.order
    K = _shape_of(eps, rho.phi())
    J = _transfer_matrix(K, n) + np.outer(_K_derivative(rho, K, n) * _shape_gain(eps, rho.phi()),
                                          _phi_weights(n))
    P = np.eye(n) - np.outer(np.eye(n)[0], _mass_weights(n)) / 2.0
    return float(np.max(np.abs(linalg.eigvals(P @ J))))


def impulse_response(eps: float, phi_bar: float, theta: float = 1e-6, horizon: int = 200,
                     density: Optional[DensityRep] = None, central: bool = True) -> np.ndarray:
    """Response of ``Phi_k``, ``k = 1..horizon``, to a one-step driver kick.

    The system starts in the invariant density at ``phi_bar`` and is driven
    by ``phi_bar`` except at step 0, where the driver is ``phi_bar + theta``
    (and ``phi_bar - theta`` for the central difference). Returns the
    deviation divided by ``theta`` (``2 theta`` when central).
    """
    rho = invariant_density(_shape_of(eps, phi_bar)) if density is None else density
    n = rho.order
    c = rho.coeffs
    up = _push(c, _shape_of(eps, phi_bar + theta), n)
    if central:
        d = (up - _push(c, _shape_of(eps, phi_bar - theta), n)) / (2 * theta)
    else:
        d = (up - _push(c, _shape_of(eps, phi_bar), n)) / theta
    L = _transfer_matrix(_shape_of(eps, phi_bar), n)
    w = _phi_weights(n)
    out = np.empty(horizon)
    d = _drop_mass(d)
    for k in range(horizon):
        out[k] = w @ d
        d = _drop_mass(L @ d)
    return out


def susceptibility(eps: float, phi_bar: float, horizon: int = 200, theta: float = 1e-6,
                   density: Optional[DensityRep] = None) -> SusceptibilitySeries:
    """Impulse-response coefficients ``chi_k`` and ``R(1) = sum chi_k``.

    The truncation remainder is bounded from a geometric fit to the tail;
    a tail that does not decay is flagged rather than raised.
    """
    chi = impulse_response(eps, phi_bar, theta, horizon, density, central=True)
    a = np.abs(chi)
    top = a.max() if a.size else 0.0
    if top == 0.0:
        return SusceptibilitySeries(chi, 0.0, 0.0, True)
    k = np.arange(1, horizon + 1)
    use = (a > 1e-13 * top) & (k > horizon // 3)
    if use.sum() >= 3:
        slope = np.polyfit(k[use], np.log(a[use]), 1)[0]
        r = math.exp(slope)
        decaying = r < 1.0
        last = a[use][-1]
        remainder = last * r / (1.0 - r) if decaying else math.inf
    else:
        # the response is below the noise floor well before the horizon
        decaying = True
        remainder = 1e-13 * top
    return SusceptibilitySeries(chi, float(chi.sum()), float(remainder), bool(decaying))


def fixed_point_response(eps: float, fp: Optional[FixedPointResult] = None,
                         h: float = 1e-6) -> dict:
    """``dPhi_bar/deps = (dF/deps) / (1 - R(1))`` at the principal fixed point.

    ``dF/deps`` is the derivative of ``Phi_inv(tanh(eps Phi - 2))`` in
    ``eps`` at fixed ``Phi = Phi_bar``, taken by central differences in
    ``K`` at the order of the fixed-point density.
    """
    fp = solve_fixed_point(eps) if fp is None else fp
    n = fp.density.order
    K = fp.K
    dphi_dK = (phi_invariant(K + h, n) - phi_invariant(K - h, n)) / (2 * h)
    dF = dphi_dK * fp.phi_bar * (1.0 - K * K)
    return {"dphi_deps": dF / (1.0 - fp.r_at_1), "dF_deps": dF, "r_at_1": fp.r_at_1,
            "static_gain": dphi_dK * _shape_gain(eps, fp.phi_bar)}


def stability_boundary(eps_lo: float, eps_hi: float, tol: float = 1e-4) -> float:
    """First ``eps`` in ``[eps_lo, eps_hi]`` where the principal fixed point
    loses stability, by bisection with warm-started root refinement."""
    lo = solve_fixed_point(eps_lo)
    hi = solve_fixed_point(eps_hi, phi_guess=lo.phi_bar, all_roots=False)
    if not lo.stable or hi.stable:
        raise ValueError(f"stability does not change on [{eps_lo}, {eps_hi}]")
    a, b, guess = eps_lo, eps_hi, lo.phi_bar
    while b - a > tol:
        m = 0.5 * (a + b)
        r = solve_fixed_point(m, phi_guess=guess, all_roots=False)
        if r.stable:
            a, guess = m, r.phi_bar
        else:
            b = m
    return 0.5 * (a + b)


# --------------------------------------------------------------------------
# Lyapunov exponents and bifurcation scans


def lyapunov_spectrum(eps: float, n_exp: int = 3, N: int = 2000, burn_in: int = 200,
                      order: Optional[int] = 192, reorth: int = 5, h: float = 1e-7,
                      seed: int = 0, init: Optional[DensityRep] = None) -> np.ndarray:
    """Leading Lyapunov exponents of the truncated macroscopic map.

    The tangent map is ``v -> L_K v + (d/dK L_K rho) * eps (1 - K^2) * <phi, v>``;
    the linear part is applied exactly and the ``K``-derivative by central
    differences with step ``h``. Tangent vectors are kept in the mass-zero
    subspace (mass is conserved, so its direction only adds a spurious zero
    exponent) and re-orthonormalised by QR every ``reorth`` steps.
    """
    if order is None:
        raise ConfigurationError("tangent dynamics need a pinned truncation order")
    if not 1 <= n_exp <= 8:
        raise ConfigurationError(f"n_exp must be in 1..8, got {n_exp}")
    n = int(order)
    mass_w = _mass_weights(n)
    phi_w = _phi_weights(n)
    rho = DensityRep.uniform() if init is None else init
    c = _pad(rho.coeffs, n)

    def project(Z):
        Z[0] -= mass_w @ Z / mass_w[0]
        return Z

    Q0 = rng.normals(seed, rng.SUBSAMPLE, n * n_exp).reshape(n, n_exp)
    Q, _ = np.linalg.qr(project(Q0))
    logs = np.zeros(n_exp)
    for i in range(burn_in + N):
        p = c @ phi_w
        K = _shape_of(eps, p)
        A = _transfer_matrix(K, n)
        w = (_push(c, K + h, n) - _push(c, K - h, n)) / (2 * h) * _shape_gain(eps, p)
        Q = project(A @ Q + np.outer(w, phi_w @ Q))
        c = A @ c
        c /= c @ mass_w
        done = i + 1
        if done % reorth == 0 or done == burn_in or done == burn_in + N:
            Q, R = np.linalg.qr(Q)
            if done > burn_in:
                logs += np.log(np.abs(np.diag(R)))
    return logs / N


def bifurcation_scan(eps_lo: float, eps_hi: float, n_eps: int, N: int, burn_in: int,
                     init: Optional[DensityRep] = None, order: Optional[int] = None) -> BifurcationTable:
    """Attractor samples of ``Phi`` on an ``eps`` grid, with continuation.

    Each ``eps`` runs ``N`` steps and keeps the last ``N - burn_in``; the
    final density seeds the next ``eps``.
    """
    if not N > burn_in >= 0:
        raise ConfigurationError(f"need N > burn_in >= 0, got N={N}, burn_in={burn_in}")
    eps = np.linspace(eps_lo, eps_hi, n_eps)
    samples = []
    rho = init
    for e in eps:
        tr = run_macro(float(e), N, rho, order)
        samples.append(tr.phi[-(N - burn_in):])
        rho = tr.final
    return BifurcationTable(eps, samples)


def phi_autocovariance(K: float, max_lag: int, density: Optional[DensityRep] = None,
                       order: Optional[int] = None) -> AutocovarianceEstimate:
    """Autocovariance of ``phi(q_n)`` for one unit in the invariant density at
    fixed ``K``: ``C(m) = int phi L^m((phi - Phi) rho)``."""
    rho = invariant_density(K, order) if density is None else density
    n = rho.order + _PHI_CHEB.size
    centred = C.chebmul(_PHI_CHEB - np.eye(_PHI_CHEB.size)[0] * rho.phi(), rho.coeffs)
    d = _pad(centred, n)
    L = _transfer_matrix(K, n)
    w = _phi_weights(n)
    out = np.empty(max_lag + 1)
    d = _drop_mass(d)
    for m in range(max_lag + 1):
        out[m] = w @ d
        d = _drop_mass(L @ d)
    return AutocovarianceEstimate(np.arange(max_lag + 1), out, 0)
