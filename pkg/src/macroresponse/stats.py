"""Statistical reductions of ensemble output.

Birkhoff means with batch-means error bars, autocovariances, one-way ANOVA,
the across-parameter covariance of Birkhoff means, Gaussian surrogates for the
finite-ensemble fluctuation of the mean field, and the noisy single logistic
map scan.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numba
import numpy as np
from scipy import fft as sfft
from scipy import ndimage, optimize

from . import rng
from .ensemble import DriverSignal, Experiment, Mode, ScenarioConfig, run
from .maps import ConfigurationError

__all__ = [
    "AutocovarianceEstimate",
    "SurrogateNoiseModel",
    "ScanTable",
    "birkhoff_mean",
    "autocovariance",
    "unit_autocovariance",
    "anova_decompose",
    "anova_sums",
    "eta_covariance",
    "synthesize_noise",
    "surrogate_driver",
    "mean_field_noise_model",
    "MeanFieldRoot",
    "driven_averages",
    "mean_field_fixed_points",
    "noisy_logistic_scan",
    "count_outliers",
]


@dataclass(frozen=True)
class AutocovarianceEstimate:
    lags: np.ndarray
    values: np.ndarray
    n_samples: int

    @property
    def max_lag(self) -> int:
        return int(self.lags[-1])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["lag", "acv"])
            for m, c in zip(self.lags, self.values):
                w.writerow([int(m), repr(float(c))])


@dataclass(frozen=True)
class SurrogateNoiseModel:
    """Gaussian model of the fluctuation ``zeta_n`` of a finite-M mean field.

    ``acv`` is the autocovariance of ``zeta`` (unit scale). ``scale`` is the
    factor applied to ``zeta`` when no ensemble size is given, normally
    ``1/sqrt(M)``. ``eta_cov`` optionally carries the across-parameter
    covariance of Birkhoff means.
    """

    acv: AutocovarianceEstimate
    eta_cov: Optional[np.ndarray] = None
    scale: float = 1.0

    @classmethod
    def white(cls, variance: float = 1.0, scale: float = 1.0) -> "SurrogateNoiseModel":
        return cls(AutocovarianceEstimate(np.arange(1), np.array([float(variance)]), 0), None, scale)


# --------------------------------------------------------------------------
# means and covariances


def birkhoff_mean(series, burn_in: int = 0) -> tuple[float, float]:
    """Mean after ``burn_in`` and its batch-means standard error.

    The remaining ``n`` samples are cut into ``floor(sqrt(n))`` batches of
    equal length; a ragged tail is dropped from the error estimate only.
    """
    x = np.asarray(series, dtype=float)[burn_in:]
    n = x.size
    nb = int(math.isqrt(n)) if n > 0 else 0
    if nb < 2:
        raise ValueError(f"need at least 4 samples after burn-in for batch means, got {n}")
    size = n // nb
    means = x[: nb * size].reshape(nb, size).mean(axis=1)
    return float(x.mean()), float(means.std(ddof=1) / math.sqrt(nb))


def _acv_fft(x: np.ndarray, max_lag: int) -> np.ndarray:
    n = x.shape[-1]
    nfft = sfft.next_fast_len(2 * n - 1, real=True)
    f = sfft.rfft(x, nfft, axis=-1)
    return sfft.irfft(f * f.conj(), nfft, axis=-1)[..., : max_lag + 1] / n


def autocovariance(series, max_lag: int) -> AutocovarianceEstimate:
    """Biased (``1/n``) autocovariance after removing the sample mean."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if not 0 <= max_lag < n:
        raise ValueError(f"max_lag must lie in [0, {n}), got {max_lag}")
    if n < 10 * max_lag:
        warnings.warn(f"autocovariance with n={n} < 10*max_lag={10 * max_lag} is poorly resolved",
                      stacklevel=2)
    c = _acv_fft(x - x.mean(), max_lag)
    if np.any(np.abs(c[1:]) > c[0] * (1 + 1e-9)):
        warnings.warn("autocovariance exceeds its lag-0 value", stacklevel=2)
    return AutocovarianceEstimate(np.arange(max_lag + 1), c, n)


def unit_autocovariance(tracked, max_lag: int) -> AutocovarianceEstimate:
    """Average over units of each unit's autocovariance of ``phi(q_n)``.

    ``tracked`` has one column per unit (as in ``TimeSeries.tracked``). Each
    unit is centred on its own time mean, so this estimates
    ``<cov[phi(q_n), phi(q_{n-m})]>`` in the stationary regime, which is the
    autocovariance of ``zeta`` for independent units.
    """
    x = np.asarray(tracked, dtype=float)
    if x.ndim != 2 or x.shape[1] == 0:
        raise ValueError("tracked must be a (steps, units) array")
    n = x.shape[0]
    if not 0 <= max_lag < n:
        raise ValueError(f"max_lag must lie in [0, {n}), got {max_lag}")
    xc = (x - x.mean(axis=0)).T
    c = _acv_fft(xc, max_lag).mean(axis=0)
    return AutocovarianceEstimate(np.arange(max_lag + 1), c, n * x.shape[1])


def _check_groups(groups) -> list[np.ndarray]:
    gs = [np.asarray(g, dtype=float).ravel() for g in groups]
    if len(gs) < 2 or any(g.size < 2 for g in gs):
        raise ValueError("ANOVA needs at least 2 groups of at least 2 samples")
    return gs


def anova_sums(groups) -> tuple[float, float, float]:
    """``(ss_within, ss_between, ss_total)`` of a one-way layout."""
    gs = _check_groups(groups)
    allv = np.concatenate(gs)
    grand = allv.mean()
    ss_w = float(sum(((g - g.mean()) ** 2).sum() for g in gs))
    ss_b = float(sum(g.size * (g.mean() - grand) ** 2 for g in gs))
    ss_t = float(((allv - grand) ** 2).sum())
    return ss_w, ss_b, ss_t


def anova_decompose(groups) -> tuple[float, float]:
    """One-way ANOVA mean squares ``(within, between)``."""
    gs = _check_groups(groups)
    ss_w, ss_b, _ = anova_sums(gs)
    n_tot = sum(g.size for g in gs)
    return ss_w / (n_tot - len(gs)), ss_b / (len(gs) - 1)


def eta_covariance(eps_values: Sequence[float], experiment: Experiment, n_redraws: int,
                   seed: int = 0) -> np.ndarray:
    """Across-parameter covariance of Birkhoff means, per unit.

    Redraw ``r`` builds one ensemble (fresh parameters and initial states
    from a seed derived from ``seed`` and ``r``) and evaluates its Birkhoff
    mean of ``Psi`` at every ``eps``; the sample covariance of those means
    over redraws is multiplied by ``experiment.M`` so that it refers to a
    single unit.
    """
    if n_redraws < 30:
        raise ValueError(f"n_redraws must be >= 30, got {n_redraws}")
    if experiment.param_seed is not None:
        raise ConfigurationError("eta_covariance needs parameters redrawn per realisation")
    eps = np.atleast_1d(np.asarray(eps_values, dtype=float))
    means = np.empty((n_redraws, eps.size))
    seeds = rng.random_bits(seed, rng.SUBSAMPLE, n_redraws)
    for r in range(n_redraws):
        for i, e in enumerate(eps):
            means[r, i] = experiment.birkhoff_mean(float(e), int(seeds[r] >> np.uint64(1)))
    cov = np.atleast_2d(np.cov(means, rowvar=False, ddof=1))
    return cov * experiment.M


# --------------------------------------------------------------------------
# Gaussian surrogates


def _parzen(u):
    u = np.abs(u)
    return np.where(u <= 0.5, 1 - 6 * u ** 2 + 6 * u ** 3, np.where(u <= 1, 2 * (1 - u) ** 3, 0.0))


def synthesize_noise(model: SurrogateNoiseModel, N: int, seed: int) -> np.ndarray:
    """A stationary Gaussian sequence whose autocovariance is ``model.acv``.

    The autocovariance is tapered with a Parzen window reaching zero one lag
    past ``max_lag`` and embedded in a circulant matrix of size at least
    ``2N``; negative eigenvalues are floored at zero.
    """
    c = np.asarray(model.acv.values, dtype=float)
    if N < 1:
        raise ValueError("N must be positive")
    if not np.all(np.isfinite(c)) or c[0] < 0:
        raise ValueError("autocovariance must be finite with C(0) >= 0")
    if c[0] == 0:
        return np.zeros(N)
    L = c.size - 1
    ct = c * _parzen(np.arange(L + 1) / (L + 1))
    P = sfft.next_fast_len(2 * max(N, L + 1), real=True)
    row = np.zeros(P)
    row[: L + 1] = ct
    row[P - L:] = ct[1:][::-1]
    lam = sfft.rfft(row).real
    neg = -lam[lam < 0].sum()
    if neg > 0.05 * lam[lam > 0].sum():
        raise ValueError(
            f"autocovariance not embeddable: negative spectral mass {neg:.3g} "
            f"vs positive {lam[lam > 0].sum():.3g} at embedding size {P}")
    lam = np.maximum(lam, 0.0)
    # real white noise filtered by the square-root spectrum
    z = rng.normals(seed, rng.NOISE, P)
    y = sfft.irfft(sfft.rfft(z) * np.sqrt(lam), P)
    return y[:N]


def mean_field_noise_model(phi_series, M: int, max_lag: int) -> SurrogateNoiseModel:
    """Noise model for an open-loop driver built from an observed mean field.

    ``zeta = sqrt(M) (Phi_n - mean)``, so the model autocovariance is ``M``
    times that of the series. In a coupled ensemble this already contains
    the feedback of the mean field on its own fluctuations; the per-unit
    covariance of :func:`unit_autocovariance` does not, and belongs with a
    closed-loop recursion instead.
    """
    acv = autocovariance(phi_series, max_lag)
    return SurrogateNoiseModel(AutocovarianceEstimate(acv.lags, acv.values * M, acv.n_samples),
                               None, 1.0 / math.sqrt(M))


def surrogate_driver(phi_bar: float, model: SurrogateNoiseModel, M: Optional[float], N: int,
                     seed: int) -> DriverSignal:
    """``d_n = phi_bar + zeta_n / sqrt(M)``; ``M=None`` uses ``model.scale``."""
    scale = model.scale if M is None else (0.0 if math.isinf(M) else 1.0 / math.sqrt(M))
    if scale == 0.0:
        return DriverSignal(np.full(N, float(phi_bar)))
    return DriverSignal(phi_bar + scale * synthesize_noise(model, N, seed))


@dataclass(frozen=True)
class MeanFieldRoot:
    """A self-consistent constant driver ``d = E^d[Phi]`` and the ``Psi`` it yields."""

    phi: float
    psi: float
    gain: float  # d E^d[Phi] / d d at the root, by secant over the bracket


def driven_averages(experiment: Experiment, eps: float, d: float, seed: int) -> tuple[float, float]:
    """Time averages of ``(Phi, Psi)`` for the ensemble held at constant driver ``d``."""
    state = experiment.build(seed)
    n_tot = experiment.N + experiment.burn_in
    cfg = ScenarioConfig(Mode.DRIVEN, eps, DriverSignal(np.full(n_tot, float(d))),
                         init_measure=experiment.init_measure)
    ts = run(state, cfg, experiment.N, experiment.burn_in, record_phi=True)
    return float(np.mean(ts.phi)), float(np.mean(ts.psi))


def mean_field_fixed_points(experiment: Experiment, eps: float, seed: int,
                            lo: float = -3.0, hi: float = 5.0, n_grid: int = 33,
                            xtol: float = 1e-4) -> list[MeanFieldRoot]:
    """Constant drivers consistent with the mean field they produce.

    ``G(d) = E^d[Phi] - d`` is evaluated on a grid over ``[lo, hi]`` with a
    common seed (so ``G`` is a smooth function of ``d`` up to Birkhoff noise)
    and every sign change is refined with Brent's method. The fixed points
    of the coupled dynamics are among these roots whether or not they are
    stable; an oscillating coupled run circles one of them.
    """
    def G(d):
        return driven_averages(experiment, eps, d, seed)[0] - d

    grid = np.linspace(lo, hi, n_grid)
    vals = np.array([G(d) for d in grid])
    roots = []
    for i in range(n_grid - 1):
        if not vals[i] * vals[i + 1] <= 0:
            continue
        a, b = grid[i], grid[i + 1]
        d = a if vals[i] == 0 else optimize.brentq(G, a, b, xtol=xtol)
        phi, psi = driven_averages(experiment, eps, d, seed)
        gain = 1.0 + (vals[i + 1] - vals[i]) / (b - a)
        roots.append(MeanFieldRoot(float(d), psi, float(gain)))
        if vals[i + 1] == 0:
            vals[i + 1] = np.nan  # do not report it twice
    return roots


# --------------------------------------------------------------------------
# noisy logistic scan


@dataclass
class ScanTable:
    a: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    sigma: float
    N: int

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["a", "mean_psi", "stderr"])
            for a, m, s in zip(self.a, self.mean, self.stderr):
                w.writerow([repr(float(a)), repr(float(m)), repr(float(s))])

    @classmethod
    def from_csv(cls, path, sigma: float = math.nan, N: int = 0) -> "ScanTable":
        d = np.genfromtxt(Path(path), delimiter=",", names=True)
        return cls(np.atleast_1d(d["a"]), np.atleast_1d(d["mean_psi"]),
                   np.atleast_1d(d["stderr"]), sigma, N)


MAX_REDRAWS = 100


@numba.njit(parallel=True, cache=True)
def _noisy_scan_kernel(a, sigma, N, burn_in, key_noise, key_init, mean, stderr):
    nb = int(math.sqrt(N))
    size = N // nb
    for i in numba.prange(a.size):
        ai = a[i]
        q = 0.05 + 0.9 * rng.uniform(key_init, i, 0)
        total = 0.0
        bsum = 0.0
        bss = 0.0
        acc = 0.0
        ok = True
        for n in range(burn_in + N):
            x = ai * q * (1.0 - q)
            if sigma > 0.0:
                base = np.uint64(n) * np.uint64(MAX_REDRAWS)
                k = 0
                y = x + sigma * rng.normal(key_noise, i, base)
                while not (0.0 <= y <= 1.0):
                    k += 1
                    if k == MAX_REDRAWS:
                        break
                    y = x + sigma * rng.normal(key_noise, i, base + np.uint64(k))
                if k == MAX_REDRAWS:
                    ok = False
                    break
                x = y
            elif not (0.0 <= x <= 1.0):
                ok = False
                break
            q = x
            if n >= burn_in:
                m = n - burn_in
                total += q
                if m < nb * size:
                    acc += q
                    if (m + 1) % size == 0:
                        bm = acc / size
                        bsum += bm
                        bss += bm * bm
                        acc = 0.0
        if ok:
            mean[i] = total / N
            bmean = bsum / nb
            var = (bss - nb * bmean * bmean) / (nb - 1)
            stderr[i] = math.sqrt(max(var, 0.0) / nb)
        else:
            mean[i] = np.nan
            stderr[i] = np.nan


def noisy_logistic_scan(a_lo: float, a_hi: float, da: float, sigma: float, N: int, seed: int,
                        burn_in: int = 1000) -> ScanTable:
    """Birkhoff means of ``q`` for ``q' = a q (1-q) + sigma xi`` over an ``a`` grid.

    A step that would leave [0, 1] is redrawn with fresh noise, up to 100
    attempts; an orbit that still escapes gets a NaN mean. The grid is
    ``a_lo + i*da`` up to ``a_hi`` inclusive (within ``da/2``).
    """
    if not da > 0:
        raise ValueError("da must be positive")
    if not sigma >= 0:
        raise ValueError("sigma must be nonnegative")
    if N < 4:
        raise ValueError("N must be at least 4")
    n_a = int(math.floor((a_hi - a_lo) / da + 0.5)) + 1
    a = a_lo + da * np.arange(n_a)
    mean = np.empty(n_a)
    se = np.empty(n_a)
    _noisy_scan_kernel(a, float(sigma), int(N), int(burn_in), rng.key_for(seed, rng.NOISE),
                       rng.key_for(seed, rng.INIT_STATE), mean, se)
    return ScanTable(a, mean, se, float(sigma), int(N))


def count_outliers(values, window: int = 21, threshold: float = 0.01) -> int:
    """Number of points farther than ``threshold`` from their running median.

    Missing values count as outliers.
    """
    v = np.asarray(values, dtype=float)
    filled = np.where(np.isfinite(v), v, np.nanmedian(v))
    med = ndimage.median_filter(filled, size=window, mode="nearest")
    return int(np.sum(~np.isfinite(v) | (np.abs(v - med) > threshold)))
