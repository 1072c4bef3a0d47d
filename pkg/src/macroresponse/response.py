"""Response curves in the perturbation ``eps`` and the smooth-response test.

A response curve is a set of Birkhoff means sampled at the Chebyshev roots of
an interval, so that Chebyshev coefficients follow from a discrete cosine
transform. ``lrt_test`` asks whether the curve is consistent, within its error
bars, with a low-order basis; a rough response fails it once the error bars
are small enough.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy import fft as sfft
from scipy import special

from . import rng
from .ensemble import Experiment
from .stats import anova_decompose

__all__ = [
    "ResponseCurve",
    "ChebyshevSeries",
    "DecayFit",
    "Basis",
    "LrtTestResult",
    "chebyshev_grid",
    "sweep",
    "cheb_fit",
    "coefficient_stderr",
    "decay_rate",
    "usable_range",
    "lrt_test",
    "bias_check",
    "chi2_sf",
]


def chebyshev_grid(lo: float, hi: float, J: int) -> np.ndarray:
    """The ``J`` roots of ``T_J`` mapped affinely onto ``[lo, hi]``, ascending."""
    if J < 1:
        raise ValueError("J must be positive")
    x = np.cos(np.pi * (np.arange(J) + 0.5) / J)[::-1]
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * x


@dataclass
class ResponseCurve:
    """Birkhoff means on a Chebyshev-roots grid of ``[lo, hi]``.

    ``sigma`` is the per-step Birkhoff standard deviation, so the standard
    error of ``mean[j]`` is ``sigma[j] / sqrt(n_steps)``.
    """

    eps: np.ndarray
    mean: np.ndarray
    sigma: np.ndarray
    n_steps: int
    lo: float
    hi: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.eps = np.asarray(self.eps, dtype=float)
        self.mean = np.asarray(self.mean, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if not (self.eps.shape == self.mean.shape == self.sigma.shape):
            raise ValueError("eps, mean and sigma must have equal length")
        if np.any(np.diff(self.eps) <= 0):
            raise ValueError("eps must be strictly increasing")
        if self.n_steps < 1:
            raise ValueError("n_steps must be positive")

    @property
    def stderr(self) -> np.ndarray:
        return self.sigma / math.sqrt(self.n_steps)

    @property
    def J(self) -> int:
        return self.eps.size

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["eps", "mean", "sigma", "stderr", "n_steps", "lo", "hi"])
            for e, m, s, se in zip(self.eps, self.mean, self.sigma, self.stderr):
                w.writerow([repr(float(e)), repr(float(m)), repr(float(s)), repr(float(se)),
                            self.n_steps, repr(float(self.lo)), repr(float(self.hi))])

    @classmethod
    def from_csv(cls, path) -> "ResponseCurve":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: no rows")
        col = lambda k: np.array([float(r[k]) for r in rows])
        return cls(col("eps"), col("mean"), col("sigma"), int(rows[0]["n_steps"]),
                   float(rows[0]["lo"]), float(rows[0]["hi"]), {"source": str(path)})


@dataclass(frozen=True)
class ChebyshevSeries:
    lo: float
    hi: float
    coeffs: np.ndarray

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("degenerate interval")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("coefficients must be finite")

    def __call__(self, eps):
        x = (2 * np.asarray(eps, dtype=float) - (self.lo + self.hi)) / (self.hi - self.lo)
        return C.chebval(x, self.coeffs)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "coeff", "lo", "hi"])
            for k, c in enumerate(self.coeffs):
                w.writerow([k, repr(float(c)), repr(float(self.lo)), repr(float(self.hi))])

    @classmethod
    def from_csv(cls, path) -> "ChebyshevSeries":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls(float(rows[0]["lo"]), float(rows[0]["hi"]),
                   np.array([float(r["coeff"]) for r in rows]))


# --------------------------------------------------------------------------
# sweeps

Responder = Union[Experiment, Callable[[float, int], float]]


def sweep(responder: Responder, lo: float, hi: float, J: int, realizations: int = 10,
          seed: int = 0, n_steps: Optional[int] = None, sigma_method: str = "replications",
          progress: Optional[Callable[[int, int], None]] = None) -> ResponseCurve:
    """Birkhoff means of ``responder`` on the ``J``-point roots grid.

    ``responder`` is an :class:`Experiment` or a callable ``(eps, seed) ->
    mean``. Every grid point gets ``realizations`` independent runs, each with
    its own seed; the curve value is their average. ``sigma_method`` is
    ``"replications"`` (spread of the runs at each point) or ``"anova"``
    (within-point mean square pooled over the grid, which assumes the spread
    varies little along the interval).
    """
    if J < 4:
        raise ValueError("grid size must be >= 4")
    if realizations < 2:
        raise ValueError("need at least 2 realizations to estimate sigma")
    if isinstance(responder, Experiment):
        n_steps = responder.N if n_steps is None else n_steps
        fn = responder.birkhoff_mean
        meta = {"family": responder.family.value, "M": responder.M, "N": responder.N,
                "burn_in": responder.burn_in, "mode": responder.mode.value}
    else:
        fn = responder
        meta = {}
    n_steps = 1 if n_steps is None else int(n_steps)
    eps = chebyshev_grid(lo, hi, J)
    seeds = rng.random_bits(seed, rng.SUBSAMPLE, J * realizations) >> np.uint64(1)
    runs = np.empty((J, realizations))
    for j, e in enumerate(eps):
        for r in range(realizations):
            runs[j, r] = fn(float(e), int(seeds[j * realizations + r]))
        if progress is not None:
            progress(j + 1, J)
    mean = runs.mean(axis=1)
    if sigma_method == "replications":
        se = runs.std(axis=1, ddof=1) / math.sqrt(realizations)
    elif sigma_method == "anova":
        within, _ = anova_decompose(list(runs))
        se = np.full(J, math.sqrt(within / realizations))
    else:
        raise ValueError(f"unknown sigma_method {sigma_method!r}")
    sigma = se * math.sqrt(n_steps)
    if np.any(sigma <= 0):
        raise ValueError("a grid point has zero spread across realizations; sigma must be > 0")
    meta.update({"realizations": realizations, "seed": seed, "sigma_method": sigma_method})
    return ResponseCurve(eps, mean, sigma, n_steps, float(lo), float(hi), meta)


# --------------------------------------------------------------------------
# Chebyshev analysis


def _check_grid(curve: ResponseCurve) -> None:
    ref = chebyshev_grid(curve.lo, curve.hi, curve.J)
    if np.max(np.abs(ref - curve.eps)) > 1e-9 * max(1.0, curve.hi - curve.lo):
        raise ValueError("curve is not sampled on the Chebyshev roots grid of its interval")


def _dct_coeffs(values_ascending: np.ndarray) -> np.ndarray:
    v = np.asarray(values_ascending, dtype=float)[::-1]
    c = sfft.dct(v, type=2) / v.size
    c[0] *= 0.5
    return c


def cheb_fit(curve: ResponseCurve) -> ChebyshevSeries:
    """Chebyshev coefficients of the polynomial interpolating the curve."""
    _check_grid(curve)
    return ChebyshevSeries(curve.lo, curve.hi, _dct_coeffs(curve.mean))


def coefficient_stderr(curve: ResponseCurve) -> np.ndarray:
    """Standard error of each fitted coefficient from independent point errors."""
    _check_grid(curve)
    J = curve.J
    theta = np.pi * (np.arange(J) + 0.5) / J
    T = np.cos(np.outer(np.arange(J), theta))  # T_k at the descending roots
    w = np.full(J, 2.0 / J)
    w[0] = 1.0 / J
    se = curve.stderr[::-1]
    return w * np.sqrt((T ** 2) @ se ** 2)


@dataclass(frozen=True)
class DecayFit:
    slope: float
    intercept: float
    k_used: np.ndarray
    k_excluded: np.ndarray

    def __float__(self):
        return self.slope


def decay_rate(series: ChebyshevSeries, k_min: int = 1, k_max: Optional[int] = None,
               floor: Optional[np.ndarray] = None) -> DecayFit:
    """Least-squares slope of ``log|c_k|`` against ``log k`` on ``[k_min, k_max]``.

    Coefficients below ``1e-12`` times the largest one are excluded, as are
    those below ``floor[k]`` when a per-coefficient noise floor is given.
    """
    c = np.abs(np.asarray(series.coeffs, dtype=float))
    k_max = c.size - 1 if k_max is None else int(k_max)
    if k_min < 1 or k_max >= c.size or k_max < k_min:
        raise ValueError(f"need 1 <= k_min <= k_max < {c.size}")
    k = np.arange(k_min, k_max + 1)
    keep = c[k] > 1e-12 * c.max()
    if floor is not None:
        keep &= c[k] > np.asarray(floor)[k]
    if keep.sum() < 5:
        raise ValueError(f"only {int(keep.sum())} usable coefficients; need 5")
    slope, intercept = np.polyfit(np.log(k[keep]), np.log(c[k][keep]), 1)
    return DecayFit(float(slope), float(intercept), k[keep], k[~keep])


def usable_range(series: ChebyshevSeries, stderr: np.ndarray, factor: float = 3.0,
                 run: int = 3) -> tuple[int, int]:
    """The tail of the coefficients that is resolved above sampling noise.

    Starts at the largest ``|c_k|`` with ``k >= 1`` (before it the curve's
    bulk shape dominates) and ends before the first ``run`` consecutive
    coefficients below ``factor`` standard errors.
    """
    c = np.abs(np.asarray(series.coeffs, dtype=float))
    above = c > factor * np.asarray(stderr)
    k_min = 1 + int(np.argmax(c[1:]))
    k = k_min
    while k + run <= c.size - 1 and above[k + 1: k + 1 + run].any():
        k += 1
    return k_min, k


# --------------------------------------------------------------------------
# the smooth-response test


@dataclass(frozen=True)
class Basis:
    """``kind`` is ``"chebyshev"`` (``T_0 .. T_{I-1}`` on the curve interval)
    or ``"taylor"`` (powers ``0 .. I-1`` of the centred, scaled ``eps``)."""

    kind: str
    size: int

    def __post_init__(self):
        if self.kind not in ("chebyshev", "taylor"):
            raise ValueError(f"unknown basis {self.kind!r}")
        if self.size < 1:
            raise ValueError("basis size must be positive")

    @classmethod
    def parse(cls, text: str) -> "Basis":
        kind, _, size = text.strip().lower().partition(":")
        return cls(kind, int(size))

    def __str__(self):
        return f"{self.kind}:{self.size}"

    def matrix(self, eps, lo: float, hi: float) -> np.ndarray:
        x = (2 * np.asarray(eps, dtype=float) - (lo + hi)) / (hi - lo)
        if self.kind == "chebyshev":
            return C.chebvander(x, self.size - 1)
        return np.vander(x, self.size, increasing=True)


@dataclass(frozen=True)
class LrtTestResult:
    chi2: float
    dof: int
    p_value: float
    basis_size: int
    basis: str
    bias_check: float

    def to_json(self) -> str:
        return json.dumps({"chi2": self.chi2, "dof": self.dof, "p_value": self.p_value,
                           "basis": self.basis, "bias_check": self.bias_check},
                          indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LrtTestResult":
        d = json.loads(text)
        return cls(d["chi2"], d["dof"], d["p_value"], Basis.parse(d["basis"]).size, d["basis"],
                   d["bias_check"])


def chi2_sf(x: float, dof: int) -> float:
    """``P(chi2_dof >= x)`` as the regularised upper incomplete gamma function."""
    if x <= 0:
        return 1.0
    return float(special.gammaincc(0.5 * dof, 0.5 * x))


def _as_basis(basis) -> Basis:
    if isinstance(basis, Basis):
        return basis
    if isinstance(basis, str):
        return Basis.parse(basis)
    kind, size = basis
    return Basis(kind, int(size))


def _residual_norm2(curve: ResponseCurve, basis: Basis, values: np.ndarray) -> tuple[float, int]:
    J, I = curve.J, basis.size
    if J <= I:
        raise ValueError(f"need more grid points than basis functions (J={J}, I={I})")
    se = curve.stderr
    X = basis.matrix(curve.eps, curve.lo, curve.hi) / se[:, None]
    y = values / se
    Q, R = np.linalg.qr(X)
    d = np.abs(np.diag(R))
    if d.min() <= 1e-12 * d.max():
        raise ValueError(f"design matrix is rank deficient for basis {basis}")
    r = y - Q @ (Q.T @ y)
    s = float(r @ r)
    # below this the statistic is rounding noise from the projection itself
    if s <= (64 * np.finfo(float).eps) ** 2 * J * float(y @ y):
        s = 0.0
    return s, J - I


def lrt_test(curve: ResponseCurve, basis="chebyshev:30") -> LrtTestResult:
    """Chi-square test of the curve against the span of ``basis``.

    With ``y_j = mean_j / stderr_j`` and ``X_ji = phi_i(eps_j) / stderr_j``
    the statistic is ``|(I - H) y|^2``, ``H`` the least-squares projection
    onto the columns of ``X``, referred to ``chi2`` with ``J - I`` degrees of
    freedom.
    """
    b = _as_basis(basis)
    chi2, dof = _residual_norm2(curve, b, curve.mean)
    return LrtTestResult(chi2, dof, chi2_sf(chi2, dof), b.size, str(b), chi2)


def bias_check(curve: ResponseCurve, basis="chebyshev:30",
               expected: Optional[np.ndarray] = None) -> float:
    """``N |(I - H)(E Psi / sigma)|^2``, the non-centrality of the statistic.

    ``expected`` defaults to the curve means, in which case the value also
    carries the noise contribution (about ``J - I``) and equals the
    statistic itself; pass a smooth model of the means to separate the two.
    """
    b = _as_basis(basis)
    vals = curve.mean if expected is None else np.asarray(expected, dtype=float)
    return _residual_norm2(curve, b, vals)[0]
