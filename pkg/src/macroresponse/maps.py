"""Microscopic map kernels and parameter distributions.

Three families of unit dynamics are provided:

* the modified logistic map, a logistic step gated by a doubling-map cocycle,
  with the perturbation ``g``, the mean-field coupling ``h`` and coupling
  observable ``phi_logistic``;
* a uniformly expanding full-branch map on [-1, 1] whose shape parameter ``K``
  is set by the mean field, with the even coupling observable ``phi_expanding``;
* a unimodal-type map of the 2-torus.

The scalar kernels are compiled with numba so the ensemble integrators can
inline exactly the same arithmetic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numba
import numpy as np

from . import rng

__all__ = [
    "StepFault",
    "ConfigurationError",
    "LogisticUnitState",
    "ExpandingUnitState",
    "TorusUnitState",
    "RaisedCosine",
    "DiscreteAtoms",
    "ParameterDistribution",
    "RAISED_COSINE_LOGISTIC",
    "RAISED_COSINE_TORUS",
    "THREE_ATOMS",
    "perturbation_g",
    "coupling_h",
    "phi_logistic",
    "phi_expanding",
    "step_logistic",
    "step_expanding",
    "step_torus",
    "sample_parameters",
]

K_BASE = -2.0  # K = tanh(eps * Phi + K_BASE)
STEP_TOL = 1e-12


class StepFault(RuntimeError):
    """A map step left the domain of its unit state."""

    def __init__(self, message: str, value: float = math.nan, unit: int | None = None):
        super().__init__(message)
        self.value = value
        self.unit = unit


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class LogisticUnitState:
    q: float
    r: float


@dataclass(frozen=True)
class ExpandingUnitState:
    q: float


@dataclass(frozen=True)
class TorusUnitState:
    x: float
    y: float


@dataclass(frozen=True)
class RaisedCosine:
    """Density ``(1 + cos(pi (a - center) / halfwidth)) / (2 halfwidth)`` on
    ``[center - halfwidth, center + halfwidth]``."""

    center: float
    halfwidth: float

    def __post_init__(self):
        if not self.halfwidth > 0:
            raise ConfigurationError(f"raised cosine halfwidth must be positive, got {self.halfwidth}")

    @property
    def support(self) -> tuple[float, float]:
        return self.center - self.halfwidth, self.center + self.halfwidth

    def pdf(self, a):
        z = (np.asarray(a, dtype=float) - self.center) / self.halfwidth
        inside = np.abs(z) <= 1
        return np.where(inside, (1 + np.cos(np.pi * z)) / (2 * self.halfwidth), 0.0)

    def cdf(self, a):
        z = np.clip((np.asarray(a, dtype=float) - self.center) / self.halfwidth, -1.0, 1.0)
        return z / 2 + np.sin(np.pi * z) / (2 * np.pi) + 0.5

    def ppf(self, u, tol: float = 1e-12):
        """Inverse CDF by vectorised bisection to an absolute tolerance ``tol``."""
        u = np.asarray(u, dtype=float)
        lo = np.full(u.shape, self.center - self.halfwidth)
        hi = np.full(u.shape, self.center + self.halfwidth)
        n_iter = int(math.ceil(math.log2(2 * self.halfwidth / tol))) + 1
        for _ in range(n_iter):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)


@dataclass(frozen=True)
class DiscreteAtoms:
    atoms: tuple[tuple[float, float], ...]  # (location, weight)

    def __post_init__(self):
        if len(self.atoms) == 0:
            raise ConfigurationError("discrete distribution needs at least one atom")
        w = np.array([wt for _, wt in self.atoms], dtype=float)
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise ConfigurationError("atom weights must be positive")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ConfigurationError(f"atom weights must sum to 1, got {w.sum()!r}")

    @classmethod
    def uniform(cls, locations: Sequence[float]) -> "DiscreteAtoms":
        n = len(locations)
        return cls(tuple((float(a), 1.0 / n) for a in locations))

    @property
    def locations(self) -> np.ndarray:
        return np.array([a for a, _ in self.atoms], dtype=float)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms], dtype=float)


ParameterDistribution = Union[RaisedCosine, DiscreteAtoms]

RAISED_COSINE_LOGISTIC = RaisedCosine(3.75, 0.05)
# Written support [3.7, 4.3]; see README for the normalisation note.
RAISED_COSINE_TORUS = RaisedCosine(4.0, 0.3)
THREE_ATOMS = DiscreteAtoms.uniform([3.72, 3.75, 3.78])


def sample_parameters(dist: ParameterDistribution, M: int, seed: int) -> np.ndarray:
    """Draw ``M`` i.i.d. parameters; draw ``j`` depends only on ``(seed, j)``."""
    if M < 1:
        raise ConfigurationError(f"M must be >= 1, got {M}")
    u = rng.uniforms(seed, rng.PARAMETERS, M)
    if isinstance(dist, RaisedCosine):
        return dist.ppf(u)
    if isinstance(dist, DiscreteAtoms):
        cw = np.cumsum(dist.weights)
        cw[-1] = 1.0
        idx = np.searchsorted(cw, u, side="right")
        return dist.locations[np.minimum(idx, len(cw) - 1)]
    raise ConfigurationError(f"unknown parameter distribution {dist!r}")


# --------------------------------------------------------------------------
# compiled scalar kernels


@numba.njit(cache=True)
def perturbation_g(q):
    u = q * (1.0 - q)
    return 4.0 * u * u


@numba.njit(cache=True)
def coupling_h(q, phi_mean):
    return (1.0 - 2.0 * q) * q * (1.0 - q) * math.tanh(phi_mean)


@numba.njit(cache=True)
def phi_logistic(q):
    x = 2.0 * q - 1.0
    x2 = x * x
    return 4.0 * (x * (5.0 + x2 * (-20.0 + 16.0 * x2))) + 1.0


@numba.njit(cache=True)
def phi_expanding(q):
    q2 = q * q
    return -23.0 / 30.0 + q2 * (3.5 - 2.0 * q2)


@numba.njit(cache=True)
def logistic_active(q, a, tanh_phi, eps):
    """The q-update on the active branch; ``tanh_phi`` is tanh of the mean field."""
    u = q * (1.0 - q)
    return a * u + (1.0 - 2.0 * q) * u * tanh_phi + eps * 4.0 * u * u


@numba.njit(cache=True)
def doubling(q):
    if q > 0.0:
        return 2.0 * q - 1.0
    if q < 0.0:
        return 2.0 * q + 1.0
    return 0.0


@numba.njit(cache=True)
def expanding_shape(t, K):
    """The diffeomorphism of [-1, 1] applied after the doubling map."""
    c = 1.0 - 0.97 * K * K
    s = t + K
    return (t + K * (1.0 - math.sqrt(0.03 * c + 0.97 * s * s))) / c


@numba.njit(cache=True)
def expanding_map(q, K):
    return expanding_shape(doubling(q), K)


@numba.njit(cache=True)
def wrap_unit(x):
    y = x - math.floor(x)
    if y >= 1.0:
        y = 0.0
    return y


@numba.njit(cache=True)
def torus_map(x, y, a, eps):
    xn = wrap_unit(x + a * y * math.sin(math.pi * x))
    yn = wrap_unit(y + a * math.sin(math.pi * (x + y)) + eps)
    return xn, yn


# --------------------------------------------------------------------------
# checked single-unit steps


def step_logistic(state: LogisticUnitState, a: float, phi_mean: float, eps: float,
                  coupled: bool = True) -> LogisticUnitState:
    """One step of the cocycle-gated logistic map.

    With ``r < 1/2`` only the cocycle moves; otherwise ``q`` takes a logistic
    step with perturbation ``eps * g(q)`` and, if ``coupled``, the mean-field
    term ``h(q, phi_mean)``.
    """
    q, r = float(state.q), float(state.r)
    if r < 0.5:
        return LogisticUnitState(q, 2.0 * r)
    tanh_phi = math.tanh(phi_mean) if coupled else 0.0
    qn = logistic_active(q, a, tanh_phi, eps)
    if not (0.0 <= qn <= 1.0):
        raise StepFault(f"logistic step left [0, 1]: q={qn!r} (a={a}, eps={eps}, phi={phi_mean})", qn)
    return LogisticUnitState(qn, 2.0 * r - 1.0)


def step_expanding(q: float, K: float) -> float:
    if not abs(K) < 1:
        raise ConfigurationError(f"|K| must be < 1, got {K}")
    qn = expanding_map(float(q), float(K))
    if abs(qn) > 1.0 + STEP_TOL or not math.isfinite(qn):
        raise StepFault(f"expanding step left [-1, 1]: q={qn!r} (K={K})", qn)
    return min(1.0, max(-1.0, qn))


def step_torus(state: TorusUnitState, a: float, eps: float) -> TorusUnitState:
    x, y = torus_map(float(state.x), float(state.y), float(a), float(eps))
    return TorusUnitState(x, y)


def shape_parameter(eps, phi_mean):
    """``K = tanh(eps * Phi - 2)`` for the expanding family."""
    return np.tanh(eps * phi_mean + K_BASE)
