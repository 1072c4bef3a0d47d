"""Ensembles of microscopic units and their mean fields.

An :class:`EnsembleState` holds ``M`` unit states of one map family and
advances them under one of three scenarios:

``uncoupled``
    each unit follows its own map, no mean-field feedback;
``coupled``
    every unit sees the mean field ``Phi_n`` of the pre-step state;
``driven``
    every unit sees a prescribed driver ``d_n`` in place of ``Phi_n``.

The logistic cocycle coordinate ``r`` is stored as the 64 binary digits that
the doubling map will shift out next. A fresh word is loaded from a
counter-based stream every 64 steps, so the cocycle behaves like the doubling
map on an infinitely precise ``r`` and never collapses to 0 as a float would
after ~53 doublings.

Reductions over units use fixed blocks of ``BLOCK`` units summed in order, so
results do not depend on the number of worker threads.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numba
import numpy as np
from scipy import special

from . import maps, rng
from .maps import ConfigurationError, ParameterDistribution, StepFault

if "NUMBA_THREADING_LAYER" not in os.environ:
    # an outdated system TBB only costs a warning; OpenMP is tried first instead
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

__all__ = [
    "Family",
    "Mode",
    "InitMeasure",
    "DriverSignal",
    "ScenarioConfig",
    "EnsembleState",
    "TimeSeries",
    "Experiment",
    "init_ensemble",
    "mean_field",
    "observable_psi",
    "step",
    "run",
    "set_threads",
]

BLOCK = 1024
_TWO64 = 2.0 ** -64


class Family(str, Enum):
    LOGISTIC = "logistic"
    EXPANDING = "expanding"
    TORUS = "torus"


class Mode(str, Enum):
    UNCOUPLED = "uncoupled"
    COUPLED = "coupled"
    DRIVEN = "driven"


_MODE_CODE = {Mode.UNCOUPLED: 0, Mode.COUPLED: 1, Mode.DRIVEN: 2}


@dataclass(frozen=True)
class InitMeasure:
    """Law of the initial unit coordinates, rescaled to the family's domain.

    ``uniform`` or ``beta`` with shape parameters ``alpha`` and ``beta``.
    """

    kind: str = "uniform"
    alpha: float = 1.0
    beta: float = 1.0

    @classmethod
    def random_beta(cls, seed: int) -> "InitMeasure":
        """A Beta law with both shapes drawn uniformly from [0.5, 5]."""
        u = rng.uniforms(seed, rng.INIT_MEASURE, 2)
        return cls("beta", 0.5 + 4.5 * float(u[0]), 0.5 + 4.5 * float(u[1]))

    def sample_unit_interval(self, u: np.ndarray) -> np.ndarray:
        if self.kind == "uniform":
            return u
        if self.kind == "beta":
            return special.betaincinv(self.alpha, self.beta, u)
        raise ConfigurationError(f"unknown init measure {self.kind!r}")


@dataclass
class DriverSignal:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("driver values must be finite")

    def __len__(self):
        return self.values.size


@dataclass
class ScenarioConfig:
    mode: Mode = Mode.UNCOUPLED
    eps: float = 0.0
    driver: Optional[DriverSignal] = None
    init_measure: InitMeasure = field(default_factory=InitMeasure)

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.mode is Mode.DRIVEN and self.driver is None:
            raise ConfigurationError("driven mode needs a driver signal")
        if self.driver is not None and not isinstance(self.driver, DriverSignal):
            self.driver = DriverSignal(self.driver)


@dataclass
class EnsembleState:
    family: Family
    q: np.ndarray  # logistic/expanding coordinate, or torus x
    params: Optional[np.ndarray]
    seed: int
    y: Optional[np.ndarray] = None  # torus only
    bits: Optional[np.ndarray] = None  # logistic cocycle digits
    step_index: int = 0

    @property
    def M(self) -> int:
        return self.q.size

    @property
    def r(self) -> Optional[np.ndarray]:
        """Cocycle coordinate to 64-bit resolution."""
        if self.bits is None:
            return None
        return self.bits.astype(float) * _TWO64

    def copy(self) -> "EnsembleState":
        cp = lambda a: None if a is None else a.copy()
        return EnsembleState(self.family, self.q.copy(), cp(self.params), self.seed,
                             cp(self.y), cp(self.bits), self.step_index)


@dataclass
class TimeSeries:
    """Recorded mean fields: ``phi[n]`` is the pre-step mean field of step
    ``n``, ``psi[n]`` the observable after it."""

    psi: np.ndarray
    phi: np.ndarray
    burn_in: int
    meta: dict = field(default_factory=dict)
    tracked: Optional[np.ndarray] = None  # pre-step phi of tracked units, shape (n, k)

    def __post_init__(self):
        if self.psi.shape != self.phi.shape:
            raise ValueError("psi and phi must have equal length")

    def __len__(self):
        return self.psi.size

    def to_csv(self, path) -> None:
        """Write ``n, phi, psi`` rows plus a JSON sidecar ``<path>.json``."""
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "phi", "psi"])
            for n, (ph, ps) in enumerate(zip(self.phi, self.psi)):
                w.writerow([n + self.burn_in, repr(float(ph)), repr(float(ps))])
        with open(path.with_suffix(path.suffix + ".json"), "w", encoding="utf-8") as fh:
            json.dump({**self.meta, "burn_in": self.burn_in}, fh, indent=2, sort_keys=True)

    @classmethod
    def from_csv(cls, path) -> "TimeSeries":
        path = Path(path)
        data = np.genfromtxt(path, delimiter=",", names=True)
        meta_path = path.with_suffix(path.suffix + ".json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        burn_in = int(meta.pop("burn_in", 0))
        return cls(np.atleast_1d(data["psi"]), np.atleast_1d(data["phi"]), burn_in, meta)


# --------------------------------------------------------------------------
# initialisation and instantaneous observables


def init_ensemble(family, M: int, dist: ParameterDistribution | None, seed: int,
                  init_measure: InitMeasure | None = None) -> EnsembleState:
    """Draw ``M`` unit states i.i.d. from ``init_measure`` and, for the
    logistic and torus families, their parameters from ``dist``."""
    family = Family(family)
    if M < 1:
        raise ConfigurationError(f"M must be >= 1, got {M}")
    init_measure = init_measure or InitMeasure()
    u = init_measure.sample_unit_interval(rng.uniforms(seed, rng.INIT_STATE, M))
    if family is Family.EXPANDING:
        return EnsembleState(family, 2.0 * u - 1.0, None, seed)
    if dist is None:
        raise ConfigurationError(f"{family.value} ensembles need a parameter distribution")
    params = maps.sample_parameters(dist, M, seed)
    if family is Family.LOGISTIC:
        bits = rng.random_bits(seed, rng.COCYCLE_REFILL, M, counter=0)
        return EnsembleState(family, u.copy(), params, seed, bits=bits)
    v = init_measure.sample_unit_interval(rng.uniforms(seed, rng.INIT_STATE, M, counter=1))
    return EnsembleState(family, u.copy(), params, seed, y=v.copy())


@numba.njit(cache=True)
def _block_sum(q, j0, nj, family_code):
    # 8 fixed lanes, then the ragged tail; the integrators sum in the same order
    lanes = np.zeros(8)
    m8 = nj - nj % 8
    for j in range(0, m8, 8):
        for k in range(8):
            x = q[j0 + j + k]
            if family_code == 0:
                x = maps.phi_logistic(x)
            elif family_code == 1:
                x = maps.phi_expanding(x)
            lanes[k] += x
    s = 0.0
    for k in range(8):
        s += lanes[k]
    for j in range(m8, nj):
        x = q[j0 + j]
        if family_code == 0:
            x = maps.phi_logistic(x)
        elif family_code == 1:
            x = maps.phi_expanding(x)
        s += x
    return s


@numba.njit(cache=True)
def _blocked_mean_phi(q, family_code):
    M = q.size
    total = 0.0
    for b0 in range(0, M, BLOCK):
        total += _block_sum(q, b0, min(BLOCK, M - b0), family_code)
    return total / M


@numba.njit(cache=True)
def _blocked_mean(q):
    return _blocked_mean_phi(q, -1)


def mean_field(state: EnsembleState) -> Optional[float]:
    """``Phi = mean_j phi(q_j)``; ``None`` for the torus family."""
    if state.family is Family.TORUS:
        return None
    return float(_blocked_mean_phi(state.q, 0 if state.family is Family.LOGISTIC else 1))


def observable_psi(state: EnsembleState) -> float:
    """``Psi = mean_j q_j`` (torus: ``mean_j x_j``)."""
    return float(_blocked_mean(state.q))


# --------------------------------------------------------------------------
# integrators


def _logistic_kernel(q, bits, a, eps, mode, driver, step0, n_steps, n_skip, key,
                     need_phi, psi_out, phi_out, tr_unit, tr_slot, tr_ptr, track_out):
    # Units are independent between mean-field evaluations, so in the uncoupled
    # and driven modes a block advances through a chunk of up to 64 steps (one
    # cocycle word) before the next block starts. Within a block the loop is
    # step-major so the unit update vectorises; sums use 8 fixed lanes.
    M = q.size
    nb = (M + BLOCK - 1) // BLOCK
    part_psi = np.zeros((nb, 64))
    part_phi = np.zeros((nb, 64))
    bad = np.zeros(nb, dtype=np.int64)
    bad_t = np.zeros(nb, dtype=np.int64)
    th = np.zeros(64)
    phi_cur = np.nan
    if need_phi:
        phi_cur = _blocked_mean_phi(q, 0)
    one = np.uint64(1)
    n = 0
    while n < n_steps:
        s = step0 + n
        if mode == 1:
            L = 1
            th[0] = math.tanh(phi_cur)
        else:
            L = min(64 - s % 64, n_steps - n)
            for t in range(L):
                th[t] = math.tanh(driver[s + t]) if mode == 2 else 0.0
        refill = (s + L) % 64 == 0
        word = np.uint64((s + L) // 64)
        for ib in numba.prange(nb):
            j0 = ib * BLOCK
            nj = min(j0 + BLOCK, M) - j0
            xs = q[j0:j0 + nj]
            bs = bits[j0:j0 + nj]
            As = a[j0:j0 + nj]
            lanes = np.zeros(8)
            lanes_f = np.zeros(8)
            bad[ib] = -1
            for t in range(L):
                for k in range(tr_ptr[ib], tr_ptr[ib + 1]):
                    if n + t >= n_skip:
                        track_out[n + t - n_skip, tr_slot[k]] = maps.phi_logistic(q[tr_unit[k]])
                tht = th[t]
                sh = np.uint64(63 - t)
                for j in range(nj):
                    x = xs[j]
                    y = maps.logistic_active(x, As[j], tht, eps)
                    xs[j] = y if (bs[j] >> sh) & one else x
                lanes[:] = 0.0
                lo = 0.0
                hi = 1.0
                m8 = nj - nj % 8
                for j in range(0, m8, 8):
                    for k in range(8):
                        lanes[k] += xs[j + k]
                        lo = min(lo, xs[j + k])
                        hi = max(hi, xs[j + k])
                sp = 0.0
                for k in range(8):
                    sp += lanes[k]
                for j in range(m8, nj):
                    sp += xs[j]
                    lo = min(lo, xs[j])
                    hi = max(hi, xs[j])
                part_psi[ib, t] = sp
                if not (lo >= 0.0 and hi <= 1.0):
                    for j in range(nj):
                        if not (0.0 <= xs[j] <= 1.0):
                            bad[ib] = j0 + j
                            break
                    bad_t[ib] = t
                    break
                if need_phi:
                    lanes_f[:] = 0.0
                    for j in range(0, m8, 8):
                        for k in range(8):
                            lanes_f[k] += maps.phi_logistic(xs[j + k])
                    sf = 0.0
                    for k in range(8):
                        sf += lanes_f[k]
                    for j in range(m8, nj):
                        sf += maps.phi_logistic(xs[j])
                    part_phi[ib, t] = sf
            if bad[ib] >= 0:
                continue
            if refill:
                for j in range(nj):
                    bs[j] = rng.bits64(key, j0 + j, word)
            else:
                for j in range(nj):
                    bs[j] = bs[j] << np.uint64(L)
        first = -1
        for ib in range(nb):
            if bad[ib] >= 0 and (first < 0 or bad_t[ib] < bad_t[first]):
                first = ib
        if first >= 0:
            return 1, bad[first], q[bad[first]], n + bad_t[first]
        for t in range(L):
            tp = 0.0
            tf = 0.0
            for ib in range(nb):
                tp += part_psi[ib, t]
                tf += part_phi[ib, t]
            rec = n + t - n_skip
            if rec >= 0:
                phi_out[rec] = phi_cur
                psi_out[rec] = tp / M
            if need_phi:
                phi_cur = tf / M
        n += L
    return 0, -1, 0.0, n_steps


def _expanding_kernel(q, eps, mode, driver, step0, n_steps, n_skip, need_phi,
                      psi_out, phi_out, track, track_out):
    M = q.size
    nb = (M + BLOCK - 1) // BLOCK
    part_psi = np.zeros(nb)
    part_phi = np.zeros(nb)
    bad = np.zeros(nb, dtype=np.int64)
    phi_cur = 0.0
    if need_phi:
        phi_cur = _blocked_mean_phi(q, 1)
    for n in range(n_steps):
        s = step0 + n
        if mode == 1:
            K = math.tanh(eps * phi_cur + maps.K_BASE)
        elif mode == 2:
            K = math.tanh(eps * driver[s] + maps.K_BASE)
        else:
            K = math.tanh(maps.K_BASE)
        rec = n - n_skip
        if rec >= 0:
            phi_out[rec] = phi_cur
            for i in range(track.size):
                track_out[rec, i] = maps.phi_expanding(q[track[i]])
        for ib in numba.prange(nb):
            j0 = ib * BLOCK
            nj = min(j0 + BLOCK, M) - j0
            xs = q[j0:j0 + nj]
            bad[ib] = -1
            lo = -1.0
            hi = 1.0
            for j in range(nj):
                x = xs[j]
                t = 2.0 * x - (1.0 if x > 0.0 else 0.0) + (1.0 if x < 0.0 else 0.0)
                y = maps.expanding_shape(t, K)
                lo = min(lo, y)
                hi = max(hi, y)
                xs[j] = min(1.0, max(-1.0, y))
            if not (lo >= -1.0 - maps.STEP_TOL and hi <= 1.0 + maps.STEP_TOL):
                bad[ib] = j0
                for j in range(nj):
                    if abs(xs[j]) >= 1.0:
                        bad[ib] = j0 + j
                        break
            lanes = np.zeros(8)
            lanes_f = np.zeros(8)
            m8 = nj - nj % 8
            for j in range(0, m8, 8):
                for k in range(8):
                    lanes[k] += xs[j + k]
                    lanes_f[k] += maps.phi_expanding(xs[j + k])
            sp = 0.0
            sf = 0.0
            for k in range(8):
                sp += lanes[k]
                sf += lanes_f[k]
            for j in range(m8, nj):
                sp += xs[j]
                sf += maps.phi_expanding(xs[j])
            part_psi[ib] = sp
            part_phi[ib] = sf
        for ib in range(nb):
            if bad[ib] >= 0:
                return 1, bad[ib], q[bad[ib]], n
        tp = 0.0
        tf = 0.0
        for ib in range(nb):
            tp += part_psi[ib]
            tf += part_phi[ib]
        phi_cur = tf / M
        if rec >= 0:
            psi_out[rec] = tp / M
    return 0, -1, 0.0, n_steps


def _torus_kernel(x, y, a, eps, step0, n_steps, n_skip, psi_out):
    M = x.size
    nb = (M + BLOCK - 1) // BLOCK
    part = np.zeros(nb)
    for n in range(n_steps):
        for ib in numba.prange(nb):
            sp = 0.0
            for j in range(ib * BLOCK, min((ib + 1) * BLOCK, M)):
                xn, yn = maps.torus_map(x[j], y[j], a[j], eps)
                x[j] = xn
                y[j] = yn
                sp += xn
            part[ib] = sp
        rec = n - n_skip
        if rec >= 0:
            t = 0.0
            for ib in range(nb):
                t += part[ib]
            psi_out[rec] = t / M
    return 0, -1, 0.0, n_steps


_KERNELS = {}
for _name, _fn in [("logistic", _logistic_kernel), ("expanding", _expanding_kernel),
                   ("torus", _torus_kernel)]:
    _KERNELS[_name, False] = numba.njit(cache=True)(_fn)
    _KERNELS[_name, True] = numba.njit(cache=True, parallel=True)(_fn)

_threads = 1


def set_threads(n: int) -> int:
    """Set worker threads for ensemble steps; returns the count actually used.

    Results are identical for every thread count.
    """
    global _threads
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    if n > 1:
        numba.set_num_threads(n)
    _threads = n
    return n


def _advance(state: EnsembleState, config: ScenarioConfig, n_steps: int, n_skip: int,
             record_phi: bool = True, track: Optional[np.ndarray] = None):
    n_rec = max(n_steps - n_skip, 0)
    psi = np.full(n_rec, np.nan)
    phi = np.full(n_rec, np.nan)
    track = np.zeros(0, dtype=np.int64) if track is None else np.asarray(track, dtype=np.int64)
    track_out = np.zeros((n_rec if track.size else 0, track.size))
    mode = _MODE_CODE[config.mode]
    if config.driver is not None:
        driver = config.driver.values
        if config.mode is Mode.DRIVEN and driver.size < state.step_index + n_steps:
            raise ConfigurationError(
                f"driver has {driver.size} values, run needs {state.step_index + n_steps}")
    else:
        driver = np.zeros(1)
    parallel = _threads > 1 and state.M >= 2 * BLOCK
    if state.family is Family.LOGISTIC:
        need_phi = record_phi or config.mode is Mode.COUPLED
        key = rng.key_for(state.seed, rng.COCYCLE_REFILL)
        order = np.argsort(track, kind="stable")
        tr_unit = track[order]
        tr_ptr = np.searchsorted(tr_unit, np.arange(0, state.M + BLOCK, BLOCK)[: (state.M + BLOCK - 1) // BLOCK + 1])
        out = _KERNELS["logistic", parallel](
            state.q, state.bits, state.params, float(config.eps), mode, driver, state.step_index,
            n_steps, n_skip, key, need_phi, psi, phi, tr_unit, order.astype(np.int64), tr_ptr,
            track_out)
    elif state.family is Family.EXPANDING:
        need_phi = record_phi or config.mode is Mode.COUPLED
        out = _KERNELS["expanding", parallel](
            state.q, float(config.eps), mode, driver, state.step_index, n_steps, n_skip,
            need_phi, psi, phi, track, track_out)
    else:
        if config.mode is not Mode.UNCOUPLED:
            raise ConfigurationError("the torus family has no mean-field coupling")
        out = _KERNELS["torus", parallel](state.q, state.y, state.params, float(config.eps),
                                          state.step_index, n_steps, n_skip, psi)
    status, unit, value, done = out
    state.step_index += int(done)
    if status != 0:
        raise StepFault(
            f"{state.family.value} unit {unit} left its domain at step {state.step_index}: "
            f"value {value!r} (eps={config.eps}, mode={config.mode.value})", value, int(unit))
    return psi, phi, track_out


def step(state: EnsembleState, config: ScenarioConfig):
    """Advance every unit one step in place.

    Returns ``(state, phi, psi)`` with ``phi`` the mean field of the pre-step
    state (``None`` for the torus) and ``psi`` the observable after the step.
    """
    psi, phi, _ = _advance(state, config, 1, 0)
    ph = None if state.family is Family.TORUS else float(phi[0])
    return state, ph, float(psi[0])


def run(state: EnsembleState, config: ScenarioConfig, N: int, burn_in: int = 0,
        record_phi: bool = True, track: Optional[np.ndarray] = None) -> TimeSeries:
    """Take ``burn_in + N`` steps in place and record the last ``N`` of them.

    ``track`` optionally lists unit indices whose pre-step ``phi(q_j)`` values
    are stored in ``TimeSeries.tracked``.
    """
    if not N > burn_in >= 0:
        raise ConfigurationError(f"need N > burn_in >= 0, got N={N}, burn_in={burn_in}")
    psi, phi, tracked = _advance(state, config, N + burn_in, burn_in, record_phi, track)
    meta = {
        "family": state.family.value,
        "mode": config.mode.value,
        "eps": float(config.eps),
        "M": state.M,
        "seed": int(state.seed),
        "N": int(N),
    }
    return TimeSeries(psi, phi, burn_in, meta, tracked if tracked.size else None)


# --------------------------------------------------------------------------
# reusable experiment description


@dataclass
class Experiment:
    """A recipe for one Birkhoff-mean estimate at a given perturbation.

    Each call to :meth:`birkhoff_mean` builds a fresh ensemble from ``seed``
    (so parameters are redrawn unless ``param_seed`` pins them), discards
    ``burn_in`` steps and returns the time average of ``Psi`` over ``N`` more.
    """

    family: Family = Family.LOGISTIC
    dist: Optional[ParameterDistribution] = maps.RAISED_COSINE_LOGISTIC
    M: int = 1000
    N: int = 10_000
    burn_in: int = 1000
    mode: Mode = Mode.UNCOUPLED
    init_measure: InitMeasure = field(default_factory=InitMeasure)
    param_seed: Optional[int] = None

    def __post_init__(self):
        self.family = Family(self.family)
        self.mode = Mode(self.mode)

    def build(self, seed: int) -> EnsembleState:
        state = init_ensemble(self.family, self.M, self.dist, seed, self.init_measure)
        if self.param_seed is not None and state.params is not None:
            state.params = maps.sample_parameters(self.dist, self.M, self.param_seed)
        return state

    def series(self, eps: float, seed: int) -> TimeSeries:
        state = self.build(seed)
        cfg = ScenarioConfig(self.mode, eps, init_measure=self.init_measure)
        return run(state, cfg, self.N, self.burn_in, record_phi=self.mode is Mode.COUPLED)

    def birkhoff_mean(self, eps: float, seed: int) -> float:
        return float(np.mean(self.series(eps, seed).psi))
