"""Experiment runner.

    macroresponse <recipe> --config run.ini [--seed S] [--threads T] [--paper-scale]
    macroresponse validate --config run.ini

A config file has one ``[experiment]`` section holding ``recipe``, ``seed``,
``output`` and the recipe's own parameters. Every run writes
``<output>/<recipe>/<config-hash>/`` containing ``data.csv`` (plus any
recipe-specific side files) and ``manifest.json``. The hash covers the
resolved parameters and the seed, never the thread count, so reruns land in
the same directory and overwrite byte-identical data.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import platform
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from . import __version__, ensemble, maps, response, stats, thermo
from .ensemble import Experiment, Family, InitMeasure, Mode

SECTION = "experiment"
_RESERVED = {"recipe", "seed", "output", "threads"}


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, key: Optional[str] = None):
        super().__init__(message)
        self.line = line
        self.key = key


# --------------------------------------------------------------------------
# parameter schema


@dataclass(frozen=True)
class Param:
    kind: str  # int | float | str | bool | floats | path
    default: Any = None
    paper: Any = None  # value under --paper-scale, if different
    choices: tuple = ()
    required: bool = False


def _sweep_params(**over):
    base = {
        "distribution": Param("str", "raised-cosine", choices=("raised-cosine", "three-atoms")),
        "M": Param("int", 5000, 1_000_000),
        "N": Param("int", 30_000, 100_000),
        "burn_in": Param("int", 1000),
        "eps_lo": Param("float", -0.2),
        "eps_hi": Param("float", 0.0),
        "J": Param("int", 128, 1000),
        "realizations": Param("int", 10),
        "sigma_method": Param("str", "anova", choices=("anova", "replications")),
        "fixed_params": Param("bool", False),
    }
    base.update(over)
    return base


RECIPES: dict[str, dict[str, Param]] = {
    "sweep-uncoupled": _sweep_params(),
    "sweep-torus": _sweep_params(
        distribution=Param("str", "raised-cosine-torus", choices=("raised-cosine-torus",)),
        M=Param("int", 2000, 1_000_000), N=Param("int", 6000), eps_lo=Param("float", 0.0),
        eps_hi=Param("float", 0.1), realizations=Param("int", 10, 15)),
    "sweep-coupled": _sweep_params(
        family=Param("str", "logistic", choices=("logistic", "expanding")),
        M=Param("int", 10_000, 1_000_000), N=Param("int", 10_000, 100_000),
        burn_in=Param("int", 3000, 10_000), J=Param("int", 32, 128)),
    "lrt-test": {
        "curve": Param("path", required=True),
        "basis": Param("str", "chebyshev:30"),
    },
    "cheb-analyze": {
        "curve": Param("path", required=True),
        "factor": Param("float", 3.0),
        "run": Param("int", 3),
    },
    "noisy-scan": {
        "a_lo": Param("float", 3.7),
        "a_hi": Param("float", 3.8),
        "da": Param("float", 1e-4, 1e-5),
        "sigma": Param("float", 1e-3),
        "N": Param("int", 10_000, 100_000),
        "burn_in": Param("int", 1000),
        "window": Param("int", 21),
        "threshold": Param("float", 0.01),
    },
    "thermo-fixed-point": {
        "eps": Param("floats", (15.0,)),
        "tol": Param("float", 1e-13),
        "horizon": Param("int", 400),
    },
    "thermo-bifurcate": {
        "eps_lo": Param("float", 18.0),
        "eps_hi": Param("float", 30.0),
        "n_eps": Param("int", 61, 601),
        "N": Param("int", 600, 2000),
        "burn_in": Param("int", 400, 1000),
    },
    "thermo-lyapunov": {
        "eps": Param("floats", (30.0,)),
        "n_exp": Param("int", 3),
        "N": Param("int", 2000, 10_000),
        "burn_in": Param("int", 200, 1000),
        "order": Param("int", 192),
        "reorth": Param("int", 5),
    },
    "thermo-susceptibility": {
        "eps": Param("float", 15.0),
        "horizon": Param("int", 200),
        "theta": Param("float", 1e-6),
    },
    "surrogate-compare": {
        "family": Param("str", "expanding", choices=("expanding", "logistic")),
        "distribution": Param("str", "raised-cosine", choices=("raised-cosine", "three-atoms")),
        "eps": Param("float", 15.0),
        "M": Param("int", 10_000, 1_000_000),
        "N": Param("int", 20_000, 100_000),
        "burn_in": Param("int", 1000),
        "realizations": Param("int", 4, 10),
        "max_lag": Param("int", 30),
        "tracked": Param("int", 1000),
    },
    "multistability-search": {
        "distribution": Param("str", "three-atoms", choices=("raised-cosine", "three-atoms")),
        "eps": Param("float", -0.15),
        "M": Param("int", 10_000, 1_000_000),
        "N": Param("int", 4000, 20_000),
        "burn_in": Param("int", 3000, 10_000),
        "realizations": Param("int", 20, 200),
        "mean_field_roots": Param("bool", False),
    },
}

_DISTRIBUTIONS = {
    "raised-cosine": maps.RAISED_COSINE_LOGISTIC,
    "three-atoms": maps.THREE_ATOMS,
    "raised-cosine-torus": maps.RAISED_COSINE_TORUS,
}


@dataclass
class ExperimentConfig:
    recipe: str
    seed: int
    output: Path
    threads: int
    params: dict
    paper_scale: bool = False
    base_dir: Path = field(default_factory=Path.cwd)
    inputs: dict = field(default_factory=dict)  # path param -> sha256 of its content

    def canonical(self) -> dict:
        p = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.params.items()}
        for k in self.inputs:
            p[k] = str(p[k])
        return {"recipe": self.recipe, "seed": self.seed, "paper_scale": self.paper_scale,
                "params": p, "inputs": self.inputs}

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def run_dir(self) -> Path:
        return self.output / self.recipe / self.config_hash()


# --------------------------------------------------------------------------
# parsing


def _key_lines(text: str) -> dict[str, int]:
    lines = {}
    for i, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*([A-Za-z_][\w\-]*)\s*[=:]", line)
        if m:
            lines.setdefault(m.group(1), i)
    return lines


def _to_int(s: str) -> int:
    x = float(s.replace("_", ""))
    if not x.is_integer():
        raise ValueError(f"not an integer: {s!r}")
    return int(x)


def _convert(p: Param, raw: str):
    if p.kind == "int":
        return _to_int(raw)
    if p.kind == "float":
        return float(raw)
    if p.kind == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if p.kind == "floats":
        return tuple(float(v) for v in raw.split(",") if v.strip())
    v = raw.strip()
    if p.choices and v not in p.choices:
        raise ValueError(f"must be one of {', '.join(p.choices)}")
    return v


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_config(path, recipe: Optional[str] = None, seed: Optional[int] = None,
                threads: Optional[int] = None, paper_scale: bool = False) -> ExperimentConfig:
    """Parse and type-check a config file; command-line values override it."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    lines = _key_lines(text)
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(path))
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if getattr(exc, "errors", None) else None
        raise ConfigError(f"cannot parse config: {exc.message.splitlines()[0]}", line) from None
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"cannot parse config: {exc}", line) from None
    if not cp.has_section(SECTION):
        raise ConfigError(f"missing [{SECTION}] section")
    raw = dict(cp.items(SECTION))

    name = raw.get("recipe")
    if recipe is not None and recipe != "validate":
        if name is not None and name != recipe:
            raise ConfigError(f"config is for recipe {name!r}, not {recipe!r}", lines.get("recipe"),
                              "recipe")
        name = recipe
    if name is None:
        raise ConfigError("no recipe given", None, "recipe")
    if name not in RECIPES:
        raise ConfigError(f"unknown recipe {name!r}", lines.get("recipe"), "recipe")
    schema = RECIPES[name]

    if seed is None:
        if "seed" not in raw:
            raise ConfigError("seed is mandatory", None, "seed")
        try:
            seed = _to_int(raw["seed"])
        except ValueError as exc:
            raise ConfigError(f"seed: {exc}", lines.get("seed"), "seed") from None
    if seed < 0:
        raise ConfigError("seed must be non-negative", lines.get("seed"), "seed")

    if threads is None:
        try:
            threads = _to_int(raw.get("threads", "0"))
        except ValueError as exc:
            raise ConfigError(f"threads: {exc}", lines.get("threads"), "threads") from None

    params, inputs = {}, {}
    for key in raw:
        if key not in schema and key not in _RESERVED:
            raise ConfigError(f"unknown key {key!r} for recipe {name!r}", lines.get(key), key)
    for key, p in schema.items():
        if key in raw:
            try:
                params[key] = _convert(p, raw[key])
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}", lines.get(key), key) from None
        elif p.required:
            raise ConfigError(f"missing required key {key!r}", None, key)
        else:
            params[key] = p.paper if (paper_scale and p.paper is not None) else p.default
        if p.kind == "path":
            target = Path(params[key])
            target = target if target.is_absolute() else path.parent / target
            params[key] = target
            if target.is_file():
                inputs[key] = _sha256(target)
    out = Path(raw.get("output", "runs"))
    out = out if out.is_absolute() else path.parent / out
    cfg = ExperimentConfig(name, int(seed), out, int(threads), params, paper_scale,
                           path.parent, inputs)
    check_ranges(cfg, lines)
    return cfg


def check_ranges(cfg: ExperimentConfig, lines: Optional[dict] = None) -> None:
    """Precondition checks that do not need a run."""
    lines = lines or {}
    p = cfg.params

    def need(ok: bool, key: str, msg: str):
        if not ok:
            raise ConfigError(f"{key}: {msg}", lines.get(key), key)

    if "J" in p:
        need(p["J"] >= 4, "J", "grid size ≥ 4")
    for key in ("M", "realizations", "n_exp", "reorth", "horizon", "max_lag", "window"):
        if key in p:
            need(p[key] >= 1, key, "must be ≥ 1")
    if "N" in p and "burn_in" in p:
        need(p["burn_in"] >= 0, "burn_in", "must be ≥ 0")
        need(p["N"] > p["burn_in"], "N", "must exceed burn_in")
    if "eps_lo" in p:
        need(p["eps_hi"] > p["eps_lo"], "eps_hi", "must exceed eps_lo")
    if "realizations" in p and cfg.recipe.startswith("sweep"):
        need(p["realizations"] >= 2, "realizations", "need ≥ 2 to estimate sigma")
    if "n_eps" in p:
        need(p["n_eps"] >= 1, "n_eps", "must be ≥ 1")
    if "da" in p:
        need(p["da"] > 0, "da", "must be > 0")
        need(p["a_hi"] > p["a_lo"], "a_hi", "must exceed a_lo")
        need(p["sigma"] >= 0, "sigma", "must be ≥ 0")
    if "n_exp" in p:
        need(p["n_exp"] <= 8, "n_exp", "must be ≤ 8")
    if "eps" in p and isinstance(p["eps"], tuple):
        need(len(p["eps"]) >= 1, "eps", "needs at least one value")
    if "tracked" in p:
        need(1 <= p["tracked"] <= p["M"], "tracked", "must lie in [1, M]")
    if "basis" in p:
        try:
            b = response.Basis.parse(p["basis"])
        except ValueError as exc:
            raise ConfigError(f"basis: {exc}", lines.get("basis"), "basis") from None
        need(b.size >= 1, "basis", "size must be ≥ 1")


# --------------------------------------------------------------------------
# resource estimates for validate

# ns per unit-step, measured on one core; only used for order-of-magnitude runtime hints
_NS_PER_UNIT_STEP = {"logistic": 2.5, "expanding": 3.0, "torus": 12.0}
_BYTES_PER_UNIT = {"logistic": 24, "expanding": 8, "torus": 24}
_MEMORY_WARN = 4 * 2 ** 30
_MACRO_STEP_S = 1e-3


def estimate(cfg: ExperimentConfig) -> dict:
    p = cfg.params
    r = cfg.recipe
    out: dict[str, Any] = {}
    fam = {"sweep-torus": "torus"}.get(r, p.get("family", "logistic"))
    if "M" in p:
        out["memory_bytes"] = int(p["M"] * _BYTES_PER_UNIT[fam])
    if r.startswith("sweep"):
        out["grid_points"] = p["J"]
        steps = p["J"] * p["realizations"] * (p["N"] + p["burn_in"]) * p["M"]
    elif r == "surrogate-compare":
        steps = 2 * p["realizations"] * (p["N"] + p["burn_in"]) * p["M"]
    elif r == "multistability-search":
        steps = p["realizations"] * (p["N"] + p["burn_in"]) * p["M"]
    elif r == "noisy-scan":
        n_a = int(math.floor((p["a_hi"] - p["a_lo"]) / p["da"] + 1e-9)) + 1
        out["grid_points"] = n_a
        out["estimated_runtime_s"] = n_a * (p["N"] + p["burn_in"]) * 40e-9
        steps = 0
    elif r == "thermo-bifurcate":
        out["grid_points"] = p["n_eps"]
        out["estimated_runtime_s"] = p["n_eps"] * p["N"] * _MACRO_STEP_S
        steps = 0
    elif r == "thermo-lyapunov":
        out["grid_points"] = len(p["eps"])
        out["estimated_runtime_s"] = len(p["eps"]) * (p["N"] + p["burn_in"]) * (p["n_exp"] + 1) * 6e-4
        steps = 0
    else:
        steps = 0
    if steps:
        out["estimated_runtime_s"] = steps * _NS_PER_UNIT_STEP[fam] * 1e-9
    return out


def validate(path, paper_scale: bool = False) -> tuple[bool, list[str]]:
    """Check a config without running it. Returns ``(ok, report lines)``."""
    try:
        cfg = load_config(path, paper_scale=paper_scale)
    except ConfigError as exc:
        where = f" (line {exc.line})" if exc.line else ""
        return False, [f"ERROR{where}: {exc}"]
    lines = ["OK", f"recipe: {cfg.recipe}", f"seed: {cfg.seed}", f"run directory: {cfg.run_dir()}"]
    est = estimate(cfg)
    for k, v in est.items():
        lines.append(f"{k}: {v:.3g}" if isinstance(v, float) else f"{k}: {v}")
    if est.get("memory_bytes", 0) > _MEMORY_WARN:
        lines.append(f"WARNING: ensemble state needs about {est['memory_bytes'] / 2 ** 30:.1f} GiB")
    for k in cfg.params:
        if RECIPES[cfg.recipe][k].kind == "path" and k not in cfg.inputs:
            lines.append(f"WARNING: input {k} = {cfg.params[k]} does not exist yet")
    return True, lines


# --------------------------------------------------------------------------
# recipes; each writes data.csv into ``out`` and returns a summary dict


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def _sweep(cfg: ExperimentConfig, out: Path, family: Family, mode: Mode) -> dict:
    p = cfg.params
    ex = Experiment(family, None if family is Family.EXPANDING else _DISTRIBUTIONS[p["distribution"]],
                    M=p["M"], N=p["N"], burn_in=p["burn_in"], mode=mode,
                    param_seed=cfg.seed if p["fixed_params"] else None)
    curve = response.sweep(ex, p["eps_lo"], p["eps_hi"], p["J"], p["realizations"], seed=cfg.seed,
                           sigma_method=p["sigma_method"])
    curve.to_csv(out / "data.csv")
    return {"J": curve.J, "mean_stderr": float(np.mean(curve.stderr))}


def recipe_sweep_uncoupled(cfg, out):
    return _sweep(cfg, out, Family.LOGISTIC, Mode.UNCOUPLED)


def recipe_sweep_torus(cfg, out):
    return _sweep(cfg, out, Family.TORUS, Mode.UNCOUPLED)


def recipe_sweep_coupled(cfg, out):
    return _sweep(cfg, out, Family(cfg.params["family"]), Mode.COUPLED)


def _load_curve(cfg) -> response.ResponseCurve:
    path = cfg.params["curve"]
    if not Path(path).is_file():
        raise ConfigError(f"curve: file not found: {path}", None, "curve")
    return response.ResponseCurve.from_csv(path)


def recipe_lrt_test(cfg, out):
    res = response.lrt_test(_load_curve(cfg), cfg.params["basis"])
    (out / "result.json").write_text(res.to_json() + "\n", encoding="utf-8")
    _write_rows(out / "data.csv", ["chi2", "dof", "p_value", "basis", "bias_check"],
                [[res.chi2, res.dof, res.p_value, res.basis, res.bias_check]])
    return {"p_value": res.p_value, "chi2": res.chi2, "dof": res.dof}


def recipe_cheb_analyze(cfg, out):
    curve = _load_curve(cfg)
    series = response.cheb_fit(curve)
    se = response.coefficient_stderr(curve)
    k_lo, k_hi = response.usable_range(series, se, cfg.params["factor"], cfg.params["run"])
    summary: dict[str, Any] = {"k_min": k_lo, "k_max": k_hi}
    try:
        fit = response.decay_rate(series, k_lo, k_hi)
        summary["slope"] = fit.slope
    except ValueError as exc:
        summary["slope"] = None
        summary["note"] = str(exc)
    _write_rows(out / "data.csv", ["k", "coeff", "stderr", "usable"],
                [[k, c, s, int(k_lo <= k <= k_hi)] for k, (c, s) in enumerate(zip(series.coeffs, se))])
    return summary


def recipe_noisy_scan(cfg, out):
    p = cfg.params
    table = stats.noisy_logistic_scan(p["a_lo"], p["a_hi"], p["da"], p["sigma"], p["N"], cfg.seed,
                                      burn_in=p["burn_in"])
    table.to_csv(out / "data.csv")
    return {"points": int(table.a.size),
            "outliers": stats.count_outliers(table.mean, p["window"], p["threshold"]),
            "escaped": int(np.sum(np.isnan(table.mean)))}


def recipe_thermo_fixed_point(cfg, out):
    p = cfg.params
    rows = []
    for eps in p["eps"]:
        fp = thermo.solve_fixed_point(eps, tol=p["tol"], horizon=p["horizon"])
        rows.append([fp.eps, fp.phi_bar, fp.K, fp.residual, int(fp.stable), fp.r_at_1,
                     fp.spectral_radius, 1])
        rows += [[fp.eps, float(o), "", "", "", "", "", 0] for o in fp.others]
    _write_rows(out / "data.csv", ["eps", "phi_bar", "K", "residual", "stable", "r_at_1",
                                   "spectral_radius", "principal"], rows)
    return {"phi_bar": [r[1] for r in rows if r[-1] == 1]}


def recipe_thermo_bifurcate(cfg, out):
    p = cfg.params
    table = thermo.bifurcation_scan(p["eps_lo"], p["eps_hi"], p["n_eps"], p["N"], p["burn_in"])
    table.to_csv(out / "data.csv")
    return {"n_distinct": table.n_distinct().tolist()}


def recipe_thermo_lyapunov(cfg, out):
    p = cfg.params
    rows = []
    for eps in p["eps"]:
        lam = thermo.lyapunov_spectrum(eps, p["n_exp"], p["N"], p["burn_in"], order=p["order"],
                                       reorth=p["reorth"], seed=cfg.seed)
        rows += [[eps, i + 1, float(x)] for i, x in enumerate(lam)]
    _write_rows(out / "data.csv", ["eps", "index", "exponent"], rows)
    return {"exponents": [r[2] for r in rows]}


def recipe_thermo_susceptibility(cfg, out):
    p = cfg.params
    fp = thermo.solve_fixed_point(p["eps"])
    sus = thermo.susceptibility(p["eps"], fp.phi_bar, p["horizon"], p["theta"], density=fp.density)
    sus.to_csv(out / "data.csv")
    return {"phi_bar": fp.phi_bar, "r_of_one": sus.r_of_one, "remainder": sus.remainder,
            "zeros_in_disk": sus.zeros_in_disk(), "decaying": sus.decaying}


def recipe_surrogate_compare(cfg, out):
    """True coupled runs against ensembles driven by their Gaussian surrogate.

    The driver is ``Phi_bar + zeta / sqrt(M)`` with ``Phi_bar`` the mean of
    the coupled runs and the autocovariance of ``zeta`` taken from ``M``
    times that of the first run's mean field. Driven runs use fresh seeds.
    The per-unit covariance from tracked units is written alongside for
    comparison.
    """
    p = cfg.params
    fam = Family(p["family"])
    dist = None if fam is Family.EXPANDING else _DISTRIBUTIONS[p["distribution"]]
    R = p["realizations"]
    seeds = rng_seeds(cfg.seed, 2 * R)
    track = np.linspace(0, p["M"] - 1, p["tracked"]).astype(np.int64)
    rows, model, unit_acv = [], None, None
    for r in range(R):
        st = ensemble.init_ensemble(fam, p["M"], dist, seeds[r])
        ts = ensemble.run(st, ensemble.ScenarioConfig(Mode.COUPLED, p["eps"]), p["N"], p["burn_in"],
                          record_phi=True, track=track if model is None else None)
        if model is None:
            model = stats.mean_field_noise_model(ts.phi, p["M"], p["max_lag"])
            unit_acv = stats.unit_autocovariance(ts.tracked, p["max_lag"])
        rows.append(["coupled", r, float(np.mean(ts.phi)), float(np.mean(ts.psi))])
    phi_bar = float(np.mean([row[2] for row in rows]))
    for r in range(R):
        s = seeds[R + r]
        st = ensemble.init_ensemble(fam, p["M"], dist, s)
        drv = stats.surrogate_driver(phi_bar, model, p["M"], p["N"] + p["burn_in"], s)
        ts = ensemble.run(st, ensemble.ScenarioConfig(Mode.DRIVEN, p["eps"], drv), p["N"],
                          p["burn_in"], record_phi=True)
        rows.append(["surrogate", r, float(np.mean(ts.phi)), float(np.mean(ts.psi))])
    _write_rows(out / "data.csv", ["source", "realization", "mean_phi", "mean_psi"], rows)
    _write_rows(out / "acv.csv", ["lag", "mean_field_acv", "unit_acv"],
                [[int(m), float(a), float(b)] for m, a, b in
                 zip(model.acv.lags, model.acv.values, unit_acv.values)])

    def summary(kind):
        v = np.array([row[3] for row in rows if row[0] == kind])
        return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0

    (mc, sc), (ms, ss) = summary("coupled"), summary("surrogate")
    return {"coupled_psi": mc, "coupled_se": sc, "surrogate_psi": ms, "surrogate_se": ss}


def recipe_multistability_search(cfg, out):
    """Coupled runs from randomised initial laws; distinct time means reveal
    coexisting attractors."""
    p = cfg.params
    dist = _DISTRIBUTIONS[p["distribution"]]
    rows = []
    for r, s in enumerate(rng_seeds(cfg.seed, p["realizations"])):
        im = InitMeasure.random_beta(s)
        st = ensemble.init_ensemble(Family.LOGISTIC, p["M"], dist, s, im)
        ts = ensemble.run(st, ensemble.ScenarioConfig(Mode.COUPLED, p["eps"], init_measure=im),
                          p["N"], p["burn_in"], record_phi=True)
        rows.append([r, im.alpha, im.beta, float(np.mean(ts.phi)), float(np.var(ts.phi)),
                     float(np.mean(ts.psi))])
    _write_rows(out / "data.csv", ["realization", "alpha", "beta", "mean_phi", "var_phi", "mean_psi"],
                rows)
    summary: dict[str, Any] = {"mean_psi_range": [min(r[5] for r in rows), max(r[5] for r in rows)]}
    if p["mean_field_roots"]:
        ex = Experiment(Family.LOGISTIC, dist, M=p["M"], N=p["N"], burn_in=p["burn_in"],
                        mode=Mode.DRIVEN)
        roots = stats.mean_field_fixed_points(ex, p["eps"], cfg.seed)
        _write_rows(out / "roots.csv", ["phi", "psi", "gain"], [[x.phi, x.psi, x.gain] for x in roots])
        summary["roots"] = [x.phi for x in roots]
    return summary


def rng_seeds(seed: int, n: int) -> list[int]:
    from . import rng
    return [int(x) for x in rng.random_bits(seed, rng.SUBSAMPLE, n) >> np.uint64(1)]


RUNNERS: dict[str, Callable[[ExperimentConfig, Path], dict]] = {
    "sweep-uncoupled": recipe_sweep_uncoupled,
    "sweep-torus": recipe_sweep_torus,
    "sweep-coupled": recipe_sweep_coupled,
    "lrt-test": recipe_lrt_test,
    "cheb-analyze": recipe_cheb_analyze,
    "noisy-scan": recipe_noisy_scan,
    "thermo-fixed-point": recipe_thermo_fixed_point,
    "thermo-bifurcate": recipe_thermo_bifurcate,
    "thermo-lyapunov": recipe_thermo_lyapunov,
    "thermo-susceptibility": recipe_thermo_susceptibility,
    "surrogate-compare": recipe_surrogate_compare,
    "multistability-search": recipe_multistability_search,
}


def _versions() -> dict:
    import numba
    import scipy
    return {"macroresponse": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, Path):
        return str(x)
    return x


def run_recipe(cfg: ExperimentConfig) -> Path:
    """Run one recipe and return its output directory."""
    if cfg.threads:
        ensemble.set_threads(cfg.threads)
    out = cfg.run_dir()
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    summary = RUNNERS[cfg.recipe](cfg, out)
    runtime = time.perf_counter() - t0
    files = sorted(f for f in out.iterdir() if f.is_file() and f.name != "manifest.json")
    manifest = {
        "recipe": cfg.recipe,
        "config": cfg.canonical(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "threads": cfg.threads,
        "runtime_s": runtime,
        "artifact_checksums": {f.name: _sha256(f) for f in files},
        "versions": _versions(),
        "summary": summary,
    }
    (out / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return out


# --------------------------------------------------------------------------
# entry point


def _fail(kind: str, message: str, **extra) -> int:
    payload = {"error": kind, "message": message}
    payload.update({k: v for k, v in extra.items() if v is not None})
    print(json.dumps(payload, ensure_ascii=False), file=sys.stderr)
    return 2 if kind == "config" else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="macroresponse",
                                 description="Run a reproducible response experiment.")
    ap.add_argument("recipe", help="one of: " + ", ".join(list(RECIPES) + ["validate"]))
    ap.add_argument("--config", required=True, help="INI file with an [experiment] section")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--threads", type=int, default=None, help="worker threads for ensemble kernels")
    ap.add_argument("--paper-scale", action="store_true",
                    help="use the published full-scale sample sizes for parameters not set in the config")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.recipe == "validate":
        ok, report = validate(args.config, args.paper_scale)
        print("\n".join(report), file=sys.stdout if ok else sys.stderr)
        return 0 if ok else 2
    if args.recipe not in RECIPES:
        return _fail("config", f"unknown recipe {args.recipe!r}", recipe=args.recipe)
    try:
        cfg = load_config(args.config, args.recipe, args.seed, args.threads, args.paper_scale)
        out = run_recipe(cfg)
    except ConfigError as exc:
        return _fail("config", str(exc), line=exc.line, key=exc.key)
    except maps.StepFault as exc:
        return _fail("step_fault", str(exc), unit=exc.unit, value=_jsonable(exc.value))
    except (thermo.TransferError, thermo.FixedPointError, ValueError, maps.ConfigurationError) as exc:
        return _fail(type(exc).__name__, str(exc))
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
