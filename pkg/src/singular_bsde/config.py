"""Run configuration: parsing, validation and model construction.

A config is a YAML or JSON mapping. Unknown keys are rejected and every
missing or invalid field is reported with its dotted path.
"""
from __future__ import annotations

import copy
import json
import math
from pathlib import Path

import yaml

from .errors import ConfigError
from .forward import CoefficientModel
from .generator import GeneratorModel, builtin

_REQ = object()

GENERATOR_KEYS = {"kind": _REQ, "q": None, "a": None, "scale": 1.0, "name": None,
                  "quad_tol": 1e-10, "root_tol": 1e-10}
ETA_KEYS = {"kind": _REQ, "value": None, "slope": 0.0, "eta_lo": None, "eta_hi": None,
            "x0": 0.0, "mean_reversion": 0.0, "mean": 0.0, "vol": 1.0}
LAMBDA_KEYS = {"kind": "constant", "value": 0.0, "slope": 0.0}
ESTIMATOR_KEYS = {"kind": "passthrough", "degree": 3, "inner_paths": 16}
SCHEME_KEYS = {"delta": _REQ, "n_steps": _REQ, "n_paths": 1, "estimator": None,
               "newton_tol": 1e-12, "newton_max_iter": 100}
EXPANSION_KEYS = {"order": 0, "inner_paths": 64, "window": 0.1, "slack": 2.0,
                  "source": "auto"}
ANALYSIS_KEYS = {"mode": "h", "h_list": None, "delta_rule": None, "delta_list": None,
                 "h": None, "n_paths": 1, "beta": 0.5}
DELTA_RULE_KEYS = {"kind": "fixed", "delta": None, "c": 1.0, "gamma": None}
AUDIT_KEYS = {"eps": 0.1, "varsigma": 1.0, "eta_sharp": 1.0, "grid_size": 200}
LIQUIDATION_KEYS = {"x0": _REQ, "p": _REQ, "zeta": None, "lambda": None, "delta": _REQ,
                    "n_steps": _REQ, "n_paths": 1, "perturbation_eps": 0.1}
TOP_KEYS = {"generator", "coefficients", "horizon", "scheme", "expansion", "analysis",
            "audit", "liquidation", "output_dir", "seed"}

REQUIRED_SECTIONS = {
    "solve": ("generator", "coefficients", "scheme"),
    "sweep": ("generator", "coefficients", "analysis"),
    "expansion-check": ("generator", "coefficients", "scheme"),
    "liquidate": ("liquidation",),
    "audit-assumptions": ("generator",),
}


def load_file(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    # a run manifest carries the resolved config under "config"
    if "tool_version" in data and "config" in data:
        data = data["config"]
    return data


def _section(data, keys: dict, path: str) -> dict:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    unknown = sorted(set(data) - set(keys))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown key")
    out = {}
    for k, default in keys.items():
        if k in data and data[k] is not None:
            out[k] = data[k]
        elif default is _REQ:
            raise ConfigError(f"{path}.{k}: required field missing")
        else:
            out[k] = default
    return out


def _num(sec, key, path, lo=None, hi=None, positive=False, integer=False):
    v = sec[key]
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"{path}.{key}: expected an integer")
    if not math.isfinite(v):
        raise ConfigError(f"{path}.{key}: must be finite")
    if positive and not v > 0:
        raise ConfigError(f"{path}.{key}: must be > 0")
    if lo is not None and v < lo:
        raise ConfigError(f"{path}.{key}: must be >= {lo}")
    if hi is not None and v > hi:
        raise ConfigError(f"{path}.{key}: must be <= {hi}")
    sec[key] = int(v) if integer else float(v)
    return sec[key]


def resolve(data: dict, command: str) -> dict:
    """Validate ``data`` for ``command`` and return it with defaults filled."""
    if command not in REQUIRED_SECTIONS:
        raise ConfigError(f"unknown command {command!r}")
    unknown = sorted(set(data) - TOP_KEYS)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown top-level key")
    for sec in REQUIRED_SECTIONS[command]:
        if data.get(sec) is None:
            raise ConfigError(f"{sec}: required section missing")
    out = {"seed": 0, "horizon": 1.0}
    if data.get("seed") is not None:
        s = data["seed"]
        if isinstance(s, bool) or not isinstance(s, int) or s < 0:
            raise ConfigError("seed: expected a non-negative integer")
        out["seed"] = s
    if data.get("horizon") is not None:
        out["horizon"] = float(_num({"horizon": data["horizon"]}, "horizon", "",
                                    positive=True))
    if data.get("output_dir") is not None:
        out["output_dir"] = str(data["output_dir"])
    if data.get("generator") is not None:
        out["generator"] = _resolve_generator(data["generator"])
    if data.get("coefficients") is not None:
        out["coefficients"] = _resolve_coefficients(data["coefficients"], "coefficients")
    if data.get("scheme") is not None:
        sc = _section(data["scheme"], SCHEME_KEYS, "scheme")
        _num(sc, "delta", "scheme", positive=True)
        if not sc["delta"] < out["horizon"]:
            raise ConfigError("scheme.delta: must be below horizon")
        _num(sc, "n_steps", "scheme", lo=1, integer=True)
        _num(sc, "n_paths", "scheme", lo=1, integer=True)
        _num(sc, "newton_tol", "scheme", positive=True)
        _num(sc, "newton_max_iter", "scheme", lo=1, integer=True)
        if sc["estimator"] is not None:
            sc["estimator"] = _resolve_estimator(sc["estimator"], "scheme.estimator")
        out["scheme"] = sc
    ex = _section(data.get("expansion"), EXPANSION_KEYS, "expansion")
    _num(ex, "order", "expansion", lo=0, hi=1, integer=True)
    _num(ex, "inner_paths", "expansion", lo=1, integer=True)
    _num(ex, "window", "expansion", positive=True, hi=1.0)
    _num(ex, "slack", "expansion", positive=True)
    if ex["source"] not in ("auto", "oracle", "scheme"):
        raise ConfigError("expansion.source: expected auto, oracle or scheme")
    out["expansion"] = ex
    if data.get("analysis") is not None:
        out["analysis"] = _resolve_analysis(data["analysis"], out["horizon"])
    out["audit"] = _section(data.get("audit"), AUDIT_KEYS, "audit")
    for k in ("eps", "varsigma", "eta_sharp"):
        _num(out["audit"], k, "audit", positive=True)
    _num(out["audit"], "grid_size", "audit", lo=1, integer=True)
    if data.get("liquidation") is not None:
        out["liquidation"] = _resolve_liquidation(data["liquidation"], out["horizon"])
    return out


def _resolve_generator(data) -> dict:
    g = _section(data, GENERATOR_KEYS, "generator")
    kind = g["kind"]
    if kind == "power":
        _num(g, "q", "generator", positive=True)
        if g["q"] is None:
            raise ConfigError("generator.q: required for kind power")
        if not g["q"] > 1:
            raise ConfigError("generator.q: must be > 1")
        _num(g, "scale", "generator", positive=True)
    elif kind == "exponential":
        if g["a"] is None:
            raise ConfigError("generator.a: required for kind exponential")
        _num(g, "a", "generator", positive=True)
    elif kind == "builtin":
        if g["name"] is None:
            raise ConfigError("generator.name: required for kind builtin")
    else:
        raise ConfigError(f"generator.kind: unknown kind {kind!r}")
    _num(g, "quad_tol", "generator", positive=True)
    _num(g, "root_tol", "generator", positive=True)
    return g


def _resolve_eta(data, path) -> dict:
    e = _section(data, ETA_KEYS, path)
    kind = e["kind"]
    if kind in ("constant", "linear"):
        if e["value"] is None:
            raise ConfigError(f"{path}.value: required")
        _num(e, "value", path, positive=True)
        _num(e, "slope", path)
    elif kind == "arctan":
        for k in ("eta_lo", "eta_hi"):
            if e[k] is None:
                raise ConfigError(f"{path}.{k}: required for arctan")
            _num(e, k, path, positive=True)
        if not e["eta_hi"] > e["eta_lo"]:
            raise ConfigError(f"{path}.eta_hi: must exceed eta_lo")
        for k in ("x0", "mean_reversion", "mean"):
            _num(e, k, path)
        _num(e, "vol", path, lo=0.0)
    else:
        raise ConfigError(f"{path}.kind: unknown kind {kind!r}")
    return e


def _resolve_lambda(data, path) -> dict:
    lam = _section(data, LAMBDA_KEYS, path)
    if lam["kind"] not in ("constant", "linear"):
        raise ConfigError(f"{path}.kind: unknown kind {lam['kind']!r}")
    _num(lam, "value", path, lo=0.0)
    _num(lam, "slope", path)
    return lam


def _resolve_coefficients(data, path) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    unknown = sorted(set(data) - {"eta", "lambda"})
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown key")
    if data.get("eta") is None:
        raise ConfigError(f"{path}.eta: required field missing")
    return {"eta": _resolve_eta(data["eta"], f"{path}.eta"),
            "lambda": _resolve_lambda(data.get("lambda"), f"{path}.lambda")}


def _resolve_estimator(data, path) -> dict:
    est = _section(data, ESTIMATOR_KEYS, path)
    if est["kind"] not in ("passthrough", "regression", "nested"):
        raise ConfigError(f"{path}.kind: unknown estimator {est['kind']!r}")
    _num(est, "degree", path, lo=0, integer=True)
    _num(est, "inner_paths", path, lo=1, integer=True)
    return est


def _resolve_analysis(data, T) -> dict:
    a = _section(data, ANALYSIS_KEYS, "analysis")
    if a["mode"] not in ("h", "delta"):
        raise ConfigError("analysis.mode: expected h or delta")
    _num(a, "n_paths", "analysis", lo=1, integer=True)
    _num(a, "beta", "analysis", positive=True)
    if a["mode"] == "h":
        hl = a["h_list"]
        if not isinstance(hl, list) or not hl:
            raise ConfigError("analysis.h_list: must be a non-empty list")
        a["h_list"] = [_num({"v": v}, "v", "analysis.h_list", positive=True) for v in hl]
        if any(b >= c for c, b in zip(a["h_list"], a["h_list"][1:])):
            raise ConfigError("analysis.h_list: must be strictly decreasing")
        rule = _section(a["delta_rule"], DELTA_RULE_KEYS, "analysis.delta_rule")
        if rule["kind"] == "fixed":
            if rule["delta"] is None:
                raise ConfigError("analysis.delta_rule.delta: required for fixed rule")
            _num(rule, "delta", "analysis.delta_rule", positive=True)
        elif rule["kind"] == "power":
            if rule["gamma"] is None:
                raise ConfigError("analysis.delta_rule.gamma: required for power rule")
            _num(rule, "gamma", "analysis.delta_rule", positive=True)
            _num(rule, "c", "analysis.delta_rule", positive=True)
        else:
            raise ConfigError(f"analysis.delta_rule.kind: unknown rule {rule['kind']!r}")
        a["delta_rule"] = rule
    else:
        dl = a["delta_list"]
        if not isinstance(dl, list) or not dl:
            raise ConfigError("analysis.delta_list: must be a non-empty list")
        a["delta_list"] = [_num({"v": v}, "v", "analysis.delta_list", positive=True)
                           for v in dl]
        if any(d >= T for d in a["delta_list"]):
            raise ConfigError("analysis.delta_list: values must be below horizon")
        if a["h"] is None:
            raise ConfigError("analysis.h: required for delta mode")
        _num(a, "h", "analysis", positive=True)
    return a


def _resolve_liquidation(data, T) -> dict:
    liq = _section(data, LIQUIDATION_KEYS, "liquidation")
    _num(liq, "x0", "liquidation")
    _num(liq, "p", "liquidation")
    if not liq["p"] > 1:
        raise ConfigError("liquidation.p: must be > 1")
    _num(liq, "delta", "liquidation", positive=True)
    if not liq["delta"] < T:
        raise ConfigError("liquidation.delta: must be below horizon")
    _num(liq, "n_steps", "liquidation", lo=1, integer=True)
    _num(liq, "n_paths", "liquidation", lo=1, integer=True)
    _num(liq, "perturbation_eps", "liquidation", positive=True)
    liq["zeta"] = _resolve_eta(liq["zeta"] or {"kind": "constant", "value": 1.0},
                               "liquidation.zeta")
    liq["lambda"] = _resolve_lambda(liq["lambda"], "liquidation.lambda")
    return liq


# model construction -------------------------------------------------------

def build_generator(g: dict) -> GeneratorModel:
    tols = {"quad_tol": g["quad_tol"], "root_tol": g["root_tol"]}
    if g["kind"] == "power":
        return GeneratorModel.power(g["q"], g["scale"], **tols)
    if g["kind"] == "exponential":
        return GeneratorModel.exponential(g["a"], **tols)
    try:
        return builtin(g["name"], **tols)
    except ValueError as exc:
        raise ConfigError(f"generator.name: {exc}") from None


def _lambda_fn(lam: dict, T: float):
    v, s = lam["value"], lam["slope"]
    if lam["kind"] == "constant" or s == 0:
        return v, v
    lo, hi = min(v, v + s * T), max(v, v + s * T)
    if lo < 0:
        raise ConfigError("lambda must stay non-negative on [0, horizon]")
    return (lambda t: v + s * t), hi


def build_coefficients(c: dict, T: float, path: str = "coefficients") -> CoefficientModel:
    e = c["eta"]
    lam, lam_max = _lambda_fn(c["lambda"], T)
    if e["kind"] == "constant" and not callable(lam):
        return CoefficientModel.constant(e["value"], lam)
    if e["kind"] in ("constant", "linear"):
        v, s = e["value"], e["slope"] if e["kind"] == "linear" else 0.0
        lo, hi = min(v, v + s * T), max(v, v + s * T)
        if not lo > 0:
            raise ConfigError(f"{path}.eta: must stay positive on [0, horizon]")
        return CoefficientModel.deterministic(lambda t: v + s * t, lambda t: s, lam,
                                              horizon=T, bounds=(lo, hi),
                                              lambda_max=lam_max,
                                              label=f"linear(eta={v:g}+{s:g}t)")
    return CoefficientModel.arctan(e["eta_lo"], e["eta_hi"], e["x0"], e["mean_reversion"],
                                   e["mean"], e["vol"], lam, lambda_max=lam_max)


def deep_copy(cfg: dict) -> dict:
    return copy.deepcopy(cfg)
