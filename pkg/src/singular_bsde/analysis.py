"""Error analysis: reference solutions, sweeps over (h, delta), rate fits and
the explicit error bound with its decomposition.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from .errors import ConfigError, DomainError, StiffnessError
from .forward import CoefficientModel
from .generator import (GeneratorModel, eval_kappa, eval_phi, eval_theta_envelope,
                        f1_array, f2_array, f_array)
from .scheme import CondExpEstimator, SchemeConfig, SchemeResult, solve_singular


@dataclass
class OracleSolution:
    times: np.ndarray
    values: np.ndarray
    method: str
    error_estimate: float = 0.0
    extra: dict = field(default_factory=dict)

    def at(self, t: float) -> float:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-12 * max(1.0, abs(t)):
            raise DomainError(f"oracle has no node at t={t:g}")
        return float(self.values[k])


# deterministic reference ------------------------------------------------

def _inv_eta_integral(coeff: CoefficientModel, t: float, T: float) -> float:
    if coeff.eta_hi == coeff.eta_lo:
        return (T - t) / coeff.eta_lo
    val, _ = integrate.quad(lambda s: 1.0 / coeff.eta_fn(s), t, T, epsabs=0.0,
                            epsrel=1e-13, limit=200)
    return val


def _rk4_log_time(gen, coeff, T, y_start, u_start, u_nodes, dsig_max, min_sub):
    """Integrate dY/dsigma = u (f(Y)/eta(T-u) + lambda(T-u)), u = exp(sigma)."""
    def rhs(sig, y):
        u = math.exp(sig)
        t = T - u
        eta = float(coeff.eta_fn(t))
        lam = float(coeff.lambda_of(t, np.zeros(1))[0])
        return u * (float(f_array(gen, y)) / eta + lam)

    out = np.empty(len(u_nodes))
    sig, y = math.log(u_start), y_start
    for k, u in enumerate(u_nodes):
        target = math.log(u)
        span = target - sig
        n = max(min_sub, int(math.ceil(abs(span) / dsig_max))) if span != 0 else 0
        if n:
            ds = span / n
            for _ in range(n):
                k1 = rhs(sig, y)
                k2 = rhs(sig + ds / 2, y + ds / 2 * k1)
                k3 = rhs(sig + ds / 2, y + ds / 2 * k2)
                k4 = rhs(sig + ds, y + ds * k3)
                y = y + ds / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                sig += ds
                if not math.isfinite(y) or y < 0:
                    raise StiffnessError(f"reference integration blew up near t={T - u:g}")
            sig = target
        out[k] = y
    return out


def oracle_deterministic(gen: GeneratorModel, coeff: CoefficientModel, T: float,
                         times: Sequence[float], cutoff_eps: Optional[float] = None,
                         rk_steps: int = 4, dsig_max: float = 0.01) -> OracleSolution:
    """Reference Y at ``times`` for deterministic eta and lambda.

    With lambda = 0 the solution is phi(int_t^T ds/eta) (closed form in phi,
    quadrature in 1/eta). Otherwise classical RK4 runs in the variable
    log(T - t), starting from phi(eps/eta) at T - eps. The reported error
    combines a step-halving (Richardson) estimate with the change seen when
    eps is halved.
    """
    if coeff.eta_kind != "deterministic" or coeff.lambda_state:
        raise ConfigError("deterministic oracle needs deterministic coefficients")
    times = np.asarray(times, dtype=float)
    if np.any(times >= T):
        raise DomainError("oracle times must lie below T")
    if coeff.lambda_max == 0:
        vals = np.array([eval_phi(gen, _inv_eta_integral(coeff, t, T)) for t in times])
        method = "closed_form" if coeff.eta_hi == coeff.eta_lo else "closed_form_quadrature"
        return OracleSolution(times, vals, method, 0.0)
    if cutoff_eps is None:
        cutoff_eps = (T - float(np.max(times))) / 100.0
    u_nodes_all = T - times
    if np.any(u_nodes_all <= cutoff_eps):
        raise DomainError("cutoff_eps must be below T - max(times)")
    order = np.argsort(u_nodes_all)
    u_nodes = u_nodes_all[order]

    def run(eps, ds):
        # phi plus the first-order lambda response, lam u / (1 + kappa1)
        A = eps / float(coeff.eta_fn(T - eps))
        lam = float(coeff.lambda_fn(T - eps))
        y0 = float(eval_phi(gen, A)) + lam * eps / (1.0 + float(eval_kappa(gen, 1, A)))
        return _rk4_log_time(gen, coeff, T, y0, eps, u_nodes, ds, rk_steps)

    fine = run(cutoff_eps, dsig_max)
    coarse = run(cutoff_eps, 2 * dsig_max)
    rich = float(np.max(np.abs(fine - coarse))) / 15.0
    half = run(cutoff_eps / 2, dsig_max)
    cut = float(np.max(np.abs(half - fine)))
    vals = np.empty_like(fine)
    vals[order] = half
    return OracleSolution(times, vals, "rk4_log_time", rich + cut,
                          {"richardson": rich, "cutoff_sensitivity": cut,
                           "cutoff_eps": cutoff_eps / 2})


def reference_stochastic(gen: GeneratorModel, coeff: CoefficientModel, T: float,
                         fine_steps: int, fine_delta: float, n_paths: int, seed: int,
                         estimator: Optional[CondExpEstimator] = None,
                         order: int = 0) -> OracleSolution:
    """Fine-level solve on shared noise, with a self-consistency check.

    The ratio |Y(fine) - Y(fine/2)| / |Y(fine/2) - Y(fine/4)| should be
    below one for a converging hierarchy; larger values set a warning flag.
    """
    if fine_steps % 4:
        raise ConfigError("fine_steps must be divisible by 4")
    y0 = []
    res = None
    for n in (fine_steps // 4, fine_steps // 2, fine_steps):
        cfg = SchemeConfig(fine_delta, n, estimator)
        res = solve_singular(gen, coeff, T, cfg, order, n_paths, seed)
        y0.append(res.y0)
    d1, d2 = abs(y0[2] - y0[1]), abs(y0[1] - y0[0])
    ratio = d1 / d2 if d2 > 0 else (0.0 if d1 == 0 else math.inf)
    warn = bool(ratio > 1.0)
    if warn:
        warnings.warn(f"reference self-consistency ratio {ratio:.3g} > 1")
    return OracleSolution(res.times, res.y_bar.mean(axis=0), "fine_reference", d1,
                          {"levels_y0": y0, "self_consistency_ratio": ratio,
                           "warning": warn, "result": res})


# explicit bound -----------------------------------------------------------

@dataclass
class BoundInputs:
    """Constants entering the explicit bound.

    ``coefficient_error`` False means a and lambda are simulated exactly, so
    the h^beta terms (which come from coefficient discretisation) vanish.
    """

    T: float
    eta_lo: float
    eta_hi: float
    lambda_max: float
    alpha: float
    beta: float = 0.5
    C: float = 0.0
    C3: float = 1.0
    phi: float = 0.0
    coefficient_error: bool = True


def _sup_abs_f2(gen: GeneratorModel, K: float) -> float:
    ys = np.linspace(0.0, K, 2001)
    with np.errstate(all="ignore"):
        v = np.abs(f2_array(gen, ys))
    v = v[np.isfinite(v)]
    return float(np.max(v)) if v.size else math.inf


def theorem_bound(gen: GeneratorModel, delta: float, h: float, inp: BoundInputs) -> dict:
    """C3 [delta^alpha + h^beta + Psi1 h^beta + Psi2 h] with its four terms.

    K = Theta(delta) + C delta^alpha + T lambda_max,
    Psi1 = |f(K)| + Phi,
    Psi2 = |f'(K)| T/(2 eta_lo) (|f(K)|/eta_lo + lambda_max)
           + sup_[0,K] |f''| / (2 eta_lo) (K^2 + (T lambda_max)^2).
    """
    T, el = inp.T, inp.eta_lo
    theta = float(eval_theta_envelope(gen, delta, inp.eta_hi, inp.lambda_max))
    K = theta + inp.C * delta ** inp.alpha + T * inp.lambda_max
    fK = abs(float(f_array(gen, K)))
    f1K = abs(float(f1_array(gen, K)))
    psi1 = fK + inp.phi
    psi2 = (f1K * T / (2 * el) * (fK / el + inp.lambda_max)
            + _sup_abs_f2(gen, K) / (2 * el) * (K * K + (T * inp.lambda_max) ** 2))
    hb = h ** inp.beta if inp.coefficient_error else 0.0
    terms = {"delta_term": delta ** inp.alpha, "h_term": hb, "psi1_term": psi1 * hb,
             "psi2_term": psi2 * h}
    base = sum(terms.values())
    return {"delta": delta, "h": h, "K_bound": K, "theta": theta, "f_K": -fK,
            "psi1": psi1, "psi2": psi2, **terms, "bracket": base,
            "C3": inp.C3, "C": inp.C, "total": inp.C3 * base}


def balance_delta(gen: GeneratorModel, h: float, inp: BoundInputs,
                  delta_grid: Sequence[float]):
    """Grid minimiser of the bound in delta; ties go to the larger delta."""
    grid = sorted((float(d) for d in delta_grid), reverse=True)
    if not grid or any(not 0 < d < inp.T for d in grid):
        raise DomainError("delta grid must be a non-empty subset of (0, T)")
    best, best_val = None, math.inf
    for d in grid:
        val = theorem_bound(gen, d, h, inp)["total"]
        if val < best_val * (1 - 1e-12):
            best, best_val = d, val
    return best, best_val


# sweeps -------------------------------------------------------------------

def fit_loglog(x, y) -> dict:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0) & np.isfinite(y)
    if ok.sum() < 2:
        return {"slope": math.nan, "intercept": math.nan, "n": int(ok.sum())}
    slope, icpt = np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)
    return {"slope": float(slope), "intercept": float(icpt), "n": int(ok.sum())}


@dataclass
class Problem:
    """A generator/coefficient pair on [0, T] with run settings."""

    gen: GeneratorModel
    coeff: CoefficientModel
    T: float
    order: int = 0
    estimator: Optional[CondExpEstimator] = None
    beta: float = 0.5
    phi: float = 0.0


@dataclass
class ErrorReport:
    rows: list
    slopes: dict
    constants: dict
    calibration: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    CSV_FIELDS = ("h", "delta", "n_steps", "y0", "oracle_y0", "error_t0", "sup_error",
                  "terminal_residual", "bound", "delta_term", "h_term", "psi1_term",
                  "psi2_term", "K_bound", "invariants_ok", "within_bound")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.CSV_FIELDS)
            for r in self.rows:
                out = []
                for k in self.CSV_FIELDS:
                    v = r.get(k, "")
                    if isinstance(v, bool):
                        out.append(str(v).lower())
                    elif isinstance(v, (int, np.integer)):
                        out.append(str(int(v)))
                    elif isinstance(v, float):
                        out.append(f"{v:.17e}")
                    else:
                        out.append(str(v))
                w.writerow(out)

    def to_dict(self) -> dict:
        return _jsonable({"rows": self.rows, "slopes": self.slopes,
                          "constants": self.constants, "calibration": self.calibration,
                          "flags": self.flags})

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def resolve_delta(rule: dict, h: float) -> float:
    kind = rule.get("kind", "fixed")
    if kind == "fixed":
        return float(rule["delta"])
    if kind == "power":
        return float(rule.get("c", 1.0)) * h ** float(rule["gamma"])
    raise ConfigError(f"unknown delta rule {kind!r}")


def _oracle_values(prob: Problem, times, delta: float):
    if prob.coeff.is_deterministic:
        orc = oracle_deterministic(prob.gen, prob.coeff, prob.T, times,
                                   cutoff_eps=delta / 100.0)
        return orc.values, orc.error_estimate
    return None, None


def _run_level(prob: Problem, h: float, delta: float, n_paths: int, seed: int) -> dict:
    T = prob.T
    N = max(1, int(round((T - delta) / h)))
    res = solve_singular(prob.gen, prob.coeff, T, SchemeConfig(delta, N, prob.estimator),
                         prob.order, n_paths, seed)
    row = {"h": (T - delta) / N, "delta": delta, "n_steps": N, "y0": res.y0,
           "invariants_ok": bool(res.diagnostics["nonnegative"]
                            and res.diagnostics["upper_bound_ok"])}
    ref, ref_err = _oracle_values(prob, res.times, delta)
    if ref is not None:
        mean_path = res.y_bar.mean(axis=0)
        row.update(oracle_y0=float(ref[0]), error_t0=abs(res.y0 - float(ref[0])),
                   sup_error=float(np.max(np.abs(mean_path - ref))),
                   terminal_residual=abs(float(np.mean(res.terminal)) - float(ref[-1])),
                   oracle_error=ref_err)
    row["_result"] = res
    return row


def _map_levels(fn, items, threads: int):
    if threads and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _bound_inputs(prob: Problem, C=0.0, C3=1.0) -> BoundInputs:
    alpha = prob.gen.alpha
    if alpha is None:
        alpha = 1.0
    return BoundInputs(prob.T, prob.coeff.eta_lo, prob.coeff.eta_hi, prob.coeff.lambda_max,
                       alpha, prob.beta, C, C3, prob.phi,
                       coefficient_error=not prob.coeff.is_deterministic)


def calibrate_and_check(prob: Problem, rows: list) -> dict:
    """Fit C (terminal constant) and C3 on the coarsest row, then evaluate the
    bound on every row and mark whether the measured error lies below it."""
    if not rows or "error_t0" not in rows[0]:
        return {"calibrated": False}
    coarse = max(rows, key=lambda r: r["h"])
    inp = _bound_inputs(prob)
    C = coarse.get("terminal_residual", 0.0) / coarse["delta"] ** inp.alpha
    inp.C = C
    b0 = theorem_bound(prob.gen, coarse["delta"], coarse["h"], inp)
    inp.C3 = coarse["error_t0"] / b0["bracket"] if b0["bracket"] > 0 else 0.0
    all_ok = True
    for r in rows:
        b = theorem_bound(prob.gen, r["delta"], r["h"], inp)
        r.update(bound=b["total"], delta_term=b["delta_term"], h_term=b["h_term"],
                 psi1_term=b["psi1_term"], psi2_term=b["psi2_term"], K_bound=b["K_bound"])
        r["within_bound"] = bool(r["error_t0"] <= b["total"] * (1 + 1e-12))
        if r is not coarse:
            all_ok &= r["within_bound"]
    return {"calibrated": True, "C": C, "C3": inp.C3, "calibration_h": coarse["h"],
            "calibration_delta": coarse["delta"], "envelope_holds": all_ok,
            "terms_nonnegative": all(min(r["delta_term"], r["h_term"], r["psi1_term"],
                                         r["psi2_term"]) >= 0 for r in rows)}


def _finish(prob: Problem, rows: list, slopes: dict) -> ErrorReport:
    results = [r.pop("_result") for r in rows]
    calib = calibrate_and_check(prob, rows)
    flags = {"invariants_ok": all(r["invariants_ok"] for r in rows)}
    errs = [r["error_t0"] for r in rows if "error_t0" in r]
    oerr = [r.get("oracle_error", 0.0) for r in rows]
    if errs:
        flags["oracle_valid"] = bool(max(oerr) < 0.01 * max(min(errs), 1e-300))
    consts = {"T": prob.T, "alpha": prob.gen.alpha, "beta": prob.beta,
              "eta_lo": prob.coeff.eta_lo, "eta_hi": prob.coeff.eta_hi,
              "lambda_max": prob.coeff.lambda_max, "generator": prob.gen.name,
              "K_scheme": [float(np.max(res.terminal)) + prob.T * prob.coeff.lambda_max
                           for res in results]}
    rep = ErrorReport(rows, slopes, consts, calib, flags)
    rep.results = results
    return rep


def convergence_sweep(prob: Problem, h_list: Sequence[float], delta_rule: dict,
                      n_paths: int = 1, seed: int = 0, threads: int = 1) -> ErrorReport:
    """Solve on each h (delta from ``delta_rule``) and compare with the oracle."""
    h_list = [float(h) for h in h_list]
    if not h_list:
        raise ConfigError("h_list is empty")
    if any(b >= a for a, b in zip(h_list, h_list[1:])):
        raise ConfigError("h_list must be strictly decreasing")
    items = [(h, resolve_delta(delta_rule, h)) for h in h_list]
    rows = _map_levels(lambda it: _run_level(prob, it[0], it[1], n_paths, seed),
                       items, threads)
    slopes = {}
    if "error_t0" in rows[0]:
        slopes["h_error_t0"] = fit_loglog([r["h"] for r in rows],
                                          [r["error_t0"] for r in rows])
        slopes["h_sup_error"] = fit_loglog([r["h"] for r in rows],
                                           [r["sup_error"] for r in rows])
    return _finish(prob, rows, slopes)


def delta_sweep(prob: Problem, delta_list: Sequence[float], h: float, n_paths: int = 1,
                seed: int = 0, threads: int = 1) -> ErrorReport:
    """Vary the cutoff at (approximately) fixed h."""
    deltas = [float(d) for d in delta_list]
    if not deltas:
        raise ConfigError("delta list is empty")
    rows = _map_levels(lambda d: _run_level(prob, h, d, n_paths, seed), deltas, threads)
    slopes = {}
    if "error_t0" in rows[0]:
        ds = [r["delta"] for r in rows]
        slopes["delta_error_t0"] = fit_loglog(ds, [r["error_t0"] for r in rows])
        slopes["delta_terminal_residual"] = fit_loglog(
            ds, [r["terminal_residual"] for r in rows])
    return _finish(prob, rows, slopes)


def terminal_residuals(prob: Problem, delta_list: Sequence[float], cutoff_ratio=100.0,
                       inner_paths: int = 64) -> dict:
    """|Y(T - delta) - xi(T - delta)| for deterministic problems, with slope."""
    from .expansion import terminal_order0, terminal_order1_power

    out = []
    for d in delta_list:
        t = prob.T - d
        ref = oracle_deterministic(prob.gen, prob.coeff, prob.T, [t],
                                   cutoff_eps=d / cutoff_ratio).values[0]
        if prob.order == 0:
            xi = float(terminal_order0(prob.gen, d, float(prob.coeff.eta_fn(t))))
        else:
            xi = float(terminal_order1_power(prob.gen, d, prob.T, prob.coeff,
                                             np.zeros(1))[0])
        out.append(abs(ref - xi))
    return {"delta": list(map(float, delta_list)), "residual": out,
            **fit_loglog(delta_list, out)}
