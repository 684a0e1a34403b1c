"""Expansion-based terminal values near T and the remainder process H.

Near maturity the solution behaves like phi(A_t) with A_t = (T - t)/eta_t.
The order-0 terminal value is xi = phi(delta/eta). For power drivers with
2 <= p < 3 a first-order correction driven by the dynamics of eta restores
the rate 3 - p. The remainder H is defined through
Y = phi(A) - phi'(A) H.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np
from scipy import integrate

from .errors import DomainError, InnerEstimatorError, UnboundedKappa, UnsupportedExpansion
from .forward import CoefficientModel, PathEnsemble, path_rng
from .generator import (GeneratorModel, eval_kappa, eval_phi, eval_phi_derivs,
                        eval_vartheta)


def terminal_order0(gen: GeneratorModel, delta: float, eta_at_cutoff) -> np.ndarray:
    """xi = phi(delta / eta) per path."""
    if not delta > 0:
        raise DomainError("delta must be > 0")
    eta = np.asarray(eta_at_cutoff, dtype=float)
    return eval_phi(gen, delta / eta)


def _check_order1(gen: GeneratorModel) -> float:
    if gen.kind != "power":
        raise UnsupportedExpansion("order-1 terminal values are only available "
                                   "for power drivers")
    p = gen.p
    if not (2.0 - 1e-12 <= p < 3.0):
        raise UnsupportedExpansion(f"order-1 terminal needs 2 <= p < 3, got p={p:g}")
    return p


def _order1_integrand(p, T, s, eta, b, sig):
    return (T - s) * eta ** (p - 1.0) * (b / eta + (0.5 * p - 1.0) * (sig / eta) ** 2)


def terminal_order1_power(gen: GeneratorModel, delta: float, T: float,
                          coeff: CoefficientModel, state_at_cutoff,
                          inner_paths: int = 64, inner_steps: int = 32,
                          seed: int = 0) -> np.ndarray:
    """Leading term plus the first-order correction at t = T - delta.

    The correction is (p-1)^p / delta^p times the conditional expectation of
    the integral over [t, T] of (T-s) eta^(p-1) (b/eta + (p/2 - 1)(sigma/eta)^2).
    Deterministic coefficients use adaptive quadrature; stochastic ones use
    ``inner_paths`` Euler sub-paths started from each cutoff state.
    """
    p = _check_order1(gen)
    if not 0 < delta < T + 1e-15:
        raise DomainError("need 0 < delta <= T")
    c = gen.scale
    t0 = T - delta
    state = np.atleast_1d(np.asarray(state_at_cutoff, dtype=float))
    eta0 = coeff.eta_of(t0, state)
    lead = ((p - 1.0) * eta0 / delta) ** (p - 1.0)
    if coeff.eta_kind == "deterministic":
        def g(s):
            b, sig = coeff.ito_coefficients(s, np.zeros(1))
            e = float(coeff.eta_fn(s))
            return float(_order1_integrand(p, T, s, e, b[0], sig[0]))
        val, err = integrate.quad(g, t0, T, epsabs=1e-14, epsrel=1e-12, limit=200)
        expect = np.full(state.shape, val)
    else:
        expect = _inner_expectation(p, T, t0, coeff, state, inner_paths, inner_steps,
                                    seed)
    corr = (p - 1.0) ** p / delta ** p * expect
    xi = (lead + corr) * c ** (1.0 - p)
    if not np.all(np.isfinite(xi)):
        raise InnerEstimatorError("order-1 correction is not finite")
    return np.maximum(xi, 0.0)


def _inner_expectation(p, T, t0, coeff, state, M, n_inner, seed):
    h = (T - t0) / n_inner
    sq = math.sqrt(h)
    out = np.empty(state.size)
    for j, s0 in enumerate(state):
        rng = path_rng(seed, j, stream=2)
        dW = rng.standard_normal((M, n_inner)) * sq
        st = np.full(M, s0)
        acc = np.zeros(M)
        for k in range(n_inner + 1):
            t = t0 + k * h
            eta = coeff.eta_of(t, st)
            b, sig = coeff.ito_coefficients(t, st)
            w = 0.5 if k in (0, n_inner) else 1.0
            acc += w * h * _order1_integrand(p, T, t, eta, b, sig)
            if k < n_inner:
                st, _ = coeff.step(t, st, dW[:, k], h)
        out[j] = acc.mean()
    if not np.all(np.isfinite(out)):
        raise InnerEstimatorError("inner sub-simulation produced non-finite values")
    return out


def terminal_value(gen: GeneratorModel, coeff: CoefficientModel, ens: PathEnsemble,
                   T: float, delta: float, order: int = 0, inner_paths: int = 64,
                   seed: int = 0) -> np.ndarray:
    """Terminal layer for the scheme from the ensemble state at T - delta."""
    if order == 0:
        return np.atleast_1d(terminal_order0(gen, delta, ens.eta[:, -1]))
    if order == 1:
        return terminal_order1_power(gen, delta, T, coeff, ens.state[:, -1],
                                     inner_paths=inner_paths, seed=seed)
    raise UnsupportedExpansion(f"expansion order must be 0 or 1, got {order}")


# remainder H --------------------------------------------------------------

def rescaled_time(times, eta, T: float) -> np.ndarray:
    """A_t = (T - t)/eta_t with broadcasting over paths."""
    return (T - np.asarray(times, dtype=float)) / np.asarray(eta, dtype=float)


def extract_H(y_values, gen: GeneratorModel, A) -> np.ndarray:
    """H = (Y - phi(A)) / (-phi'(A))."""
    A = np.asarray(A, dtype=float)
    if np.any(~(A > 0)):
        raise DomainError("A_t must be > 0 (times must stay below T)")
    ph = eval_phi(gen, A)
    d1 = eval_phi_derivs(gen, A, phi=ph)[0]
    return (np.asarray(y_values, dtype=float) - ph) / (-np.asarray(d1))


def reconstruct_Y(H, gen: GeneratorModel, A) -> np.ndarray:
    """Y = phi(A) - phi'(A) H."""
    A = np.asarray(A, dtype=float)
    ph = eval_phi(gen, A)
    d1 = eval_phi_derivs(gen, A, phi=ph)[0]
    return ph - np.asarray(d1) * np.asarray(H, dtype=float)


# constants ------------------------------------------------------------------

@dataclass
class ExpansionConstants:
    K: float
    kappa_star: float
    mu_star: float
    zeta_lo: float
    zeta_hi: float
    alpha: Optional[float]
    eta_sharp: float
    b_over_eta: float
    sigma_over_eta: float
    exact: bool

    def to_dict(self) -> dict:
        return asdict(self)


def expansion_constants(gen: GeneratorModel, coeff: CoefficientModel, T: float,
                        n_grid: int = 400, ens: Optional[PathEnsemble] = None,
                        safety: float = 1.1) -> ExpansionConstants:
    """kappa_star, mu_star, zeta bounds and the constant K.

    kappa is sampled on A in (0, T/eta_lo]. For custom_ito coefficients the
    sup norms are sampled along ``ens`` and multiplied by ``safety``.
    """
    A = np.geomspace(T * 1e-8, T / coeff.eta_lo, n_grid)
    k1 = np.asarray(eval_kappa(gen, 1, A), dtype=float)
    k2 = np.asarray(eval_kappa(gen, 2, A), dtype=float)
    if not (np.all(np.isfinite(k1)) and np.all(np.isfinite(k2))):
        raise UnboundedKappa("kappa is not finite on the sampled range")
    if gen.kind == "custom":
        m = max(4, n_grid // 10)
        for arr in (k1, k2):
            slope = np.polyfit(np.log(A[:m]), np.log(np.maximum(arr[:m], 1e-300)), 1)[0]
            if slope < -0.05:
                raise UnboundedKappa(f"kappa grows near zero (log-log slope {slope:.3g})")
    kappa_star = float(np.max(k1))
    norms = coeff.sup_norms(T, ens=ens, safety=safety)
    bo, so = norms["b_over_eta"], norms["sigma_over_eta"]
    mu_star = float(np.max(k1 * bo + k1 * np.abs(0.5 * k2 - 1.0) * so ** 2))
    zeta_hi = math.exp(T * mu_star)
    zeta_lo = math.exp(-T * mu_star)
    K = zeta_hi * coeff.eta_lo * (coeff.lambda_max + 0.5 * bo
                                  + 0.5 * (0.5 * kappa_star + 1.0) * so ** 2)
    return ExpansionConstants(K, kappa_star, mu_star, zeta_lo, zeta_hi, gen.alpha,
                              coeff.eta_sharp, bo, so, bool(norms["exact"]))


def sampled_K_integrand(gen: GeneratorModel, coeff: CoefficientModel,
                        ens: PathEnsemble, T: float) -> dict:
    """Brute-force sups of |mu| and of the K bracket along simulated paths."""
    mu_sup, br_sup = 0.0, 0.0
    for k, t in enumerate(ens.times):
        if T - t <= 0:
            continue
        eta = ens.eta[:, k]
        b, s = coeff.ito_coefficients(t, ens.state[:, k])
        A = (T - t) / eta
        k1 = np.asarray(eval_kappa(gen, 1, A))
        k2 = np.asarray(eval_kappa(gen, 2, A))
        mu = k1 * b / eta + k1 * (0.5 * k2 - 1.0) * (s / eta) ** 2
        br = ens.lam[:, k] + 0.5 * np.abs(b / eta) + 0.5 * (0.5 * k1 + 1.0) * (s / eta) ** 2
        mu_sup = max(mu_sup, float(np.max(np.abs(mu))))
        br_sup = max(br_sup, float(np.max(br)))
    return {"mu_sup": mu_sup, "bracket_sup": br_sup}


def verify_H_bound(H, times, gen: GeneratorModel, consts: ExpansionConstants,
                   T: float, eta_lo: float, A=None, window: float = 0.1,
                   slack: float = 2.0, discretization: float = 0.0) -> dict:
    """Report sup |H_t| / vartheta((T-t)/eta_lo) over the last ``window``
    fraction of the horizon, and the envelope 2K/zeta_lo it should respect.

    Report only: a flag marks ratios above slack * envelope, after allowing
    the stated discretisation contribution.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    times = np.asarray(times, dtype=float)
    mask = (times >= T * (1.0 - window)) & (times < T)
    envelope = 2.0 * consts.K / consts.zeta_lo
    if not np.any(mask):
        return {"window": window, "n_points": 0, "sup_ratio": 0.0, "envelope": envelope,
                "finite": True, "violation": False}
    tt = times[mask]
    theta = np.asarray(eval_vartheta(gen, (T - tt) / eta_lo))
    ratio = np.abs(H[:, mask]) / theta
    sup_ratio = float(np.max(ratio))
    out = {"window": window, "n_points": int(mask.sum()), "sup_ratio": sup_ratio,
           "envelope": envelope, "slack": slack, "discretization": discretization,
           "finite": bool(np.isfinite(sup_ratio))}
    if A is not None and gen.alpha is not None:
        A = np.atleast_2d(np.asarray(A, dtype=float))
        d1 = np.asarray(eval_phi_derivs(gen, A[:, mask])[0])
        out["sup_scaled_remainder"] = float(np.max(np.abs(d1 * H[:, mask])
                                                   / (T - tt) ** gen.alpha))
    allowed = slack * envelope + discretization / float(np.min(theta))
    out["allowed"] = allowed
    out["violation"] = bool(sup_ratio > allowed + 1e-12)
    return out
