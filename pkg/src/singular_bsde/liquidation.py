"""Optimal liquidation with a terminal constraint X_T = 0.

Minimise E int_0^T zeta |X'|^p + lambda |X|^p dt starting from x0. The value
is |x0|^p Y_0 where Y solves the singular BSDE with driver
f(y) = -(p-1) y |y|^(q-1) and eta = zeta^(q-1). The optimal position decays
at rate zeta^(1-q) Y^(q-1).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError
from .forward import CoefficientModel
from .generator import GeneratorModel
from .scheme import SchemeConfig, SchemeResult, solve_singular


_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class LiquidationProblem:
    """Position x0 over [0, T] with cost exponent p > 1.

    ``zeta`` is a CoefficientModel whose eta slot carries the impact
    coefficient zeta and whose lambda slot carries the risk weight lambda.
    """

    x0: float
    p: float
    T: float
    zeta: CoefficientModel

    def __post_init__(self):
        if not self.p > 1:
            raise ConfigError("p must be > 1")
        if not self.T > 0:
            raise ConfigError("T must be > 0")

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)


def map_to_bsde(prob: LiquidationProblem):
    """(GeneratorModel, CoefficientModel) for the liquidation BSDE."""
    q, p = prob.q, prob.p
    z = prob.zeta
    e = q - 1.0
    gen = GeneratorModel.power(q, scale=p - 1.0)
    gen = GeneratorModel(gen.kind, gen.f, gen.f1, gen.f2, gen.name, gen.q, p, None,
                         gen.scale, gen.quad_tol, gen.root_tol)
    lo, hi = z.eta_lo ** e, z.eta_hi ** e
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ConfigError("impact coefficient must be bounded")
    if z.eta_kind == "deterministic":
        zf, zp = z.eta_fn, z.eta_prime
        coeff = CoefficientModel("deterministic", lo, hi, z.lambda_max, z.lambda_fn,
                                 z.lambda_state, eta_fn=lambda t: zf(t) ** e,
                                 eta_prime=lambda t: e * zf(t) ** (e - 1.0) * zp(t),
                                 label=f"zeta^(q-1) of {z.label}")
    elif z.eta_kind == "latent":
        ps, d1, d2 = z.psi, z.dpsi, z.d2psi
        coeff = CoefficientModel(
            "latent", lo, hi, z.lambda_max, z.lambda_fn, z.lambda_state,
            psi=lambda x: ps(x) ** e,
            dpsi=lambda x: e * ps(x) ** (e - 1.0) * d1(x),
            d2psi=lambda x: e * ((e - 1.0) * ps(x) ** (e - 2.0) * d1(x) ** 2
                                 + ps(x) ** (e - 1.0) * d2(x)),
            x0=z.x0, mean_reversion=z.mean_reversion, mean=z.mean, vol=z.vol,
            label=f"zeta^(q-1) of {z.label}")
    else:
        raise ConfigError("liquidation supports deterministic or latent impact models")
    return gen, coeff


def unmap(gen: GeneratorModel, coeff: CoefficientModel) -> dict:
    """Recover p and the impact bounds from the BSDE data."""
    q = gen.q
    p = gen.p if gen.p is not None else q / (q - 1.0)
    e = 1.0 / (q - 1.0)
    return {"p": p, "zeta_lo": coeff.eta_lo ** e, "zeta_hi": coeff.eta_hi ** e}


def value(prob: LiquidationProblem, Y0: float) -> float:
    if Y0 < 0:
        raise ConfigError("Y0 must be >= 0")
    return abs(prob.x0) ** prob.p * Y0


@dataclass
class Trajectory:
    """Positions on [0, T]: the scheme grid followed by the closing segment."""

    times: np.ndarray
    X: np.ndarray
    Xdot: np.ndarray
    rate: np.ndarray
    Y: np.ndarray
    zeta: np.ndarray
    lam: np.ndarray
    n_scheme: int

    @property
    def cutoff_fraction(self) -> np.ndarray:
        """|X(T - delta)| / |x0| per path."""
        x0 = np.abs(self.X[:, 0])
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(x0 > 0, np.abs(self.X[:, self.n_scheme - 1]) / x0, 0.0)

    def to_csv(self, path, paths=(0,)) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "t", "X", "rate", "Y"])
            for j in paths:
                for k, t in enumerate(self.times):
                    w.writerow([j] + [f"{v:.17e}" for v in
                                      (t, self.X[j, k], self.rate[j, k], self.Y[j, k])])


def optimal_state(prob: LiquidationProblem, res: SchemeResult, gen: GeneratorModel,
                  n_close: int = 64) -> Trajectory:
    """Left-point exponential of the rate on the scheme grid, then the
    closing segment on (T - delta, T] at the rate implied by the expansion
    value, X = X(T - delta) ((T - t)/delta)^k with k = 1/(c (q - 1)).
    """
    q, T = prob.q, prob.T
    ens = res.ensemble
    delta = T - ens.horizon
    zeta = ens.eta ** (1.0 / (q - 1.0))
    Y = res.y_bar
    rate = zeta ** (1.0 - q) * np.abs(Y) ** (q - 1.0)
    h = ens.h
    log_x = np.zeros_like(Y)
    log_x[:, 1:] = -np.cumsum(rate[:, :-1] * h, axis=1)
    X = prob.x0 * np.exp(log_x)
    Xdot = -rate * X
    k = 1.0 / (gen.scale * (q - 1.0))
    u = delta * (1.0 - np.arange(1, n_close + 1) / n_close)      # T - t, ends at 0
    Xc = X[:, -1:]
    X_ext = Xc * (u / delta) ** k
    with np.errstate(divide="ignore"):
        Xdot_ext = -k * Xc * (u / delta) ** (k - 1.0) / delta
        rate_ext = np.where(u > 0, k / u, np.inf) * np.ones_like(Xc)
    eta_c = ens.eta[:, -1:]
    with np.errstate(divide="ignore"):
        Y_ext = np.where(u > 0, (gen.scale * (q - 1.0) * u / eta_c) ** (1.0 - prob.p),
                         np.inf)
    times = np.concatenate([ens.times, T - u])
    lam_c = ens.lam[:, -1:] * np.ones_like(X_ext)
    return Trajectory(times, np.hstack([X, X_ext]), np.hstack([Xdot, Xdot_ext]),
                      np.hstack([rate, rate_ext]), np.hstack([Y, Y_ext]),
                      np.hstack([zeta, zeta[:, -1:] * np.ones_like(X_ext)]),
                      np.hstack([ens.lam, lam_c]), ens.n_steps + 1)


def path_costs(prob: LiquidationProblem, times, X, Xdot, zeta, lam) -> np.ndarray:
    integrand = zeta * np.abs(Xdot) ** prob.p + lam * np.abs(X) ** prob.p
    return _trapezoid(integrand, times, axis=1)


def cost_mc(prob: LiquidationProblem, traj: Trajectory):
    """Mean trapezoidal cost over paths and its standard error."""
    c = path_costs(prob, traj.times, traj.X, traj.Xdot, traj.zeta, traj.lam)
    n = c.size
    se = float(np.std(c, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(np.mean(c)), se


def _bump(kind: str, s: np.ndarray):
    """Shape w(s) and derivative dw/ds on s = t/T in [0, 1], w(0) = w(1) = 0."""
    if kind == "symmetric":
        return 4.0 * s * (1 - s), 4.0 * (1 - 2 * s)
    if kind == "front_loaded":      # sells faster early: position lowered, peak at T/3
        c = -27.0 / 4.0
        return c * s * (1 - s) ** 2, c * (1 - s) * (1 - 3 * s)
    if kind == "back_loaded":       # sells later: position raised, peak at 2T/3
        c = 27.0 / 4.0
        return c * s * s * (1 - s), c * s * (2 - 3 * s)
    raise ConfigError(f"unknown perturbation {kind!r}")


PERTURBATIONS = ("symmetric", "front_loaded", "back_loaded")


def perturbed_cost(prob: LiquidationProblem, traj: Trajectory, kind: str,
                   eps: float = 0.1):
    """Cost of X + eps x0 w(t/T); the shapes vanish at 0 and T, so the
    perturbed control still starts at x0 and liquidates fully."""
    s = traj.times / prob.T
    w, dw = _bump(kind, s)
    X = traj.X + eps * prob.x0 * w
    Xdot = traj.Xdot + eps * prob.x0 * dw / prob.T
    c = path_costs(prob, traj.times, X, Xdot, traj.zeta, traj.lam)
    n = c.size
    return float(np.mean(c)), float(np.std(c, ddof=1) / math.sqrt(n)) if n > 1 else 0.0


def straight_line_cost(prob: LiquidationProblem, traj: Trajectory):
    """Cost of selling at constant speed, X = x0 (1 - t/T)."""
    X = prob.x0 * (1.0 - traj.times / prob.T) * np.ones_like(traj.X)
    Xdot = -prob.x0 / prob.T * np.ones_like(traj.X)
    c = path_costs(prob, traj.times, X, Xdot, traj.zeta, traj.lam)
    return float(np.mean(c))


@dataclass
class LiquidationRun:
    result: SchemeResult
    trajectory: Trajectory
    value: float
    cost: float
    stderr: float
    perturbed: dict
    straight_line: float

    @property
    def gap(self) -> float:
        return self.cost - self.value

    def summary(self) -> dict:
        return {"value": self.value, "Y0": self.result.y0, "mc_cost": self.cost,
                "gap": self.gap, "std_error": self.stderr,
                "relative_gap": self.gap / self.value if self.value else 0.0,
                "cutoff_fraction_mean": float(np.mean(self.trajectory.cutoff_fraction)),
                "terminal_position_max": float(np.max(np.abs(self.trajectory.X[:, -1]))),
                "perturbed_costs": self.perturbed, "straight_line_cost": self.straight_line}


def liquidate(prob: LiquidationProblem, delta: float, n_steps: int, n_paths: int = 1,
              seed: int = 0, eps: float = 0.1, estimator=None) -> LiquidationRun:
    gen, coeff = map_to_bsde(prob)
    res = solve_singular(gen, coeff, prob.T, SchemeConfig(delta, n_steps, estimator),
                         0, n_paths, seed)
    traj = optimal_state(prob, res, gen)
    cost, se = cost_mc(prob, traj)
    pert = {k: perturbed_cost(prob, traj, k, eps)[0] for k in PERTURBATIONS}
    return LiquidationRun(res, traj, value(prob, res.y0), cost, se, pert,
                          straight_line_cost(prob, traj))
