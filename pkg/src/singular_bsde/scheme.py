"""Implicit backward Euler recursion for the (regularised) BSDE.

Each step solves  y - h a f(y) = m + h lambda  where m estimates the
conditional expectation of the next layer. The map F(y) = y - h a f(y) is
increasing and convex with F' >= 1, so Newton started at the upper end of
the bracket [0, m + h lambda] decreases monotonically to the root.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (ConfigError, DomainError, NoConvergence, SingularBSDEError,
                     SingularRegression)
from .forward import (CoefficientModel, PathEnsemble, brownian_increments,
                      discrete_coefficients, simulate)
from .generator import GeneratorModel, f1_array, f_array

ESTIMATOR_KINDS = ("passthrough", "regression", "nested")


def implicit_solve(gen: GeneratorModel, h, a_bar, lambda_bar, m, tol: float = 1e-12,
                   max_iter: int = 100):
    """Vectorised root of y - h a f(y) = m + h lambda.

    Returns (y, iterations). Entries where Newton stalls are finished by
    bisection on the maintained bracket.
    """
    h, a_bar, lambda_bar, m = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (h, a_bar, lambda_bar, m)))
    shape = h.shape
    h, a_bar, lambda_bar, m = (np.ravel(v) for v in (h, a_bar, lambda_bar, m))
    target = m + h * lambda_bar
    if np.any(target < 0) or np.any(h < 0) or np.any(a_bar < 0):
        raise DomainError("implicit step needs h, a_bar >= 0 and m + h*lambda >= 0")
    ha = h * a_bar
    y = target.astype(float).copy()
    lo = np.zeros_like(y)
    hi = y.copy()
    iters = np.zeros(y.shape, dtype=int)
    active = np.ones(y.shape, dtype=bool)
    for _ in range(max_iter):
        idx = np.nonzero(active)
        if idx[0].size == 0:
            break
        ya = y[idx]
        res = ya - ha[idx] * f_array(gen, ya) - target[idx]
        done = np.abs(res) <= tol
        # the root lies below iterates with res > 0 and above those with res < 0
        hi[idx] = np.where(res > 0, np.minimum(hi[idx], ya), hi[idx])
        lo[idx] = np.where(res < 0, np.maximum(lo[idx], ya), lo[idx])
        deriv = 1.0 - ha[idx] * f1_array(gen, ya)
        with np.errstate(invalid="ignore", divide="ignore"):
            y_new = ya - res / deriv
        bad = ~np.isfinite(y_new) | (y_new < lo[idx]) | (y_new > hi[idx])
        y_new = np.where(bad, 0.5 * (lo[idx] + hi[idx]), y_new)
        stalled = np.abs(y_new - ya) <= 4e-16 * np.maximum(np.abs(ya), 1e-300)
        y[idx] = np.where(done, ya, y_new)
        iters[idx] += (~done).astype(int)
        finished = done | stalled
        active[idx] = ~finished
    if np.any(active):
        # bisection fallback
        idx = np.nonzero(active)
        l, u = lo[idx], hi[idx]
        t, k = target[idx], ha[idx]
        for _ in range(200):
            mid = 0.5 * (l + u)
            r = mid - k * f_array(gen, mid) - t
            l = np.where(r < 0, mid, l)
            u = np.where(r >= 0, mid, u)
            if np.all(u - l <= 4e-16 * np.maximum(u, 1e-300)):
                break
        y[idx] = 0.5 * (l + u)
        iters[idx] += 200
        r = np.abs(y[idx] - k * f_array(gen, y[idx]) - t)
        if np.any(r > max(tol, 1e-9) * np.maximum(1.0, t)):
            j = int(np.argmax(r))
            raise NoConvergence("implicit step did not converge",
                                (float(l[j]), float(u[j])))
    return y.reshape(shape), iters.reshape(shape)


def implicit_step(gen: GeneratorModel, h: float, a_bar: float, lambda_bar: float,
                  m: float, tol: float = 1e-12, max_iter: int = 100) -> float:
    """Unique y >= 0 with y - h a_bar f(y) = m + h lambda_bar."""
    y, _ = implicit_solve(gen, h, a_bar, lambda_bar, m, tol, max_iter)
    return float(y)


# conditional expectations -----------------------------------------------

@dataclass(frozen=True)
class CondExpEstimator:
    """How E[next layer | F_{t_i}] is approximated.

    ``passthrough`` is exact for deterministic coefficients. ``regression``
    projects on polynomials of the standardised eta. ``nested`` re-simulates
    one step from each outer state and interpolates the next layer in eta.
    """

    kind: str = "passthrough"
    degree: int = 3
    inner_paths: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise ConfigError(f"unknown estimator {self.kind!r}")
        if self.degree < 0:
            raise ConfigError("regression degree must be >= 0")
        if self.inner_paths < 1:
            raise ConfigError("inner_paths must be >= 1")


def _regress(x: np.ndarray, values: np.ndarray, degree: int, diag: Optional[dict]):
    n = values.size
    sd = float(np.std(x))
    scale = max(abs(float(np.mean(x))), 1.0)
    if sd <= 1e-12 * scale or n < 2:
        deg = 0
        z = np.zeros_like(x)
    else:
        deg = min(degree, n - 1)
        z = (x - np.mean(x)) / sd
    while True:
        X = np.vander(z, deg + 1, increasing=True)
        coef, _, rank, sv = np.linalg.lstsq(X, values, rcond=None)
        if rank == deg + 1:
            break
        if deg == 0:
            raise SingularRegression("regression design is empty")
        if diag is not None:
            diag.setdefault("degree_fallbacks", 0)
            diag["degree_fallbacks"] += 1
        deg -= 1
    if diag is not None:
        cond = float(sv[0] / sv[-1]) if sv.size and sv[-1] > 0 else float("inf")
        diag.setdefault("condition_numbers", []).append(cond)
    fit = X @ coef
    return np.clip(fit, np.min(values), np.max(values))


def estimate_cond_exp(est: CondExpEstimator, ens: PathEnsemble, i: int, values,
                      diag: Optional[dict] = None) -> np.ndarray:
    """Estimate E_{t_i}[values] per path, where values live at t_{i+1}."""
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise DomainError(f"non-finite values at step {i + 1}")
    if est.kind == "passthrough":
        spread = float(np.max(values) - np.min(values)) if values.size else 0.0
        if spread > 1e-9 * max(1.0, float(np.max(np.abs(values)))):
            raise DomainError("passthrough estimator needs path-independent values "
                              f"(spread {spread:g} at step {i + 1})")
        return values.copy()
    if est.kind == "regression":
        return _regress(ens.eta[:, i], values, est.degree, diag)
    # nested Monte Carlo: one-step inner transitions from each outer state
    coeff = ens.coeff
    h = ens.h
    n = values.size
    order = np.argsort(ens.eta[:, i + 1])
    xs, ys = ens.eta[order, i + 1], values[order]
    dW = brownian_increments(h, 1, n * est.inner_paths, est.seed + 7919 * (i + 1),
                             stream=1)[:, 0] if h > 0 else np.zeros(n * est.inner_paths)
    st0 = np.repeat(ens.state[:, i], est.inner_paths)
    st1, _ = coeff.step(ens.times[i], st0, dW, h)
    eta1 = coeff.eta_of(ens.times[i + 1], st1)
    inner = np.interp(eta1, xs, ys)
    return inner.reshape(n, est.inner_paths).mean(axis=1)


# backward recursion -------------------------------------------------------

@dataclass(frozen=True)
class SchemeConfig:
    delta: float
    n_steps: int
    estimator: Optional[CondExpEstimator] = None
    newton_tol: float = 1e-12
    newton_max_iter: int = 100

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigError("delta must be > 0")
        if self.n_steps < 1:
            raise ConfigError("n_steps must be >= 1")

    def estimator_for(self, coeff: CoefficientModel) -> CondExpEstimator:
        if self.estimator is not None:
            return self.estimator
        if coeff is None or coeff.is_deterministic:
            return CondExpEstimator("passthrough")
        return CondExpEstimator("regression", degree=3)


@dataclass
class SchemeResult:
    times: np.ndarray
    y_bar: np.ndarray
    terminal: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    horizon: Optional[float] = None
    delta: Optional[float] = None
    ensemble: Optional[PathEnsemble] = None

    @property
    def y0(self) -> float:
        return float(np.mean(self.y_bar[:, 0]))

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    def summary(self, quantiles=(0.05, 0.5, 0.95)) -> list:
        rows = []
        for k, t in enumerate(self.times):
            col = self.y_bar[:, k]
            rows.append([k, float(t), float(np.mean(col))]
                        + [float(v) for v in np.quantile(col, quantiles)])
        return rows

    def to_csv(self, path, quantiles=(0.05, 0.5, 0.95)) -> None:
        header = ["step", "time", "mean"] + [f"q{int(round(100 * q)):02d}" for q in quantiles]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in self.summary(quantiles):
                w.writerow([row[0]] + [f"{v:.17e}" for v in row[1:]])


def backward_solve(gen: GeneratorModel, ens: PathEnsemble, cfg: SchemeConfig,
                   terminal, coefficients=None, check_tol: float = 1e-9) -> SchemeResult:
    """Run the recursion from the terminal layer back to t_0 = 0.

    ``coefficients`` optionally overrides (a_bar, lambda_bar) arrays.
    """
    terminal = np.broadcast_to(np.asarray(terminal, dtype=float), (ens.n_paths,)).copy()
    if np.any(terminal < 0) or not np.all(np.isfinite(terminal)):
        raise DomainError("terminal values must be finite and non-negative")
    a_bar, lam_bar = coefficients if coefficients is not None else discrete_coefficients(ens)
    est = cfg.estimator_for(ens.coeff)
    N, h = ens.n_steps, ens.h
    y = np.empty((ens.n_paths, N + 1))
    y[:, N] = terminal
    diag = {"estimator": est.kind, "newton_iterations": [], "clip_count": ens.clip_count}
    for i in range(N - 1, -1, -1):
        try:
            m = estimate_cond_exp(est, ens, i, y[:, i + 1], diag)
            m = np.maximum(m, 0.0)
            y[:, i], it = implicit_solve(gen, h, a_bar[:, i], lam_bar[:, i], m,
                                         cfg.newton_tol, cfg.newton_max_iter)
        except SingularBSDEError as exc:
            raise type(exc)(f"step {i}: {exc}") from exc
        diag["newton_iterations"].append(int(it.max()))
    diag["newton_iterations"].reverse()
    lam_max = ens.coeff.lambda_max if ens.coeff is not None else float(np.max(lam_bar))
    upper = np.max(terminal) + (ens.horizon - ens.times) * lam_max + check_tol
    diag["nonnegative"] = bool(np.all(y >= 0))
    diag["upper_bound_ok"] = bool(np.all(y.max(axis=0) <= upper))
    diag["upper_bound_margin"] = float(np.min(upper - y.max(axis=0)))
    return SchemeResult(ens.times, y, terminal, diag, ens.horizon, None, ens)


def solve_singular(gen: GeneratorModel, coeff: CoefficientModel, T: float,
                   cfg: SchemeConfig, expansion_order: int = 0, n_paths: int = 1,
                   seed: int = 0, inner_paths: int = 64) -> SchemeResult:
    """Cut the horizon at T - delta, build the expansion terminal, run the scheme."""
    from .expansion import terminal_value

    if not 0 < cfg.delta < T:
        raise ConfigError(f"delta must lie in (0, T), got {cfg.delta}")
    if coeff.is_deterministic:
        n_paths = 1 if cfg.estimator is None or cfg.estimator.kind == "passthrough" \
            else n_paths
    ens = simulate(coeff, T - cfg.delta, cfg.n_steps, n_paths, seed)
    xi = terminal_value(gen, coeff, ens, T, cfg.delta, expansion_order,
                        inner_paths=inner_paths, seed=seed)
    res = backward_solve(gen, ens, cfg, xi)
    res.horizon = T
    res.delta = cfg.delta
    res.diagnostics["expansion_order"] = expansion_order
    return res
