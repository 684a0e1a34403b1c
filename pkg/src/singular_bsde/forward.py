"""Coefficient processes eta (with a = 1/eta) and lambda on a uniform grid.

Brownian increments come from a counter-based generator (Philox) keyed by
(seed, path). Increments are built hierarchically: a coarse layer of
``m`` steps followed by Brownian-bridge midpoint refinements. Two grids with
``n_steps`` differing by a power of two therefore see the same Brownian path,
and coarse increments equal sums of fine ones.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError

ETA_KINDS = ("deterministic", "latent", "custom_ito")


@dataclass(frozen=True)
class CoefficientModel:
    """Specification of eta and lambda, with the bounds required by A1.

    eta_kind:
      * ``deterministic``: eta = eta_fn(t), drift eta_prime(t), no volatility.
      * ``latent``: eta = psi(X) for an Ornstein-Uhlenbeck latent
        dX = mean_reversion (mean - X) dt + vol dW, X_0 = x0. The arctan
        transform is the standard instance.
      * ``custom_ito``: d eta = b_fn(t, eta) dt + sigma_fn(t, eta) dW from eta0,
        clipped into [eta_lo, eta_hi] (clip events are counted).

    lambda_fn is called as lambda_fn(t) or, if lambda_state, lambda_fn(t, eta).
    """

    eta_kind: str
    eta_lo: float
    eta_hi: float
    lambda_max: float = 0.0
    lambda_fn: Optional[Callable] = None
    lambda_state: bool = False
    eta_fn: Optional[Callable] = None
    eta_prime: Optional[Callable] = None
    psi: Optional[Callable] = None
    dpsi: Optional[Callable] = None
    d2psi: Optional[Callable] = None
    x0: float = 0.0
    mean_reversion: float = 0.0
    mean: float = 0.0
    vol: float = 1.0
    b_fn: Optional[Callable] = None
    sigma_fn: Optional[Callable] = None
    eta0: Optional[float] = None
    label: str = ""

    def __post_init__(self):
        if self.eta_kind not in ETA_KINDS:
            raise ConfigError(f"unknown eta kind {self.eta_kind!r}")
        if not (self.eta_lo > 0 and self.eta_hi >= self.eta_lo):
            raise ConfigError(f"need 0 < eta_lo <= eta_hi, got ({self.eta_lo}, {self.eta_hi})")
        if self.eta_kind != "deterministic" and not self.eta_hi > self.eta_lo:
            raise ConfigError("stochastic eta needs eta_lo < eta_hi")
        if not self.lambda_max >= 0:
            raise ConfigError("lambda_max must be >= 0")
        if self.eta_kind == "latent" and self.vol < 0:
            raise ConfigError("latent volatility must be >= 0")

    # constructors ---------------------------------------------------------

    @classmethod
    def constant(cls, eta: float = 1.0, lam: float = 0.0) -> "CoefficientModel":
        eta, lam = float(eta), float(lam)
        return cls("deterministic", eta, eta, lambda_max=lam,
                   lambda_fn=_const(lam), eta_fn=_const(eta), eta_prime=_const(0.0),
                   label=f"constant(eta={eta:g}, lambda={lam:g})")

    @classmethod
    def deterministic(cls, eta_fn, eta_prime=None, lam=0.0, horizon: float = 1.0,
                      bounds=None, lambda_max=None, label="deterministic"):
        """Deterministic eta(t) and lambda(t). Bounds are sampled on [0, horizon]
        unless given."""
        lam_fn = lam if callable(lam) else _const(float(lam))
        ts = np.linspace(0.0, horizon, 4001)
        if bounds is None:
            ev = np.array([eta_fn(t) for t in ts])
            bounds = (float(ev.min()), float(ev.max()))
        if lambda_max is None:
            lv = np.array([lam_fn(t) for t in ts])
            if np.any(lv < 0):
                raise ConfigError("lambda must be non-negative")
            lambda_max = float(lv.max())
        if eta_prime is None:
            eta_prime = _central_difference(eta_fn)
        return cls("deterministic", bounds[0], bounds[1], lambda_max=lambda_max,
                   lambda_fn=lam_fn, eta_fn=eta_fn, eta_prime=eta_prime, label=label)

    @classmethod
    def latent(cls, psi, dpsi, d2psi, eta_lo, eta_hi, x0=0.0, mean_reversion=0.0,
               mean=0.0, vol=1.0, lam=0.0, lambda_max=None, lambda_state=False,
               label="latent"):
        lam_fn, lambda_max = _lambda_setup(lam, lambda_max)
        return cls("latent", float(eta_lo), float(eta_hi), lambda_max=lambda_max,
                   lambda_fn=lam_fn, lambda_state=lambda_state, psi=psi, dpsi=dpsi,
                   d2psi=d2psi, x0=float(x0), mean_reversion=float(mean_reversion),
                   mean=float(mean), vol=float(vol), label=label)

    @classmethod
    def arctan(cls, eta_lo, eta_hi, x0=0.0, mean_reversion=0.0, mean=0.0, vol=1.0,
               lam=0.0, lambda_max=None, lambda_state=False):
        """eta = (eta_hi - eta_lo)/pi * arctan(X) + (eta_hi + eta_lo)/2."""
        if not (eta_lo > 0 and eta_hi > eta_lo):
            raise ConfigError(f"arctan transform needs 0 < eta_lo < eta_hi, "
                              f"got ({eta_lo}, {eta_hi})")
        amp = (eta_hi - eta_lo) / math.pi
        mid = 0.5 * (eta_hi + eta_lo)
        return cls.latent(lambda x: amp * np.arctan(x) + mid,
                          lambda x: amp / (1.0 + x * x),
                          lambda x: -2.0 * amp * x / (1.0 + x * x) ** 2,
                          eta_lo, eta_hi, x0, mean_reversion, mean, vol, lam,
                          lambda_max, lambda_state, label="arctan")

    @classmethod
    def custom_ito(cls, b_fn, sigma_fn, eta0, eta_lo, eta_hi, lam=0.0,
                   lambda_max=None, lambda_state=False):
        lam_fn, lambda_max = _lambda_setup(lam, lambda_max)
        if not eta_lo <= eta0 <= eta_hi:
            raise ConfigError("eta0 must lie in [eta_lo, eta_hi]")
        return cls("custom_ito", float(eta_lo), float(eta_hi), lambda_max=lambda_max,
                   lambda_fn=lam_fn, lambda_state=lambda_state, b_fn=b_fn,
                   sigma_fn=sigma_fn, eta0=float(eta0), label="custom_ito")

    # queries ----------------------------------------------------------------

    @property
    def is_deterministic(self) -> bool:
        return self.eta_kind == "deterministic" and not self.lambda_state

    @property
    def eta_sharp(self) -> float:
        return self.eta_hi / self.eta_lo

    def initial_state(self, n_paths: int) -> np.ndarray:
        if self.eta_kind == "latent":
            return np.full(n_paths, self.x0)
        if self.eta_kind == "custom_ito":
            return np.full(n_paths, self.eta0)
        return np.zeros(n_paths)

    def eta_of(self, t: float, state: np.ndarray) -> np.ndarray:
        if self.eta_kind == "deterministic":
            return np.full(np.shape(state), float(self.eta_fn(t)))
        if self.eta_kind == "latent":
            return np.asarray(self.psi(state), dtype=float)
        return np.asarray(state, dtype=float)

    def lambda_of(self, t: float, eta: np.ndarray) -> np.ndarray:
        if self.lambda_fn is None:
            return np.zeros(np.shape(eta))
        val = self.lambda_fn(t, eta) if self.lambda_state else self.lambda_fn(t)
        return np.broadcast_to(np.asarray(val, dtype=float), np.shape(eta)).copy()

    def step(self, t: float, state: np.ndarray, dw: np.ndarray, h: float):
        """One Euler-Maruyama step. Returns (new_state, number of clip events)."""
        if self.eta_kind == "deterministic":
            return state, 0
        if self.eta_kind == "latent":
            new = state + self.mean_reversion * (self.mean - state) * h + self.vol * dw
            return new, 0
        b = np.asarray(self.b_fn(t, state), dtype=float)
        s = np.asarray(self.sigma_fn(t, state), dtype=float)
        new = state + b * h + s * dw
        clipped = (new < self.eta_lo) | (new > self.eta_hi)
        return np.clip(new, self.eta_lo, self.eta_hi), int(clipped.sum())

    def ito_coefficients(self, t: float, state: np.ndarray):
        """Drift b^eta and volatility sigma^eta of eta at (t, state)."""
        state = np.asarray(state, dtype=float)
        if self.eta_kind == "deterministic":
            return (np.full(state.shape, float(self.eta_prime(t))), np.zeros(state.shape))
        if self.eta_kind == "latent":
            d1, d2 = self.dpsi(state), self.d2psi(state)
            drift_x = self.mean_reversion * (self.mean - state)
            return d1 * drift_x + 0.5 * d2 * self.vol ** 2, d1 * self.vol
        return (np.asarray(self.b_fn(t, state), dtype=float) * np.ones_like(state),
                np.asarray(self.sigma_fn(t, state), dtype=float) * np.ones_like(state))

    def sup_norms(self, horizon: float, ens: "PathEnsemble" = None,
                  safety: float = 1.1) -> dict:
        """Sup norms of b/eta and sigma/eta.

        Deterministic: dense time grid. Latent: dense grid over the whole real
        line via X = tan(theta), since b and sigma are functions of X only.
        custom_ito: sampled along ``ens`` and inflated by ``safety``.
        """
        if self.eta_kind == "deterministic":
            ts = np.linspace(0.0, horizon, 20001)
            b = np.array([self.eta_prime(t) for t in ts])
            e = np.array([self.eta_fn(t) for t in ts])
            return {"b_over_eta": float(np.max(np.abs(b / e))), "sigma_over_eta": 0.0,
                    "b": float(np.max(np.abs(b))), "sigma": 0.0, "exact": True}
        if self.eta_kind == "latent":
            th = np.linspace(-math.pi / 2, math.pi / 2, 200001)[1:-1]
            xs = np.tan(th)
            b, s = self.ito_coefficients(0.0, xs)
            e = self.eta_of(0.0, xs)
            return {"b_over_eta": float(np.max(np.abs(b / e))),
                    "sigma_over_eta": float(np.max(np.abs(s / e))),
                    "b": float(np.max(np.abs(b))), "sigma": float(np.max(np.abs(s))),
                    "exact": True}
        if ens is None:
            raise ConfigError("custom_ito sup norms need a simulated ensemble")
        bs, ss, rb, rs = 0.0, 0.0, 0.0, 0.0
        for k, t in enumerate(ens.times):
            b, s = self.ito_coefficients(t, ens.eta[:, k])
            bs = max(bs, float(np.max(np.abs(b))))
            ss = max(ss, float(np.max(np.abs(s))))
            rb = max(rb, float(np.max(np.abs(b / ens.eta[:, k]))))
            rs = max(rs, float(np.max(np.abs(s / ens.eta[:, k]))))
        return {"b_over_eta": safety * rb, "sigma_over_eta": safety * rs,
                "b": safety * bs, "sigma": safety * ss, "exact": False}


def _const(v):
    def fn(t, *_):
        return v
    return fn


def _central_difference(fn, step=1e-6):
    def d(t):
        return (fn(t + step) - fn(t - step)) / (2 * step)
    return d


def _lambda_setup(lam, lambda_max):
    if callable(lam):
        if lambda_max is None:
            raise ConfigError("a lambda function needs an explicit lambda_max")
        return lam, float(lambda_max)
    lam = float(lam)
    if lam < 0:
        raise ConfigError("lambda must be non-negative")
    return _const(lam), lam if lambda_max is None else float(lambda_max)


# Brownian increments -----------------------------------------------------

def _split_steps(n_steps: int):
    m, levels = n_steps, 0
    while m % 2 == 0:
        m //= 2
        levels += 1
    return m, levels


def path_rng(seed: int, path: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (seed, path, stream)."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF,
                    (path & 0xFFFFFFFFFF) | ((stream & 0xFFFFFF) << 40)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def brownian_increments(horizon: float, n_steps: int, n_paths: int, seed: int,
                        stream: int = 0, first_path: int = 0) -> np.ndarray:
    """(n_paths, n_steps) Brownian increments on a uniform grid.

    Path j only depends on (seed, first_path + j, stream), and refining by a
    factor 2 keeps all coarser partial sums.
    """
    if n_steps < 1 or n_paths < 1 or not horizon > 0:
        raise ConfigError("need horizon > 0, n_steps >= 1 and n_paths >= 1")
    m, levels = _split_steps(n_steps)
    out = np.empty((n_paths, n_steps))
    for j in range(n_paths):
        rng = path_rng(seed, first_path + j, stream)
        H = horizon / m
        dw = rng.standard_normal(m) * math.sqrt(H)
        for _ in range(levels):
            z = rng.standard_normal(dw.size) * (0.5 * math.sqrt(H))
            fine = np.empty(2 * dw.size)
            fine[0::2] = 0.5 * dw + z
            fine[1::2] = 0.5 * dw - z
            dw = fine
            H *= 0.5
        out[j] = dw
    return out


# ensembles ---------------------------------------------------------------

@dataclass
class PathEnsemble:
    times: np.ndarray
    dW: np.ndarray
    state: np.ndarray
    eta: np.ndarray
    a: np.ndarray
    lam: np.ndarray
    seed: int
    coeff: Optional[CoefficientModel] = None
    clip_count: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.eta.shape[0]

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def h(self) -> float:
        return self.horizon / self.n_steps

    def save(self, path) -> None:
        header = {"seed": self.seed, "horizon": self.horizon, "n_steps": self.n_steps,
                  "n_paths": self.n_paths, "clip_count": self.clip_count,
                  "eta_kind": self.coeff.eta_kind if self.coeff else None,
                  "label": self.coeff.label if self.coeff else None, **self.meta}
        np.savez(path, header=np.array(json.dumps(header, sort_keys=True)),
                 times=self.times, dW=self.dW, state=self.state, eta=self.eta,
                 a=self.a, lam=self.lam)

    @classmethod
    def load(cls, path, coeff: Optional[CoefficientModel] = None) -> "PathEnsemble":
        with np.load(path) as z:
            header = json.loads(str(z["header"]))
            return cls(z["times"], z["dW"], z["state"], z["eta"], z["a"], z["lam"],
                       seed=header["seed"], coeff=coeff,
                       clip_count=header.get("clip_count", 0),
                       meta={k: v for k, v in header.items()
                             if k not in ("seed", "horizon", "n_steps", "n_paths",
                                          "clip_count", "eta_kind", "label")})


def propagate(coeff: CoefficientModel, t0: float, state0: np.ndarray, dW: np.ndarray,
              h: float):
    """Run the coefficient dynamics from (t0, state0) along increments dW.

    Returns (state, eta, lam, clip_count) with shape (n_paths, n_steps + 1).
    """
    n_paths, n_steps = dW.shape
    state = np.empty((n_paths, n_steps + 1))
    state[:, 0] = state0
    clips = 0
    for k in range(n_steps):
        state[:, k + 1], c = coeff.step(t0 + k * h, state[:, k], dW[:, k], h)
        clips += c
    eta = np.empty_like(state)
    lam = np.empty_like(state)
    for k in range(n_steps + 1):
        t = t0 + k * h
        eta[:, k] = coeff.eta_of(t, state[:, k])
        lam[:, k] = coeff.lambda_of(t, eta[:, k])
    return state, eta, lam, clips


def simulate(coeff: CoefficientModel, horizon: float, n_steps: int, n_paths: int,
             seed: int) -> PathEnsemble:
    """Simulate eta, a = 1/eta and lambda on the uniform grid of [0, horizon]."""
    if not horizon > 0 or n_steps < 1 or n_paths < 1:
        raise ConfigError("need horizon > 0, n_steps >= 1, n_paths >= 1")
    times = np.linspace(0.0, horizon, n_steps + 1)
    h = horizon / n_steps
    dW = brownian_increments(horizon, n_steps, n_paths, seed)
    state, eta, lam, clips = propagate(coeff, 0.0, coeff.initial_state(n_paths), dW, h)
    return PathEnsemble(times, dW, state, eta, 1.0 / eta, lam, seed, coeff, clips)


def discrete_coefficients(ens: PathEnsemble):
    """Clamped (a_bar, lambda_bar) arrays with the A1 bounds."""
    coeff = ens.coeff
    a_max = 1.0 / coeff.eta_lo if coeff is not None else np.inf
    lam_max = coeff.lambda_max if coeff is not None else np.inf
    return np.clip(ens.a, 0.0, a_max), np.clip(ens.lam, 0.0, lam_max)
