import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singular_bsde.errors import ConfigError, DomainError
from singular_bsde.forward import CoefficientModel, simulate
from singular_bsde.generator import GeneratorModel, builtin
from singular_bsde.scheme import (CondExpEstimator, SchemeConfig, backward_solve,
                                  estimate_cond_exp, implicit_solve, implicit_step,
                                  solve_singular)

POWER3 = GeneratorModel.power(3.0)
EXP1 = GeneratorModel.exponential(1.0)

# root of y + 0.1 y^3 = 1, frozen from 200 bisection halvings on [0, 1]
CUBIC_ROOT = 0.9216989942046787


# implicit step -----------------------------------------------------------------

def test_cubic_step_frozen_oracle():
    y = implicit_step(POWER3, 0.1, 1.0, 0.0, 1.0)
    assert y == pytest.approx(CUBIC_ROOT, abs=1e-10)
    assert abs(y + 0.1 * y ** 3 - 1.0) < 1e-12


@pytest.mark.parametrize("gen", [POWER3, EXP1, builtin("sinh")], ids=str)
def test_zero_target(gen):
    assert implicit_step(gen, 0.3, 2.0, 0.0, 0.0) == 0.0


def test_linear_case():
    assert implicit_step(POWER3, 0.2, 0.0, 1.5, 0.7) == pytest.approx(0.7 + 0.2 * 1.5)


def test_vectorised_shapes():
    m = np.linspace(0, 5, 12).reshape(3, 4)
    y, _ = implicit_solve(EXP1, 0.05, 1.0, 0.5, m)
    assert y.shape == (3, 4)


def test_negative_target_rejected():
    with pytest.raises(DomainError):
        implicit_step(POWER3, 0.1, 1.0, 0.0, -1.0)


def test_large_targets_exponential():
    m = np.array([1e3, 1e5])
    y, _ = implicit_solve(EXP1, 1e-3, 1.0, 0.0, m)
    assert np.all(np.isfinite(y)) and np.all(y <= m)
    assert np.allclose(y - 1e-3 * (-np.expm1(y)), m, rtol=1e-12)


@settings(max_examples=200, deadline=None)
@given(h=st.floats(1e-4, 1.0), a=st.floats(0.0, 5.0), lam=st.floats(0.0, 3.0),
       m1=st.floats(0.0, 50.0), m2=st.floats(0.0, 50.0),
       q=st.sampled_from([1.5, 2.0, 3.0, 4.0]))
def test_implicit_step_properties(h, a, lam, m1, m2, q):
    gen = GeneratorModel.power(q)
    y1 = implicit_step(gen, h, a, lam, m1)
    y2 = implicit_step(gen, h, a, lam, m2)
    for y, m in ((y1, m1), (y2, m2)):
        assert 0.0 <= y <= m + h * lam + 1e-12
        assert abs(y - h * a * gen.f(y) - m - h * lam) <= 1e-10 * max(1.0, m)
    assert abs(y1 - y2) <= abs(m1 - m2) + 1e-10


# conditional expectations --------------------------------------------------------

@pytest.mark.parametrize("kind", ["passthrough", "regression", "nested"])
def test_constants_reproduced(kind):
    coeff = CoefficientModel.constant() if kind == "passthrough" else \
        CoefficientModel.arctan(0.5, 2.0)
    ens = simulate(coeff, 1.0, 10, 200, seed=0)
    est = CondExpEstimator(kind, 3, 4)
    out = estimate_cond_exp(est, ens, 3, np.full(200, 2.5))
    assert np.allclose(out, 2.5, rtol=0, atol=1e-12)


def test_regression_deterministic_returns_mean():
    ens = simulate(CoefficientModel.constant(), 1.0, 10, 50, seed=0)
    out = estimate_cond_exp(CondExpEstimator("regression", 3), ens, 2, np.full(50, 1.25))
    assert np.allclose(out, 1.25)


def test_regression_in_span():
    ens = simulate(CoefficientModel.arctan(0.5, 2.0), 1.0, 10, 300, seed=2)
    vals = ens.eta[:, 4]
    diag = {}
    out = estimate_cond_exp(CondExpEstimator("regression", 2), ens, 4, vals, diag)
    assert np.allclose(out, vals, atol=1e-10)
    assert diag["condition_numbers"]


def test_passthrough_rejects_dispersion():
    ens = simulate(CoefficientModel.arctan(0.5, 2.0), 1.0, 10, 20, seed=2)
    with pytest.raises(DomainError):
        estimate_cond_exp(CondExpEstimator("passthrough"), ens, 0, ens.eta[:, 1])


def test_unknown_estimator():
    with pytest.raises(ConfigError):
        CondExpEstimator("kernel")


# backward recursion ---------------------------------------------------------------

def test_zero_terminal_zero_solution():
    ens = simulate(CoefficientModel.constant(), 0.9, 9, 1, 0)
    res = backward_solve(POWER3, ens, SchemeConfig(0.1, 9), np.zeros(1))
    assert np.all(res.y_bar == 0.0)


def test_no_driver_sum_of_lambda():
    ens = simulate(CoefficientModel.constant(1.0, 0.4), 0.9, 9, 1, 0)
    N, h = 9, 0.1
    res = backward_solve(POWER3, ens, SchemeConfig(0.1, N), np.array([1.0]),
                         coefficients=(np.zeros((1, N + 1)), np.full((1, N + 1), 0.4)))
    expect = 1.0 + (N - np.arange(N + 1)) * h * 0.4
    assert np.allclose(res.y_bar[0], expect, rtol=0, atol=1e-13)


def test_order0_terminal_values():
    cfg = SchemeConfig(0.1, 9)
    res = solve_singular(POWER3, CoefficientModel.constant(), 1.0, cfg)
    assert res.terminal[0] == pytest.approx(0.2 ** -0.5, rel=1e-14)
    assert res.terminal[0] == pytest.approx(2.23607, abs=1e-5)
    res = solve_singular(EXP1, CoefficientModel.constant(), 1.0, SchemeConfig(0.25, 3))
    assert res.terminal[0] == pytest.approx(-math.log(1 - math.exp(-0.25)), rel=1e-14)
    assert res.terminal[0] == pytest.approx(1.5086915494, abs=1e-10)


def test_converges_to_closed_form():
    errs = []
    for N in (90, 900, 9000):
        res = solve_singular(POWER3, CoefficientModel.constant(), 1.0, SchemeConfig(0.1, N))
        errs.append(abs(res.y0 - 2 ** -0.5))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 2e-3


def test_single_interval():
    res = solve_singular(POWER3, CoefficientModel.constant(), 1.0, SchemeConfig(0.5, 1))
    assert res.y_bar.shape == (1, 2)
    assert res.y_bar[0, 0] == pytest.approx(implicit_step(POWER3, 0.5, 1.0, 0.0, 1.0))


def test_invariants_and_csv(tmp_path):
    coeff = CoefficientModel.arctan(0.5, 2.0, lam=1.0)
    res = solve_singular(POWER3, coeff, 1.0, SchemeConfig(0.1, 18), n_paths=300, seed=4)
    d = res.diagnostics
    assert d["nonnegative"] and d["upper_bound_ok"]
    assert d["estimator"] == "regression"
    res.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert len(lines) == 18 + 2
    assert "e-01" in lines[1] or "e+00" in lines[1]


def test_terminal_comparison_monotone():
    ens = simulate(CoefficientModel.constant(1.0, 0.5), 0.8, 16, 1, 0)
    lo = backward_solve(EXP1, ens, SchemeConfig(0.2, 16), np.array([1.0]))
    hi = backward_solve(EXP1, ens, SchemeConfig(0.2, 16), np.array([1.3]))
    assert np.all(hi.y_bar >= lo.y_bar)


def test_reproducible_stochastic():
    coeff = CoefficientModel.arctan(0.5, 2.0)
    a = solve_singular(POWER3, coeff, 1.0, SchemeConfig(0.1, 9), n_paths=100, seed=8)
    b = solve_singular(POWER3, coeff, 1.0, SchemeConfig(0.1, 9), n_paths=100, seed=8)
    assert np.array_equal(a.y_bar, b.y_bar)


def test_delta_must_be_below_horizon():
    with pytest.raises(ConfigError):
        solve_singular(POWER3, CoefficientModel.constant(), 1.0, SchemeConfig(1.0, 4))
