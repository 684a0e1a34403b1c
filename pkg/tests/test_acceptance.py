"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run under pytest (lines are also repeated in the terminal summary) or
directly with ``python tests/test_acceptance.py``.
"""
import math
import time

import numpy as np
from singular_bsde.analysis import (Problem, convergence_sweep, delta_sweep,
                                    oracle_deterministic, reference_stochastic,
                                    terminal_residuals)
from singular_bsde.expansion import (expansion_constants, extract_H, reconstruct_Y,
                                     verify_H_bound)
from singular_bsde.forward import CoefficientModel, simulate
from singular_bsde.generator import (BUILTIN_CUSTOM, GeneratorModel, builtin, eval_G,
                                     eval_kappa, eval_phi, eval_phi_derivs, eval_varpi,
                                     exponential_comparison, f_array)
from singular_bsde.liquidation import LiquidationProblem, liquidate
from singular_bsde.scheme import (CondExpEstimator, SchemeConfig, backward_solve,
                                  implicit_solve, solve_singular)

RESULTS = {}


def record(key, ok, detail, runtime=None, budget=None):
    within = budget is None or runtime <= budget
    status = "PASS" if ok and within else "FAIL"
    timing = f" [{runtime:.1f}s / {budget:.0f}s]" if budget is not None else ""
    line = f"{status} {key}: {detail}{timing}"
    RESULTS[key] = line
    print(line)
    return ok and within


def _rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.abs(a)))


# 1 -------------------------------------------------------------------------------

def test_criterion_1_closed_forms():
    t0 = time.perf_counter()
    x = np.geomspace(1e-4, 1.0, 25)
    gens = [GeneratorModel.power(q) for q in (2.5, 3.0, 4.0)]
    gens += [GeneratorModel.exponential(a) for a in (0.5, 1.0, 2.0)]
    worst = 0.0
    for gen in gens:
        num = gen.as_custom()
        pairs = [(eval_G(gen, x), eval_G(num, x)), (eval_phi(gen, x), eval_phi(num, x))]
        pairs += list(zip(eval_phi_derivs(gen, x), eval_phi_derivs(num, x)))
        pairs += [(eval_kappa(gen, i, x), eval_kappa(num, i, x)) for i in range(3)]
        pairs.append((eval_varpi(gen, x), eval_varpi(num, x)))
        worst = max(worst, max(_rel(a, b) for a, b in pairs))
    dt = time.perf_counter() - t0
    assert record("criterion 1 closed-form agreement", worst <= 1e-8,
                  f"max relative deviation {worst:.2e} (tol 1e-8)", dt, 5)


# 2 -------------------------------------------------------------------------------

def test_criterion_2_profile_inequalities():
    t0 = time.perf_counter()
    gens = [GeneratorModel.power(3.0), GeneratorModel.power(1.5),
            GeneratorModel.exponential(1.0)]
    gens += [builtin(name) for name in BUILTIN_CUSTOM]
    gens += [GeneratorModel.custom(lambda y: -y * y, lambda y: -2.0 * y, lambda y: -2.0,
                                   name="square"),
             GeneratorModel.custom(lambda y: -y * y - y ** 4,
                                   lambda y: -2.0 * y - 4.0 * y ** 3,
                                   lambda y: -2.0 - 12.0 * y * y, name="square_quartic")]
    x = np.geomspace(1e-4, 2.0, 30)
    bad = []
    for gen in gens:
        d1, d2, _ = (np.asarray(v) for v in eval_phi_derivs(gen, x))
        k = np.array([eval_kappa(gen, i, x) for i in range(3)])
        if not (np.all(d1 < 0) and np.all(d2 > 0)):
            bad.append(f"{gen.name}: derivative signs")
        if not (np.all(k[0] >= 0) and np.all(np.diff(k, axis=0) >= -1e-9 * np.abs(k[1:]))):
            bad.append(f"{gen.name}: kappa order")
    checked = 0
    for gen in gens:
        for beta in (0.5, 1.0, 2.0):
            for inc in (True, False):
                res = exponential_comparison(gen, beta, 1.0, inc, 40)
                if res["hypothesis"]:
                    checked += 1
                    if not res["bound_holds"]:
                        bad.append(f"{gen.name}: comparison beta={beta}")
    dt = time.perf_counter() - t0
    assert record("criterion 2 profile inequalities", not bad,
                  f"{len(gens)} generators; comparison bounds on {checked} "
                  f"configurations meeting the hypothesis (40 points each); "
                  f"{'violations: ' + ', '.join(bad) if bad else 'no violations'}", dt, 5)


# 3 -------------------------------------------------------------------------------

def test_criterion_3_implicit_step():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240601)
    n = 1_000_000
    worst_res, in_range, lip = 0.0, True, True
    for gen in (GeneratorModel.power(3.0), GeneratorModel.exponential(1.0)):
        h = rng.uniform(1e-4, 0.5, n)
        a = rng.uniform(0.0, 2.0, n)
        lam = rng.uniform(0.0, 2.0, n)
        m1 = rng.uniform(0.0, 20.0, n)
        m2 = m1 + rng.normal(0.0, 1.0, n)
        m2 = np.abs(m2)
        y1, _ = implicit_solve(gen, h, a, lam, m1)
        y2, _ = implicit_solve(gen, h, a, lam, m2)
        for y, m in ((y1, m1), (y2, m2)):
            r = np.abs(y - h * a * f_array(gen, y) - m - h * lam) / np.maximum(1.0, m)
            worst_res = max(worst_res, float(r.max()))
            in_range &= bool(np.all((y >= 0) & (y <= m + h * lam + 1e-12)))
        lip &= bool(np.all(np.abs(y1 - y2) <= np.abs(m1 - m2) + 1e-10))
    dt = time.perf_counter() - t0
    ok = worst_res <= 1e-10 and in_range and lip
    assert record("criterion 3 implicit-step contract", ok,
                  f"2 x 10^6 solves per target, max scaled residual {worst_res:.1e}, "
                  f"range {'ok' if in_range else 'violated'}, "
                  f"1-Lipschitz {'ok' if lip else 'violated'}", dt, 30)


# 4 -------------------------------------------------------------------------------

def test_criterion_4_scheme_invariants():
    t0 = time.perf_counter()
    gen3, gexp = GeneratorModel.power(3.0), GeneratorModel.exponential(1.0)
    runs = [
        (gen3, CoefficientModel.constant(), SchemeConfig(0.1, 90), 1),
        (gexp, CoefficientModel.constant(1.0, 2.0), SchemeConfig(0.05, 95), 1),
        (gen3, CoefficientModel.deterministic(lambda t: 1 + t, lambda t: 1.0, 0.5),
         SchemeConfig(0.1, 45), 1),
        (gen3, CoefficientModel.arctan(0.5, 2.0, lam=1.0), SchemeConfig(0.1, 30), 2000),
        (gexp, CoefficientModel.arctan(0.5, 2.0, vol=0.5),
         SchemeConfig(0.1, 30, CondExpEstimator("nested", inner_paths=8)), 300),
    ]
    ok = True
    for gen, coeff, cfg, n in runs:
        d = solve_singular(gen, coeff, 1.0, cfg, n_paths=n, seed=1).diagnostics
        ok &= bool(d["nonnegative"] and d["upper_bound_ok"])
    mono = True
    for gen in (gen3, gexp):
        ens = simulate(CoefficientModel.constant(1.0, 0.5), 0.9, 45, 1, 0)
        for lo_v, hi_v in ((0.5, 0.6), (2.0, 5.0), (0.0, 1e-3)):
            lo = backward_solve(gen, ens, SchemeConfig(0.1, 45), np.array([lo_v]))
            hi = backward_solve(gen, ens, SchemeConfig(0.1, 45), np.array([hi_v]))
            mono &= bool(np.all(hi.y_bar >= lo.y_bar))
    dt = time.perf_counter() - t0
    assert record("criterion 4 scheme invariants", ok and mono,
                  f"{len(runs)} runs bounds {'ok' if ok else 'violated'}, "
                  f"terminal comparison {'ok' if mono else 'violated'}", dt)


# 5 -------------------------------------------------------------------------------

DELTAS = [0.4, 0.2, 0.1, 0.05]


def test_criterion_5_delta_rate():
    """Literal setting: eta = 1, lambda = 0, error at t = 0 against Delta."""
    t0 = time.perf_counter()
    cases = ((GeneratorModel.power(3.0), 0.5), (GeneratorModel.exponential(1.0), 1.0))
    slopes, ok = [], True
    for gen, alpha in cases:
        rep = delta_sweep(Problem(gen, CoefficientModel.constant(), 1.0), DELTAS, 1e-3)
        s = rep.slopes["delta_error_t0"]["slope"]
        slopes.append(f"{gen.name} {s:.3f} (target {alpha} ± 0.1)")
        ok &= abs(s - alpha) <= 0.1
    dt = time.perf_counter() - t0
    # not a criterion line: the terminal residual on a time-dependent eta,
    # where the order-0 value is not exact and the Delta^alpha rate is visible
    lin = CoefficientModel.deterministic(lambda t: 1 + t, lambda t: 1.0, horizon=1.0)
    for gen, alpha in cases:
        s = terminal_residuals(Problem(gen, lin, 1.0), DELTAS)["slope"]
        tag = "PASS" if abs(s - alpha) <= 0.1 else "FAIL"
        print(f"  supplementary {tag}: terminal residual slope, eta = 1 + t, "
              f"{gen.name}: {s:.3f} (target {alpha} ± 0.1)")
    assert record("criterion 5 delta-rate reproduction", ok, "; ".join(slopes), dt, 120)


# 6 -------------------------------------------------------------------------------

def test_criterion_6_order1_rate():
    t0 = time.perf_counter()
    lin = CoefficientModel.deterministic(lambda t: 1 + t, lambda t: 1.0, horizon=1.0)
    res = terminal_residuals(Problem(GeneratorModel.power(2.0), lin, 1.0, order=1), DELTAS)
    s = res["slope"]
    dt = time.perf_counter() - t0
    assert record("criterion 6 order-1 expansion rate", abs(s - 1.0) <= 0.15,
                  f"residual slope {s:.3f} (target 1 ± 0.15)", dt, 120)


# 7 -------------------------------------------------------------------------------

def test_criterion_7_bound_envelope():
    t0 = time.perf_counter()
    prob = Problem(GeneratorModel.power(3.0), CoefficientModel.constant(), 1.0)
    rep = convergence_sweep(prob, [0.02, 0.01, 0.005, 0.0025, 0.00125],
                            {"kind": "fixed", "delta": 0.1})
    cal = rep.calibration
    emitted = all(all(k in r for k in ("delta_term", "h_term", "psi1_term", "psi2_term"))
                  for r in rep.rows)
    ok = cal["envelope_holds"] and cal["terms_nonnegative"] and emitted
    dt = time.perf_counter() - t0
    ratios = ", ".join(f"{r['error_t0'] / r['bound']:.3f}" for r in rep.rows)
    assert record("criterion 7 error-bound envelope", ok,
                  f"C={cal['C']:.3g}, C3={cal['C3']:.3g}; error/bound per level {ratios}; "
                  f"terms non-negative {cal['terms_nonnegative']}", dt)


# 8 -------------------------------------------------------------------------------

def test_criterion_8_H_extraction():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    gen = GeneratorModel.power(3.0)
    A = rng.uniform(1e-3, 2.0, 10_000)
    Y = rng.uniform(0.0, 50.0, 10_000)
    rt = float(np.max(np.abs(reconstruct_Y(extract_H(Y, gen, A), gen, A) - Y)
                      / np.maximum(1.0, Y)))
    T = 1.0
    times = np.linspace(0.0, 0.99, 199)
    zero = oracle_deterministic(gen, CoefficientModel.constant(), T, times)
    H0 = float(np.max(np.abs(extract_H(zero.values, gen, T - times))))
    coeff = CoefficientModel.constant(1.0, 1.0)
    orc = oracle_deterministic(gen, coeff, T, times)
    H = extract_H(orc.values[None, :], gen, (T - times)[None, :])
    rep = verify_H_bound(H, times, gen, expansion_constants(gen, coeff, T), T, 1.0,
                         window=0.1, slack=2.0, discretization=orc.error_estimate)
    ok = rt <= 1e-12 and H0 <= 1e-12 and rep["finite"] and not rep["violation"]
    dt = time.perf_counter() - t0
    assert record("criterion 8 H extraction", ok,
                  f"round trip {rt:.1e}; lambda=0 max|H| {H0:.1e}; lambda=1 sup ratio "
                  f"{rep['sup_ratio']:.3g} vs envelope {rep['envelope']:.3g} "
                  f"(slack {rep['slack']:g})", dt)


# 9 -------------------------------------------------------------------------------

def test_criterion_9_liquidation():
    t0 = time.perf_counter()
    prob = LiquidationProblem(1.0, 1.5, 1.0, CoefficientModel.constant())
    run = liquidate(prob, 0.01, 9900)
    target = 2 ** -0.5
    consistent = abs(run.cost - run.value) <= 0.02 * run.value
    near_target = (abs(run.value - target) <= 0.02 * target
                   and abs(run.cost - target) <= 0.02 * target)
    worse = all(c > run.value for c in run.perturbed.values())
    dt = time.perf_counter() - t0
    detail = (f"value {run.value:.5f}, MC cost {run.cost:.5f} (gap ok: {consistent}); "
              f"within 2% of 2^-1/2: {near_target}; perturbed "
              + ", ".join(f"{k} {v:.4f}" for k, v in run.perturbed.items()))
    assert record("criterion 9 liquidation consistency", consistent and near_target and worse,
                  detail, dt, 60)


# 10 ------------------------------------------------------------------------------

def test_criterion_10_stochastic_smoke():
    t0 = time.perf_counter()
    gen = GeneratorModel.power(3.0)
    coeff = CoefficientModel.arctan(0.5, 2.0, lam=1.0)
    est = CondExpEstimator("regression", degree=3)
    res = solve_singular(gen, coeff, 1.0, SchemeConfig(0.1, 36, est), n_paths=10_000,
                         seed=2024)
    d = res.diagnostics
    ref = reference_stochastic(gen, coeff, 1.0, 36, 0.1, 10_000, 2024, est)
    ratio = ref.extra["self_consistency_ratio"]
    ok = bool(d["nonnegative"] and d["upper_bound_ok"] and np.isfinite(res.y0)
              and math.isfinite(ratio))
    dt = time.perf_counter() - t0
    assert record("criterion 10 stochastic smoke", ok,
                  f"Y0 {res.y0:.5f}, invariants ok, self-consistency ratio {ratio:.3f} "
                  f"(proxy only, no rate asserted)", dt)


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn()
            except AssertionError:
                pass
