"""Command-line entry point.

    singular-bsde <command> CONFIG [--out DIR] [--seed N] [--threads N] [-v|-q]

Commands: solve, sweep, expansion-check, liquidate, audit-assumptions.
Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (Problem, _jsonable, convergence_sweep, delta_sweep,
                       oracle_deterministic)
from .config import build_coefficients, build_generator, load_file, resolve
from .errors import ConfigError, SingularBSDEError
from .expansion import expansion_constants, extract_H, verify_H_bound
from .generator import audit_assumptions
from .liquidation import LiquidationProblem, liquidate
from .scheme import CondExpEstimator, SchemeConfig, solve_singular

log = logging.getLogger("singular_bsde")

OUT_ENV = "SINGULAR_BSDE_OUT"
ZERO_TOL = 1e-12      # |H| below this counts as zero (round-off in phi)


def _estimator(sc):
    est = sc.get("estimator") if sc else None
    if est is None:
        return None
    return CondExpEstimator(est["kind"], est["degree"], est["inner_paths"])


def _scheme_cfg(sc) -> SchemeConfig:
    return SchemeConfig(sc["delta"], sc["n_steps"], _estimator(sc), sc["newton_tol"],
                        sc["newton_max_iter"])


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


# subcommands ---------------------------------------------------------------

def run_solve(cfg: dict, out: Path, threads: int = 1) -> dict:
    gen = build_generator(cfg["generator"])
    T = cfg["horizon"]
    coeff = build_coefficients(cfg["coefficients"], T)
    sc = cfg["scheme"]
    res = solve_singular(gen, coeff, T, _scheme_cfg(sc), cfg["expansion"]["order"],
                         sc["n_paths"], cfg["seed"], cfg["expansion"]["inner_paths"])
    res.to_csv(out / "solve.csv")
    d = res.diagnostics
    summary = {"Y0": res.y0, "n_steps": res.n_steps, "n_paths": res.y_bar.shape[0],
               "nonnegative": d["nonnegative"], "upper_bound_ok": d["upper_bound_ok"],
               "max_newton_iterations": max(d["newton_iterations"]),
               "estimator": d["estimator"], "clip_count": d["clip_count"]}
    print(f"Y0 = {res.y0!r}")
    return summary


def run_sweep(cfg: dict, out: Path, threads: int = 1) -> dict:
    gen = build_generator(cfg["generator"])
    T = cfg["horizon"]
    coeff = build_coefficients(cfg["coefficients"], T)
    a = cfg["analysis"]
    prob = Problem(gen, coeff, T, cfg["expansion"]["order"],
                   _estimator(cfg.get("scheme")), beta=a["beta"])
    if a["mode"] == "h":
        rep = convergence_sweep(prob, a["h_list"], a["delta_rule"], a["n_paths"],
                                cfg["seed"], threads)
    else:
        rep = delta_sweep(prob, a["delta_list"], a["h"], a["n_paths"], cfg["seed"], threads)
    rep.to_csv(out / "sweep.csv")
    rep.to_json(out / "sweep.json")
    for name, fit in sorted(rep.slopes.items()):
        print(f"slope {name}: {fit['slope']!r}")
    if rep.calibration.get("calibrated"):
        print(f"envelope holds: {rep.calibration['envelope_holds']}")
    return {"slopes": rep.slopes, "calibration": rep.calibration, "flags": rep.flags}


def run_expansion_check(cfg: dict, out: Path, threads: int = 1) -> dict:
    gen = build_generator(cfg["generator"])
    T = cfg["horizon"]
    coeff = build_coefficients(cfg["coefficients"], T)
    sc, ex = cfg["scheme"], cfg["expansion"]
    source = ex["source"]
    if source == "auto":
        source = "oracle" if coeff.is_deterministic else "scheme"
    delta, N = sc["delta"], sc["n_steps"]
    times = np.linspace(0.0, T - delta, N + 1)
    if source == "oracle":
        if not coeff.is_deterministic:
            raise ConfigError("expansion.source: oracle needs deterministic coefficients")
        orc = oracle_deterministic(gen, coeff, T, times, cutoff_eps=delta / 100.0)
        Y = orc.values[None, :]
        eta = np.array([coeff.eta_fn(t) for t in times])[None, :]
        disc = orc.error_estimate
        ens = None
    else:
        res = solve_singular(gen, coeff, T, _scheme_cfg(sc), ex["order"], sc["n_paths"],
                             cfg["seed"], ex["inner_paths"])
        half = solve_singular(gen, coeff, T, SchemeConfig(delta, max(1, N // 2),
                                                          _estimator(sc)),
                              ex["order"], sc["n_paths"], cfg["seed"], ex["inner_paths"])
        Y, eta, ens = res.y_bar, res.ensemble.eta, res.ensemble
        disc = abs(res.y0 - half.y0)
    A = (T - times)[None, :] / eta
    H = extract_H(Y, gen, A)
    consts = expansion_constants(gen, coeff, T, ens=ens)
    rep = verify_H_bound(H, times, gen, consts, T, coeff.eta_lo, A=A, window=ex["window"],
                         slack=ex["slack"], discretization=disc)
    rep.update(source=source, max_abs_H=float(np.max(np.abs(H))),
               identically_zero=bool(np.max(np.abs(H)) <= ZERO_TOL),
               constants=consts.to_dict())
    with open(out / "expansion_H.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "mean_H", "max_abs_H"])
        for k, t in enumerate(times):
            w.writerow([f"{t:.17e}", f"{float(np.mean(H[:, k])):.17e}",
                        f"{float(np.max(np.abs(H[:, k]))):.17e}"])
    _write_json(out / "expansion_check.json", rep)
    print(f"sup |H|/vartheta on window: {rep['sup_ratio']!r} "
          f"(envelope 2K/zeta = {rep['envelope']!r})")
    print(f"max |H| = {rep['max_abs_H']!r}")
    return rep


def run_liquidate(cfg: dict, out: Path, threads: int = 1) -> dict:
    liq = cfg["liquidation"]
    T = cfg["horizon"]
    zeta = build_coefficients({"eta": liq["zeta"], "lambda": liq["lambda"]}, T,
                              path="liquidation.zeta")
    prob = LiquidationProblem(liq["x0"], liq["p"], T, zeta)
    run = liquidate(prob, liq["delta"], liq["n_steps"], liq["n_paths"], cfg["seed"],
                    liq["perturbation_eps"])
    run.trajectory.to_csv(out / "trajectory.csv")
    summary = run.summary()
    _write_json(out / "liquidation.json", summary)
    print(f"value = {summary['value']!r}")
    print(f"mc cost = {summary['mc_cost']!r} (std error {summary['std_error']!r})")
    return summary


def run_audit(cfg: dict, out: Path, threads: int = 1) -> dict:
    gen = build_generator(cfg["generator"])
    a = cfg["audit"]
    rep = audit_assumptions(gen, a["eps"], a["varsigma"], a["eta_sharp"], a["grid_size"])
    _write_json(out / "audit.json", rep.to_dict())
    for line in rep.lines():
        print(line)
    return {"a5_pass": rep.a5_pass, "a6_pass": rep.a6_pass, "blowup": rep.blowup}


COMMANDS = {"solve": run_solve, "sweep": run_sweep,
            "expansion-check": run_expansion_check, "liquidate": run_liquidate,
            "audit-assumptions": run_audit}


# plumbing -----------------------------------------------------------------

def _module_of(exc: BaseException) -> str:
    mod = "cli"
    tb = exc.__traceback__
    while tb is not None:
        fn = tb.tb_frame.f_code.co_filename
        if "singular_bsde" in fn:
            mod = Path(fn).stem
        tb = tb.tb_next
    return mod


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="singular-bsde", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", help="YAML or JSON config (a run manifest also works)")
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--threads", type=int, default=1, help="max worker threads")
        sp.add_argument("-v", "--verbose", action="count", default=0)
        sp.add_argument("-q", "--quiet", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose > 1 else
                                                logging.INFO if args.verbose else
                                                logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        raw = load_file(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            raw = dict(raw, seed=args.seed)
        cfg = resolve(raw, args.command)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out = Path(args.out or cfg.get("output_dir") or os.environ.get(OUT_ENV) or "out")
        out.mkdir(parents=True, exist_ok=True)
        log.info("running %s into %s", args.command, out)
        summary = COMMANDS[args.command](cfg, out, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (SingularBSDEError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical error in {_module_of(exc)}: {exc}", file=sys.stderr)
        log.debug("".join(traceback.format_exception(exc)))
        return 2
    files = sorted(p for p in out.iterdir() if p.is_file() and p.name != "manifest.json")
    manifest = {"tool_version": __version__, "command": args.command, "config": cfg,
                "seed": cfg["seed"], "threads": args.threads,
                "wall_clock_seconds": time.time() - started,
                "diagnostics": summary,
                "outputs": {p.name: _sha256(p) for p in files}}
    _write_json(out / "manifest.json", manifest)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
