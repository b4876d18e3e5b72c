"""``levyexp`` command line: validate configs and run experiments.

Exit status: 0 all checks passed, 1 a tolerance was breached, 2 the config or
output directory is unusable, 3 an estimate was flagged for low effective
sample size (report still written).
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import asymptotics as asy
from .acceptance import Suite
from .cbre import CbreParams, EnvironmentSpec, classify_cbre, survival_probability, zero_environment_survival
from .config import ExperimentConfig, serialize, validate_config
from .errors import ConfigError, FitError, LevyError
from .levy_core import (
    RegimeKind,
    ZeroJumps,
    classify_regime,
    exponent_domain,
    jumps_from_params,
    laplace_exponent,
    laplace_exponent_deriv,
    mean_increment,
    triplet_hash,
)
from .path_sim import exp_functional, simulate_path, write_paths_binary
from .report import SCHEMA_VERSION, atomic_write, dumps, write_csv

EXIT_OK, EXIT_BREACH, EXIT_CONFIG, EXIT_ESS = 0, 1, 2, 3

# default tolerances per regime: (rate relative, poly absolute, pin rate?)
REGIME_TOLERANCES = {
    RegimeKind.CRITICAL: (None, 0.1, False),
    RegimeKind.WEAKLY_SUBCRITICAL: (0.05, 0.3, False),
    RegimeKind.INTERMEDIATELY_SUBCRITICAL: (None, 0.15, True),
    RegimeKind.STRONGLY_SUBCRITICAL: (0.05, 0.2, False),
}


@dataclass
class Outcome:
    results: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)  # file name -> (header, rows)
    checks: list = field(default_factory=list)  # (name, passed, detail)
    ess_flags: list = field(default_factory=list)
    summary: list = field(default_factory=list)
    blobs: dict = field(default_factory=dict)

    def check(self, name, passed, detail=""):
        self.checks.append({"name": name, "passed": bool(passed), "detail": detail})


# ---------------------------------------------------------------------------
# experiment kinds
# ---------------------------------------------------------------------------


def _exponent(cfg: ExperimentConfig, out: Outcome):
    trip = cfg.triplet()
    dom = exponent_domain(trip)
    rows = []
    for lam in cfg.get("grid.lambda"):
        phi = laplace_exponent(trip, lam)
        if dom.interior(lam):
            d1, d2 = laplace_exponent_deriv(trip, lam, 1), laplace_exponent_deriv(trip, lam, 2)
        else:
            d1 = d2 = math.nan
        rows.append((lam, phi, d1, d2))
    out.tables["exponent.csv"] = (["lambda", "phi", "dphi", "d2phi"], rows)
    out.results.update(domain=str(dom), mean_increment=mean_increment(trip), triplet_hash=triplet_hash(trip))
    if "beta" in cfg.entries:
        out.results["regime"] = classify_regime(trip, cfg.get("beta")).as_dict()
    out.summary.append(f"exponent table on {len(rows)} points; domain {dom}")


def _simulate(cfg: ExperimentConfig, out: Outcome, sim):
    trip = cfg.triplet()
    path = simulate_path(trip, sim)
    vals = np.atleast_2d(path.values)
    header = ["t"] + [f"path_{i}" for i in range(vals.shape[0])]
    out.tables["paths.csv"] = (header, [(t, *vals[:, k]) for k, t in enumerate(path.times)])
    out.results.update(meta=path.meta, n_paths=vals.shape[0], n_points=path.times.size,
                       final_mean=float(vals[:, -1].mean()), running_min_mean=float(vals.min(axis=1).mean()))
    if "alpha" in cfg.entries:
        a = np.atleast_1d(exp_functional(path, cfg.get("alpha")).value)
        out.tables["functional.csv"] = (["path", "A_t"], list(enumerate(a)))
        out.results["A_t_mean"] = float(a.mean())
    if cfg.get("simulate.binary", False):
        import io

        buf = io.BytesIO()
        write_paths_binary(path, buf, sim.seed, sim.step_h, triplet_hash(trip))
        out.blobs["paths.bin"] = buf.getvalue()
    out.summary.append(f"simulated {vals.shape[0]} path(s) with {path.times.size} grid points")


def _curve_rows(curve):
    return [(r["t"], r["mean"], r["stderr"], r["ess"], int(r["flagged"])) for r in curve.rows()]


CURVE_HEADER = ["t", "mean", "stderr", "ess", "flagged"]


def _fit_checks(cfg, out, curve, rate, poly, kind, label):
    """Fit a curve against the predicted law and record tolerance checks."""
    if kind is RegimeKind.SUPERCRITICAL or kind not in REGIME_TOLERANCES:
        return
    rate_tol, poly_tol, pin = REGIME_TOLERANCES[kind]
    rate_tol = cfg.get("check.rate_rel", rate_tol)
    poly_tol = cfg.get("check.poly_abs", poly_tol)
    try:
        fit = asy.fit_decay(curve, pin_rate=rate if pin else None)
    except FitError as exc:
        out.results[f"{label}_fit"] = None
        out.summary.append(f"{label}: no fit ({exc})")
        return
    out.results[f"{label}_fit"] = fit.as_dict()
    out.results[f"{label}_predicted"] = {"rate": rate, "poly_exponent": poly}
    if rate_tol is not None and not pin:
        ok = abs(fit.rate - rate) <= rate_tol * abs(rate) if rate else abs(fit.rate) <= rate_tol
        out.check(f"{label}: rate", ok, f"fitted {fit.rate:.6g} vs predicted {rate:.6g} (rel tol {rate_tol:g})")
    if poly_tol is not None:
        ok = abs(fit.poly_exponent - poly) <= poly_tol
        out.check(f"{label}: polynomial exponent", ok, f"fitted {fit.poly_exponent:.6g} vs predicted {poly:.6g} (abs tol {poly_tol:g})")


def _tilt(cfg, regime):
    t = cfg.get("tilt", "auto")
    if t == "auto":
        return regime.tilt
    if t == "none":
        return None
    return float(t)


def _firstpassage(cfg, out, sim):
    rep = asy.first_passage_asymptotics(cfg.triplet(), cfg.get("fp.x"), cfg.get("grid.t"), sim)
    out.results["first_passage"] = {k: v for k, v in rep.as_dict().items() if k != "curve"}
    out.tables["survival.csv"] = (CURVE_HEADER, _curve_rows(rep.curve))
    kind = RegimeKind(rep.regime)
    rate_tol = cfg.get("check.rate_rel", 0.1)
    poly_tol = cfg.get("check.poly_abs", 0.1 if kind is RegimeKind.CRITICAL else 0.3)
    if kind is RegimeKind.WEAKLY_SUBCRITICAL:
        out.check("first passage: rate", abs(rep.fit.rate - rep.predicted_rate) <= rate_tol * abs(rep.predicted_rate),
                  f"fitted {rep.fit.rate:.6g} vs {rep.predicted_rate:.6g}")
    out.check("first passage: polynomial exponent", abs(rep.fit.poly_exponent - rep.predicted_poly) <= poly_tol,
              f"fitted {rep.fit.poly_exponent:.6g} vs {rep.predicted_poly:g}")
    if rep.curve.flagged.any():
        out.ess_flags.append("first passage curve")
    out.summary.append(f"first passage below -{rep.x:g}: {rep.regime}, fitted exponent {rep.fit.poly_exponent:.4f}")


def _fspec(cfg):
    return asy.fspec_from_params({k: v for k, v in cfg.prefixed("f.").items()})


def _coefficient(cfg, out, trip, fspec, regime, sim):
    which = cfg.get("coeff.which", "none")
    if which == "none":
        return
    alpha, beta = cfg.get("alpha"), cfg.get("beta")
    xs, T = cfg.get("grid.x"), cfg.get("coeff.horizon")
    if which == "D2":
        est = asy.coeff_D2(trip, fspec, alpha, xs, T, sim)
    elif which == "D3":
        est = asy.coeff_D3(trip, fspec, alpha, regime.rho, xs, cfg.get("grid.y"), T, sim)
    elif which == "D4":
        est = asy.coeff_D4(trip, alpha, beta, xs, T, sim, K=fspec.K)
    elif which == "regime5":
        est = asy.coeff_regime5(trip, alpha, beta, sim, K=fspec.K)
    else:
        est = asy.coeff_c_rho(trip, regime.rho)
    out.results["coefficient"] = est.as_dict()
    out.check(f"{which}: positive", est.value > 0, f"value {est.value:.6g}")
    if est.prelimit:
        out.check(f"{which}: pre-limit nondecreasing in x", est.monotone_within(2.0), ", ".join(f"{float(v):.6g}" for v in est.prelimit))
        out.tables["coefficient.csv"] = (["x", "prelimit", "stderr"], list(zip(est.x_grid, est.prelimit, est.prelimit_stderr)))
    if "low_ess" in est.flags:
        out.ess_flags.append(which)
    out.summary.append(f"{which}: {est.value:.6g} +- {est.stderr:.2g}; predicted constant {est.predicted_constant:.6g}")


def _asymptotics(cfg, out, sim):
    trip = cfg.triplet()
    fspec = _fspec(cfg)
    alpha, beta = cfg.get("alpha"), cfg.get("beta")
    regime = classify_regime(trip, beta)
    cond = asy.check_conditions(fspec, trip, beta, alpha)
    out.results.update(regime=regime.as_dict(), conditions=cond.as_dict(), triplet_hash=triplet_hash(trip))
    curve = asy.estimate_expectation_curve(trip, fspec, alpha, cfg.get("grid.t"), sim, tilt=_tilt(cfg, regime))
    out.tables["curve.csv"] = (CURVE_HEADER, _curve_rows(curve))
    out.results["curve_meta"] = curve.meta
    viol = curve.monotone_violations(2.0)
    out.check("curve nonincreasing within 2 se", not viol, f"violations at indices {viol}")
    if curve.flagged.any():
        out.ess_flags.append("expectation curve")
    _fit_checks(cfg, out, curve, regime.rate, regime.poly_exponent, regime.kind, "curve")
    _coefficient(cfg, out, trip, fspec, regime, sim)
    out.summary.insert(0, f"regime {regime.kind.value}: predicted rate {regime.rate:.6g}, exponent {regime.poly_exponent:g}")


def _cbre(cfg, out, sim):
    env_jumps = jumps_from_params(cfg.prefixed("env.jump.")) if cfg.prefixed("env.jump.") else ZeroJumps()
    env = EnvironmentSpec(cfg.get("env.beta_drift", 0.0), cfg.get("env.sigma", 0.0), env_jumps)
    params = CbreParams(cfg.get("cbre.x0"), cfg.get("cbre.c"), cfg.get("cbre.alpha"), env)
    reg = classify_cbre(params)
    t_grid = np.asarray(cfg.get("grid.t"))
    surv = survival_probability(params, t_grid, sim, tilt=_tilt(cfg, reg.regime))
    out.results["classification"] = reg.as_dict()
    out.tables["survival.csv"] = (["t", "p", "stderr"], [(r["t"], r["p"], r["stderr"]) for r in surv.rows()])
    ok = bool(np.all((surv.p >= 0) & (surv.p <= 1)))
    out.check("survival in [0, 1]", ok)
    curve = surv.as_curve()
    viol = curve.monotone_violations(2.0)
    out.check("survival nonincreasing within 2 se", not viol, f"violations at indices {viol}")
    deterministic = env.sigma == 0 and isinstance(env.jumps, ZeroJumps)
    if deterministic and abs(reg.regime.mean) == 0.0 and params.c > 0:
        closed = zero_environment_survival(params.x0, params.c, params.alpha, t_grid)
        err = float(np.max(np.abs(surv.p - closed)))
        tol = cfg.get("check.closed_form_abs", 1e-6)
        out.results["closed_form_max_abs_err"] = err
        out.check("zero environment closed form", err <= tol, f"max abs error {err:.3g} (tol {tol:g})")
    elif (t_grid > 0).sum() >= 6:
        pos = t_grid > 0
        sub = asy.ExpectationCurve(t_grid[pos], surv.p[pos], surv.stderr[pos], curve.ess[pos], curve.flagged[pos])
        _fit_checks(cfg, out, sub, reg.regime.rate, reg.regime.poly_exponent, reg.regime.kind, "survival")
    if curve.flagged.any() and not deterministic:
        out.ess_flags.append("survival curve")
    out.summary.insert(0, f"{reg.label}: K = {reg.K:.6g}; {reg.constant_formula}")


def _acceptance(cfg, out, sim):
    suite = Suite(seed=cfg.seed, workers=sim.workers)
    nums = cfg.get("acceptance.criteria") or list(range(1, 13))
    results = suite.run(nums)
    out.results["criteria"] = [{k: v for k, v in r.as_dict().items() if k != "runtime_s"} for r in results]
    out.tables["acceptance.csv"] = (["criterion", "passed"], [(r.number, int(r.passed)) for r in results])
    for r in results:
        out.check(f"criterion {r.number}: {r.title}", r.passed)
        out.summary.append(f"{r.line()}")


HANDLERS = {
    "exponent": lambda c, o, s: _exponent(c, o),
    "simulate": _simulate,
    "firstpassage": _firstpassage,
    "asymptotics": _asymptotics,
    "cbre": _cbre,
    "acceptance": _acceptance,
}


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------


def run_experiment(config: ExperimentConfig, out_dir, workers: int | None = None, sequential: bool = False,
                   seed_override: int | None = None, stderr=sys.stderr) -> int:
    """Run one experiment and write report.json, CSV tables and summary.txt into ``out_dir``."""
    if seed_override is not None:
        config = config.with_(seed=int(seed_override))
    over = {}
    if sequential:
        over["workers"] = 1
    elif workers:
        over["workers"] = int(workers)
    try:
        os.makedirs(out_dir, exist_ok=True)
        if not os.access(out_dir, os.W_OK):
            raise OSError(f"output directory {out_dir} is not writable")
    except OSError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_CONFIG
    sim = config.sim(**over)
    out = Outcome()
    try:
        HANDLERS[config.kind](config, out, sim)
    except (LevyError, ValueError) as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_CONFIG
    status = EXIT_OK
    if not all(c["passed"] for c in out.checks):
        status = EXIT_BREACH
    if out.ess_flags:
        status = EXIT_ESS
    write_tables = config.get("report.csv", True)
    report = {
        "schema": SCHEMA_VERSION,
        "library_version": __version__,
        "kind": config.kind,
        "seed": config.seed,
        "config": config.entries,
        "config_sha256": config.digest(),
        "results": out.results,
        "checks": out.checks,
        "ess_flags": out.ess_flags,
        "exit_status": status,
        "tables": sorted(out.tables) if write_tables else [],
    }
    if write_tables:
        for name, (header, rows) in sorted(out.tables.items()):
            write_csv(os.path.join(out_dir, name), header, rows)
    for name, blob in out.blobs.items():
        atomic_write(os.path.join(out_dir, name), blob)
    atomic_write(os.path.join(out_dir, "report.json"), dumps(report))
    lines = [f"levyexp {__version__}: {config.kind} (seed {config.seed})", *out.summary, ""]
    lines += [f"[{'PASS' if c['passed'] else 'FAIL'}] {c['name']}" + (f": {c['detail']}" if c["detail"] else "") for c in out.checks]
    if out.ess_flags:
        lines.append("low effective sample size: " + ", ".join(out.ess_flags))
    lines.append(f"exit status {status}")
    atomic_write(os.path.join(out_dir, "summary.txt"), "\n".join(lines) + "\n")
    return status


def _read(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="levyexp", description="Exponential functionals of Lévy processes: experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--workers", type=int, default=None)
    run.add_argument("--sequential", action="store_true", help="single process, fixed reduction order")
    run.add_argument("--seed-override", type=int, default=None)
    val = sub.add_parser("validate", help="check a config and print its canonical form")
    val.add_argument("--config", required=True)
    args = ap.parse_args(argv)
    try:
        text = _read(args.config)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = validate_config(text)
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(f"{args.config}: {d}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        sys.stdout.write(serialize(cfg))
        return EXIT_OK
    if args.seed_override is not None and not 0 <= args.seed_override < 2**64:
        print("error: --seed-override must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    code = run_experiment(cfg, args.out, args.workers, args.sequential, args.seed_override)
    print(_read(os.path.join(args.out, "summary.txt")) if code != EXIT_CONFIG else "", end="")
    return code


if __name__ == "__main__":
    sys.exit(main())
