"""End-to-end acceptance suite: twelve numbered checks with fixed sizes and tolerances.

Each ``criterion_N`` returns a :class:`CriterionResult`; expensive curves that
several checks share are kept in a cache keyed by name, so running the suite
in order simulates each of them once.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from . import asymptotics as asy
from .cbre import (
    CbreParams,
    classify_cbre,
    environment_for_drift,
    ode_residual,
    survival_probability,
    u_transform,
    zero_environment_survival,
)
from .levy_core import (
    CompoundPoisson,
    GaussianSize,
    LevyTriplet,
    PointMass,
    RegimeKind,
    TemperedStable,
    TwoSidedExponential,
    ZeroJumps,
    brownian,
    classify_regime,
    esscher,
    laplace_exponent,
    laplace_exponent_deriv,
)
from .path_sim import IncrementSampler, PathSample, SimConfig, exp_functional_inf, run_batches, sum_batches

SQRT2 = math.sqrt(2.0)
CANONICAL_A = (-1.0, 0.0, 1.0, 2.0, 3.0)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    details: dict = field(default_factory=dict)
    runtime_s: float = 0.0
    budget_s: float | None = None

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number:2d}: {self.title} ({self.runtime_s:.1f} s)"

    def as_dict(self):
        return {
            "number": self.number,
            "title": self.title,
            "passed": self.passed,
            "runtime_s": self.runtime_s,
            "budget_s": self.budget_s,
            "details": _plain(self.details),
        }


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


class Suite:
    """Holds shared settings and the cache of expensive intermediate results."""

    def __init__(self, seed: int = 20240601, workers: int = 1):
        self.seed = seed
        self.workers = workers
        self.cache: dict = {}

    def cfg(self, **kw) -> SimConfig:
        base = dict(seed=self.seed, workers=self.workers, batch_size=50_000)
        base.update(kw)
        return SimConfig(**base)

    def cached(self, key, build):
        if key not in self.cache:
            self.cache[key] = build()
        return self.cache[key]

    # -- shared curves ----------------------------------------------------

    def regime_curve(self, a: float, n: int, t_grid, tilt=None, fspec=None):
        fspec = fspec or asy.PowerTail(1.0, 1.0, 1.0)
        key = ("curve", a, n, tuple(t_grid), tilt, repr(fspec))
        return self.cached(key, lambda: asy.estimate_expectation_curve(
            brownian(a, SQRT2), fspec, 1.0, t_grid, self.cfg(step_h=0.5, n_paths=n), tilt=tilt))

    def critical_curve(self):
        return self.regime_curve(0.0, 1_000_000, np.arange(10.0, 200.1, 5.0))

    def weak_curve(self):
        return self.regime_curve(1.0, 400_000, np.arange(10.0, 100.1, 5.0), tilt=0.5)

    def intermediate_curve(self):
        return self.regime_curve(2.0, 400_000, np.arange(10.0, 100.1, 5.0), tilt=1.0)

    def strong_curve(self):
        return self.regime_curve(3.0, 200_000, np.arange(10.0, 100.1, 5.0), tilt=1.0)

    def regime5_constant(self):
        return self.cached("regime5", lambda: asy.coeff_regime5(
            brownian(3.0, SQRT2), 1.0, 1.0, self.cfg(step_h=0.5, n_paths=200_000)))

    def run(self, numbers=None, echo=None):
        numbers = list(numbers or range(1, 13))
        out = []
        for k in numbers:
            t0 = time.perf_counter()
            res = CRITERIA[k](self)
            res.runtime_s = time.perf_counter() - t0
            out.append(res)
            if echo:
                echo(res.line())
        return out


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def inverse_gamma_law(mu: float, sigma: float, alpha: float):
    """(shape, scale) of A_inf for Brownian xi with mean mu > 0 and volatility sigma."""
    shape = 2.0 * mu / (alpha * sigma**2)
    scale = 2.0 / (alpha * sigma) ** 2
    return shape, scale


def inverse_gamma_expect(g, shape: float, scale: float) -> float:
    """E[g(A)] for A inverse-gamma, by adaptive quadrature of the density."""
    logc = shape * math.log(scale) - special.gammaln(shape)

    def dens(z):
        return math.exp(logc - (shape + 1) * math.log(z) - scale / z) if z > 0 else 0.0

    mode = scale / (shape + 1)
    parts = [(0, mode), (mode, 10 * mode), (10 * mode, np.inf)]
    return sum(integrate.quad(lambda z: g(z) * dens(z), a, b, epsabs=1e-13, epsrel=1e-11, limit=200)[0] for a, b in parts)


def _rel(x, ref):
    return abs(x - ref) / abs(ref)


# ---------------------------------------------------------------------------
# 1-2: exponent calculus
# ---------------------------------------------------------------------------


def criterion_1(suite: Suite) -> CriterionResult:
    lam = np.linspace(-3.0, 3.0, 61)
    worst = 0.0
    cases = []
    for a in (-1.0, 0.0, 1.5):
        for sigma in (0.5, SQRT2):
            cases.append((LevyTriplet(a, sigma), 0.0, 0.0))
            for rate, size in ((0.7, 0.3), (2.0, -1.1)):
                cases.append((LevyTriplet(a, sigma, CompoundPoisson(rate, PointMass(size))), rate, size))
    for trip, rate, size in cases:
        a, s = trip.drift_a, trip.sigma
        for lv in lam:
            # long-hand closed forms; e^{u}-1-u taken from the power series for small u
            u = lv * size
            em = math.expm1(u) - u if abs(u) > 1e-3 else u * u / 2 + u**3 / 6 + u**4 / 24 + u**5 / 120
            ref = (rate * em - a * lv + 0.5 * s * s * lv * lv,
                   rate * size * math.expm1(u) - a + s * s * lv,
                   rate * size * size * math.exp(u) + s * s)
            got = (laplace_exponent(trip, lv), laplace_exponent_deriv(trip, lv, 1), laplace_exponent_deriv(trip, lv, 2))
            for g, r in zip(got, ref):
                err = abs(g - r) / abs(r) if r != 0 else abs(g)
                worst = max(worst, err)
    return CriterionResult(1, "exponent closed forms", worst < 1e-12, {"max_rel_err": worst, "cases": len(cases)}, budget_s=1)


ESSCHER_FAMILIES = {
    "brownian": LevyTriplet(0.4, 1.2),
    "cp_point": LevyTriplet(-0.2, 0.0, CompoundPoisson(1.5, PointMass(0.6))),
    "cp_two_sided_exp": LevyTriplet(0.3, 0.5, CompoundPoisson(2.0, TwoSidedExponential(0.4, 3.0, 2.5))),
    "cp_gaussian": LevyTriplet(0.1, 0.3, CompoundPoisson(1.0, GaussianSize(-0.2, 0.5))),
    "tempered_stable_low": LevyTriplet(0.2, 0.0, TemperedStable(0.8, 0.6, 2.0, 1)),
    "tempered_stable_high": LevyTriplet(-0.1, 0.4, TemperedStable(0.5, 1.5, 3.0, -1)),
}


def _martingale_batch(rng, size, triplet, theta, phi):
    x = IncrementSampler(triplet, 1.0)(rng, size)
    v = np.exp(theta * x - phi)
    return {"s": np.array([v.sum(), (v * v).sum()])}


def criterion_2(suite: Suite) -> CriterionResult:
    worst = 0.0
    for trip in ESSCHER_FAMILIES.values():
        lo, hi = trip.jumps.domain()[:2]
        lo, hi = max(lo, -2.0), min(hi, 2.0)
        for theta in np.linspace(lo, hi, 9)[1:-1]:
            tilted = esscher(trip, theta)
            for lv in np.linspace(lo - theta, hi - theta, 11)[1:-1]:
                lhs = laplace_exponent(tilted, lv)
                rhs = laplace_exponent(trip, lv + theta) - laplace_exponent(trip, theta)
                worst = max(worst, abs(lhs - rhs))
    mart = {}
    ok_mc = True
    n = 100_000
    for name in ("brownian", "cp_point", "cp_two_sided_exp", "cp_gaussian"):
        trip = ESSCHER_FAMILIES[name]
        theta = 0.5
        s = sum_batches(run_batches(_martingale_batch, suite.cfg(step_h=1.0, n_paths=n), trip, theta,
                                    laplace_exponent(trip, theta), stream=90))["s"]
        m = s[0] / n
        se = math.sqrt(max(s[1] / n - m * m, 0.0) / n)
        z = (m - 1.0) / se
        mart[name] = {"mean": m, "stderr": se, "z": z}
        ok_mc &= abs(z) <= 3.0
    return CriterionResult(2, "Esscher identity and martingale", worst < 1e-10 and ok_mc,
                           {"max_abs_err": worst, "martingale": mart}, budget_s=30)


# ---------------------------------------------------------------------------
# 3-4: supercritical
# ---------------------------------------------------------------------------


def criterion_3(suite: Suite) -> CriterionResult:
    mu, sigma, alpha, h = 3.0, 1.0, 1.0, 5e-4
    shape, scale = inverse_gamma_law(mu, sigma, alpha)
    o_mean = inverse_gamma_expect(lambda z: z, shape, scale)
    o_var = inverse_gamma_expect(lambda z: z * z, shape, scale) - o_mean**2
    F = asy.CbreTail(1.0, 1.0, alpha)
    o_F = inverse_gamma_expect(lambda z: float(F(z)), shape, scale)
    trip = brownian(-mu, sigma)
    sample = exp_functional_inf(trip, alpha, suite.cfg(step_h=h, n_paths=100_000, rel_tol=1e-6))
    # trapezoid correction of the left sum: the first cell counts e^0 = 1 with weight h/2
    a = np.asarray(sample.value) - 0.5 * h
    n = a.size
    m = a.mean()
    m_se = a.std(ddof=1) / math.sqrt(n)
    v = a.var(ddof=1)
    c4 = np.mean((a - m) ** 4)
    v_se = math.sqrt(max(c4 - v * v, 0.0) / n)
    f = F(a)
    fm = f.mean()
    ok = abs(m - o_mean) <= 3 * m_se and abs(v - o_var) <= 3 * v_se and _rel(fm, o_F) <= 0.02
    return CriterionResult(3, "inverse-gamma law of A_inf", ok, {
        "oracle": {"mean": o_mean, "var": o_var, "E_F": o_F, "shape": shape, "scale": scale},
        "mc": {"mean": m, "mean_se": m_se, "var": v, "var_se": v_se, "E_F": fm},
        "tail_stopped_share": sample.meta["stopped_by_tail_share"],
    }, budget_s=300)


def criterion_4(suite: Suite) -> CriterionResult:
    # a = -1, sigma = sqrt 2: mean 1, A_inf inverse gamma with shape 1 and scale 1
    F = asy.PowerTail(1.0, 1.0, 1.0)
    shape, scale = inverse_gamma_law(1.0, SQRT2, 1.0)
    oracle = inverse_gamma_expect(lambda z: float(F(z)), shape, scale)
    t_grid = np.array([1, 2, 3, 5, 7.5, 10, 15, 20, 30, 40, 50], dtype=float)
    curve = asy.estimate_expectation_curve(brownian(-1.0, SQRT2), F, 1.0, t_grid, suite.cfg(step_h=2e-3, n_paths=50_000))
    viol = curve.monotone_violations(2.0)
    z = (curve.mean[-1] - oracle) / curve.stderr[-1]
    ok = not viol and abs(z) <= 3.0
    return CriterionResult(4, "supercritical curve decreases to the plateau", ok, {
        "oracle_plateau": oracle, "curve": curve.rows(), "z_at_t50": z, "monotone_violations": viol,
    }, budget_s=None)


# ---------------------------------------------------------------------------
# 5-8: decay rates
# ---------------------------------------------------------------------------


def criterion_5(suite: Suite) -> CriterionResult:
    curve = suite.critical_curve()
    fit = asy.fit_decay(curve)
    pinned = asy.fit_decay(curve, pin_rate=0.0)
    fp = suite.cached("fp_critical", lambda: asy.first_passage_asymptotics(
        brownian(0.0, SQRT2), 1.0, np.arange(10.0, 200.1, 5.0), suite.cfg(step_h=0.5, n_paths=200_000)))
    ok = abs(fit.poly_exponent + 0.5) <= 0.1 and abs(fp.fit.poly_exponent + 0.5) <= 0.1
    return CriterionResult(5, "critical t^-1/2 decay", ok, {
        "fit": fit.as_dict(), "fit_rate_pinned": pinned.as_dict(), "first_passage_fit": fp.fit.as_dict(),
    }, budget_s=900)


def criterion_6(suite: Suite) -> CriterionResult:
    curve = suite.weak_curve()
    fit = asy.fit_decay(curve)
    ok = _rel(fit.rate, -0.25) <= 0.05 and abs(fit.poly_exponent + 1.5) <= 0.3 and not curve.flagged.any()
    return CriterionResult(6, "weakly subcritical t^-3/2 e^{-t/4}", ok, {"fit": fit.as_dict(), "min_ess": float(curve.ess.min())}, budget_s=1200)


def criterion_7(suite: Suite) -> CriterionResult:
    curve = suite.intermediate_curve()
    pinned = asy.fit_decay(curve, pin_rate=-1.0)
    free = asy.fit_decay(curve)
    ok = abs(pinned.poly_exponent + 0.5) <= 0.15 and not curve.flagged.any()
    return CriterionResult(7, "intermediate t^-1/2 e^{-t}", ok, {"fit_rate_pinned": pinned.as_dict(), "fit": free.as_dict()}, budget_s=1200)


def criterion_8(suite: Suite) -> CriterionResult:
    curve = suite.strong_curve()
    fit = asy.fit_decay(curve)
    plateau = asy.fit_plateau(curve, -2.0, 0.0, correction_power=None, t_min=20.0)
    const = suite.regime5_constant()
    ok = (_rel(fit.rate, -2.0) <= 0.05 and abs(fit.poly_exponent) <= 0.2
          and _rel(const.value, plateau.value) <= 0.15)
    return CriterionResult(8, "strongly subcritical e^{-2t} and its constant", ok, {
        "fit": fit.as_dict(), "plateau": plateau.value, "plateau_se": plateau.stderr, "constant": const.as_dict(),
        "relative_gap": _rel(const.value, plateau.value),
    }, budget_s=1200)


# ---------------------------------------------------------------------------
# 9: bounds
# ---------------------------------------------------------------------------


def criterion_9(suite: Suite) -> CriterionResult:
    out = {}
    ok = True
    for a in CANONICAL_A:
        checks = asy.bound_checks(brownian(a, SQRT2), 1.0, 1.0, 4.0, suite.cfg(step_h=0.05, n_paths=100_000))
        out[f"a={a:g}"] = [c.as_dict() for c in checks]
        ok &= all(c.passed for c in checks)
    return CriterionResult(9, "moment bounds and time-reversal identity", ok, out, budget_s=600)


# ---------------------------------------------------------------------------
# 10: constants
# ---------------------------------------------------------------------------


def _bounded(est: asy.CoefficientEstimate) -> bool:
    """Increments over successive doublings of x shrink (within 2 se): the sequence levels off."""
    p, s = np.asarray(est.prelimit), np.asarray(est.prelimit_stderr)
    d = np.diff(p)
    ds = np.hypot(s[1:], s[:-1])
    return bool(np.all(d[1:] <= d[:-1] + 2 * np.hypot(ds[1:], ds[:-1])))


def criterion_10(suite: Suite) -> CriterionResult:
    F = asy.PowerTail(1.0, 1.0, 1.0)
    xs = [1.0, 2.0, 4.0, 8.0]
    d2 = suite.cached("D2", lambda: asy.coeff_D2(brownian(0.0, SQRT2), F, 1.0, xs, 6400.0,
                                                 suite.cfg(step_h=0.5, n_paths=100_000)))
    d4 = suite.cached("D4", lambda: asy.coeff_D4(brownian(2.0, SQRT2), 1.0, 1.0, xs, 6400.0,
                                                 suite.cfg(step_h=0.5, n_paths=100_000)))
    d3 = suite.cached("D3", lambda: asy.coeff_D3(
        brownian(1.0, SQRT2), F, 1.0, 0.5, [4.0, 8.0, 12.0], np.arange(0.0, 40.01, 0.25), 3200.0,
        suite.cfg(step_h=0.5, n_paths=400_000)))
    r5 = suite.regime5_constant()
    p2 = asy.fit_plateau(suite.critical_curve(), 0.0, -0.5, 0.5, t_min=20.0)
    p3 = asy.fit_plateau(suite.weak_curve(), -0.25, -1.5, 1.0)
    p4 = asy.fit_plateau(suite.intermediate_curve(), -1.0, -0.5, 0.5)
    p5 = asy.fit_plateau(suite.strong_curve(), -2.0, 0.0, None, t_min=20.0)
    structure = {}
    ok = True
    for est in (d2, d4):
        pos = all(v > 0 for v in est.prelimit)
        inc = est.monotone_within(2.0)
        bnd = _bounded(est)
        structure[est.which] = {"positive": pos, "increasing": inc, "bounded": bnd, "prelimit": est.prelimit,
                                "stderr": est.prelimit_stderr}
        ok &= pos and inc and bnd
    cross = {}
    for name, est, plat, tol in (("D2", d2, p2, 0.15), ("regime5", r5, p5, 0.15), ("D3", d3, p3, 0.25), ("D4", d4, p4, 0.25)):
        gap = _rel(est.predicted_constant, plat.value)
        cross[name] = {"predicted": est.predicted_constant, "predicted_se": est.predicted_stderr,
                       "plateau": plat.value, "plateau_se": plat.stderr, "relative_gap": gap, "tolerance": tol,
                       "flags": list(est.flags)}
        ok &= gap <= tol
    return CriterionResult(10, "limit constants versus fitted plateaus", ok,
                           {"structure": structure, "cross_checks": cross, "D3": d3.as_dict()}, budget_s=None)


# ---------------------------------------------------------------------------
# 11-12: branching in random environment
# ---------------------------------------------------------------------------


def criterion_11(suite: Suite) -> CriterionResult:
    x0, c, alpha = 1.5, 0.8, 0.6
    t_grid = np.array([0.5, 1.0, 2.0, 5.0, 10.0, 20.0])
    p = CbreParams(x0, c, alpha, environment_for_drift(0.0, 0.0))
    surv = survival_probability(p, t_grid, suite.cfg(step_h=0.01, n_paths=16))
    closed = zero_environment_survival(x0, c, alpha, t_grid)
    err_closed = float(np.max(np.abs(surv.p - closed)))
    rng = np.random.default_rng(suite.seed)
    times = np.round(np.arange(0, 10.0 + 1e-9, 0.01), 12)
    path = PathSample(times, np.concatenate([[0.0], np.cumsum(rng.normal(0, 0.1, times.size - 1))]))
    worst_flow = 0.0
    for _ in range(200):
        r, s, t = np.sort(rng.choice(times, 3, replace=False))
        lam = float(np.exp(rng.uniform(-3, 3)))
        lhs = u_transform(path, r, t, lam, c, alpha)
        rhs = u_transform(path, r, s, u_transform(path, s, t, lam, c, alpha), c, alpha)
        worst_flow = max(worst_flow, abs(lhs - rhs) / abs(lhs))
    steps = [0.02, 0.01, 0.005, 0.0025]
    res = []
    for h in steps:
        tt = np.arange(0, 2.0 + h / 2, h)
        res.append(float(np.max(np.abs(ode_residual(PathSample(tt, np.sin(3 * tt)), 2.0, 1.5, c, alpha)))))
    order = float(np.polyfit(np.log(steps), np.log(res), 1)[0])
    ok = err_closed <= 1e-6 and worst_flow <= 1e-12 and order >= 0.9
    return CriterionResult(11, "exact survival, flow property and ODE residual", ok, {
        "max_abs_err_closed_form": err_closed, "max_rel_flow_err": worst_flow, "residuals": res,
        "observed_order": order}, budget_s=60)


CBRE_CASES = (
    (1.0, RegimeKind.SUPERCRITICAL),
    (0.0, RegimeKind.CRITICAL),
    (-1.0, RegimeKind.WEAKLY_SUBCRITICAL),
    (-2.0, RegimeKind.INTERMEDIATELY_SUBCRITICAL),
    (-3.0, RegimeKind.STRONGLY_SUBCRITICAL),
)


def criterion_12(suite: Suite) -> CriterionResult:
    out = {}
    ok = True
    for a0, kind in CBRE_CASES:
        params = CbreParams(1.0, 1.0, 1.0, environment_for_drift(a0, SQRT2))
        reg = classify_cbre(params)
        good = reg.regime.kind == kind
        entry = {"label": reg.label, "expected": kind.value}
        h = 0.5
        if kind is RegimeKind.SUPERCRITICAL:
            tg = np.array([1, 2, 3, 5, 7.5, 10, 15, 20, 30, 40, 50], dtype=float)
            curve = survival_probability(params, tg, suite.cfg(step_h=2e-3, n_paths=50_000)).as_curve()
            shape, scale = inverse_gamma_law(a0, SQRT2, 1.0)
            oracle = inverse_gamma_expect(lambda z: float(params.tail(z)), shape, scale)
            z = (curve.mean[-1] - oracle) / curve.stderr[-1]
            entry.update(oracle=oracle, z_at_t50=z, violations=curve.monotone_violations())
            good &= abs(z) <= 3 and not curve.monotone_violations()
        elif kind is RegimeKind.CRITICAL:
            curve = survival_probability(params, np.arange(10.0, 200.1, 5.0), suite.cfg(step_h=h, n_paths=1_000_000)).as_curve()
            fit = asy.fit_decay(curve)
            entry["fit"] = fit.as_dict()
            good &= abs(fit.poly_exponent + 0.5) <= 0.1
        elif kind is RegimeKind.WEAKLY_SUBCRITICAL:
            curve = survival_probability(params, np.arange(10.0, 100.1, 5.0), suite.cfg(step_h=h, n_paths=400_000),
                                         tilt=reg.regime.rho).as_curve()
            fit = asy.fit_decay(curve)
            entry["fit"] = fit.as_dict()
            good &= _rel(fit.rate, reg.regime.rate) <= 0.05 and abs(fit.poly_exponent + 1.5) <= 0.3
        elif kind is RegimeKind.INTERMEDIATELY_SUBCRITICAL:
            curve = survival_probability(params, np.arange(10.0, 100.1, 5.0), suite.cfg(step_h=h, n_paths=400_000),
                                         tilt=1.0).as_curve()
            fit = asy.fit_decay(curve, pin_rate=reg.regime.rate)
            entry["fit_rate_pinned"] = fit.as_dict()
            good &= abs(fit.poly_exponent + 0.5) <= 0.15
        else:
            curve = survival_probability(params, np.arange(10.0, 100.1, 5.0), suite.cfg(step_h=h, n_paths=200_000),
                                         tilt=1.0).as_curve()
            fit = asy.fit_decay(curve)
            entry["fit"] = fit.as_dict()
            good &= _rel(fit.rate, reg.regime.rate) <= 0.05 and abs(fit.poly_exponent) <= 0.2
        entry["passed"] = bool(good)
        out[f"a0={a0:g}"] = entry
        ok &= good
    return CriterionResult(12, "branching regimes: labels and survival decay", ok, out, budget_s=2700)


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 13)}


def run_suite(numbers=None, seed: int = 20240601, workers: int = 1, echo=print):
    return Suite(seed, workers).run(numbers, echo)
