"""Decay of E[F(A_t)]: Monte Carlo curves, decay fits and limit constants.

The five decay laws are

    supercritical            E[F(A_t)] -> E[F(A_inf)]
    critical                 ~ C t^{-1/2}
    weakly subcritical       ~ C t^{-3/2} e^{t Phi(rho)}
    intermediately subcrit.  ~ C t^{-1/2} e^{t Phi(beta)}
    strongly subcritical     ~ C e^{t Phi(beta)}

Constants are assembled from ladder quantities in normalisation-free
products (see :mod:`levyexp.ladder`); each is meant to be compared with a
plateau fitted directly to a simulated curve.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import FitError, RegimeMismatch, UnsupportedOperation
from .ladder import ESS_MIN, PathFunctional, RenewalTable, conditioned_sums, renewal_function, weighted_estimates
from .levy_core import (
    CompoundPoisson,
    LevyTriplet,
    Regime,
    RegimeKind,
    TemperedStable,
    classify_regime,
    dual,
    esscher,
    exponent_domain,
    laplace_exponent,
    laplace_exponent_deriv,
    mean_increment,
    satisfies_nonlattice,
    triplet_hash,
)
from .path_sim import IncrementSampler, SimConfig, exp_functional_inf, run_batches, sum_batches

# ---------------------------------------------------------------------------
# decreasing test functions F
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CbreTail:
    """F(z) = 1 - exp(-x0 (c alpha z)^{-1/alpha}); F(0+) = 1."""

    x0: float
    c: float
    alpha: float

    name = "cbre_tail"

    @property
    def K(self) -> float:
        return self.x0 * (self.c * self.alpha) ** (-1.0 / self.alpha)

    @property
    def beta(self) -> float:
        return 1.0

    C0, beta0 = 1.0, 0.0

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        with np.errstate(divide="ignore"):
            u = self.x0 * (self.c * self.alpha * z) ** (-1.0 / self.alpha)
        return -np.expm1(-u)

    def params(self):
        return {"family": self.name, "x0": self.x0, "c": self.c, "alpha": self.alpha}


@dataclass(frozen=True)
class PowerTail:
    """F(z) = K z^{-beta/alpha} for z >= 1, continued as K z^{-beta0/alpha} below 1.

    The default beta0 = 0 caps F at K near the origin.
    """

    K: float
    beta: float
    alpha: float
    beta0: float = 0.0

    name = "power_tail"

    @property
    def C0(self) -> float:
        return self.K

    @property
    def cap_formula(self) -> str:
        return f"F(z) = {self.K:g} * z^(-{self.beta0:g}/{self.alpha:g}) for 0 < z < 1"

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        with np.errstate(divide="ignore"):
            lz = np.log(z)
        expo = np.where(z >= 1.0, self.beta, self.beta0) / self.alpha
        return self.K * np.exp(-expo * lz)

    def params(self):
        return {"family": self.name, "K": self.K, "beta": self.beta, "alpha": self.alpha, "beta0": self.beta0}


@dataclass(frozen=True)
class ScaledF:
    """``factor`` times another F."""

    inner: object
    factor: float

    name = "scaled"

    @property
    def K(self):
        return self.factor * self.inner.K

    @property
    def beta(self):
        return self.inner.beta

    @property
    def alpha(self):
        return self.inner.alpha

    @property
    def C0(self):
        return self.factor * self.inner.C0

    @property
    def beta0(self):
        return self.inner.beta0

    def __call__(self, z):
        return self.factor * self.inner(z)

    def params(self):
        return {"family": self.name, "factor": self.factor, **{f"inner.{k}": v for k, v in self.inner.params().items()}}


def fspec_from_params(params: dict):
    fam = params.get("family")
    if fam == "cbre_tail":
        return CbreTail(float(params["x0"]), float(params["c"]), float(params["alpha"]))
    if fam == "power_tail":
        return PowerTail(float(params["K"]), float(params["beta"]), float(params["alpha"]), float(params.get("beta0", 0.0)))
    raise ValueError(f"unknown F family {fam!r}")


# ---------------------------------------------------------------------------
# conditions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionReport:
    """Grid checks of the assumptions each decay law relies on."""

    decreasing_positive: bool
    near_zero_bound: bool
    lipschitz_away_from_zero: bool
    tail_bound: bool
    tail_equivalence: bool
    nonlattice: bool
    details: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "decreasing_positive": self.decreasing_positive,
            "near_zero_bound": self.near_zero_bound,
            "lipschitz_away_from_zero": self.lipschitz_away_from_zero,
            "tail_bound": self.tail_bound,
            "tail_equivalence": self.tail_equivalence,
            "nonlattice": self.nonlattice,
            **self.details,
        }

    def require(self, *names: str) -> None:
        missing = [n for n in names if not getattr(self, n)]
        if missing:
            raise RegimeMismatch(f"required conditions not met: {', '.join(missing)}")


def check_conditions(fspec, triplet: LevyTriplet, beta: float, alpha: float | None = None) -> ConditionReport:
    """Report (never raise) which assumptions hold for ``(F, triplet, beta)``."""
    alpha = fspec.alpha if alpha is None else alpha
    z = np.logspace(-6, 8, 2801)
    f = fspec(z)
    dec = bool(np.all(f > 0) and np.all(np.diff(f) <= 1e-15 * f[:-1]))
    small = z <= 1
    near0 = bool(np.all(f[small] <= fspec.C0 * z[small] ** (-fspec.beta0 / alpha) * (1 + 1e-12)))
    # difference quotients on [delta, 1e8] for delta in a few places must stay finite and bounded
    zz = np.logspace(-2, 8, 4001)
    q = np.abs(np.diff(fspec(zz)) / np.diff(zz))
    lip = bool(np.all(np.isfinite(q)))
    big = z >= 1
    bound = fspec.K * z[big] ** (-beta / alpha)
    tb = bool(np.all(f[big] <= bound * (1 + 1e-9)))
    zt = np.array([1e6, 1e7, 1e8])
    ratio = fspec(zt) / (fspec.K * zt ** (-beta / alpha))
    te = bool(np.all(np.abs(ratio - 1) < 1e-3) and abs(ratio[-1] - 1) <= abs(ratio[0] - 1) + 1e-12)
    nl = satisfies_nonlattice(triplet)
    return ConditionReport(
        dec, near0, lip, tb, te, nl,
        details={"tail_ratio_at_1e8": float(ratio[-1]), "max_difference_quotient": float(q.max())},
    )


# ---------------------------------------------------------------------------
# expectation curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExpectationCurve:
    t: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    ess: np.ndarray
    flagged: np.ndarray
    meta: dict = field(default_factory=dict)

    def rows(self):
        return [
            {"t": float(t), "mean": float(m), "stderr": float(s), "ess": float(e), "flagged": bool(f)}
            for t, m, s, e, f in zip(self.t, self.mean, self.stderr, self.ess, self.flagged)
        ]

    def monotone_violations(self, n_se: float = 2.0) -> list[int]:
        """Indices i where mean[i+1] exceeds mean[i] by more than n_se combined standard errors."""
        d = np.diff(self.mean)
        s = np.hypot(self.stderr[1:], self.stderr[:-1])
        return [int(i) for i in np.flatnonzero(d > n_se * s)]


def grid_steps(t_grid, h) -> list[int]:
    ks = []
    for t in t_grid:
        k = round(t / h)
        if k < 1 or abs(k * h - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"time {t} is not a positive multiple of step_h={h}")
        ks.append(k)
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError("t_grid must be strictly increasing")
    return ks


def _curve_batch(rng, size, triplet, config, alpha, steps, fspec, theta, phi_theta, endpoint):
    h = config.step_h
    sampler = IncrementSampler(triplet, h, config.small_jump_cutoff)
    x = np.zeros(size)
    acc = np.zeros(size)
    out = {k: np.zeros(len(steps)) for k in ("v", "v2", "w", "w2")}
    k = 0
    right = endpoint == "right"
    for i, n in enumerate(steps):
        while k < n:
            if not right:
                acc += h * np.exp(-alpha * x)
            x = x + sampler(rng, size)
            if right:
                acc += h * np.exp(-alpha * x)
            k += 1
        if theta:
            w = np.exp(-theta * x + phi_theta * n * h)
        else:
            w = np.ones(size)
        v = w * fspec(acc)
        out["v"][i], out["v2"][i] = v.sum(), (v * v).sum()
        out["w"][i], out["w2"][i] = w.sum(), (w * w).sum()
    return out


def estimate_expectation_curve(
    triplet: LevyTriplet,
    fspec,
    alpha: float,
    t_grid,
    config: SimConfig,
    tilt: float | None = None,
    stream: int = 40,
) -> ExpectationCurve:
    """E[F(A_t)] on ``t_grid`` from one shared set of paths.

    With ``tilt`` theta the paths are drawn from the Esscher-tilted triplet and
    reweighted by exp(-theta xi_t + Phi(theta) t).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    steps = grid_steps(t_grid, config.step_h)
    theta = float(tilt or 0.0)
    sim = esscher(triplet, theta) if theta else triplet
    phi_theta = laplace_exponent(triplet, theta) if theta else 0.0
    res = run_batches(_curve_batch, config, sim, config, float(alpha), steps, fspec, theta, phi_theta, "left", stream=stream)
    s = sum_batches(res)
    n = config.n_paths
    mean = s["v"] / n
    se = np.sqrt(np.maximum(s["v2"] / n - mean**2, 0.0) / n)
    # effective sample size of the summands w F(A_t): (sum v)^2 / sum v^2
    ess = s["v"] ** 2 / np.where(s["v2"] > 0, s["v2"], np.inf)
    return ExpectationCurve(
        t_grid, mean, se, ess, ess < ESS_MIN,
        meta={
            "n_paths": n,
            "seed": config.seed,
            "step_h": config.step_h,
            "tilt": theta if theta else None,
            "alpha": alpha,
            "F": fspec.params(),
            "triplet_hash": triplet_hash(triplet),
            "quadrature": "left-endpoint",
            "weight_ess": (s["w"] ** 2 / s["w2"]).tolist(),
        },
    )


# ---------------------------------------------------------------------------
# fits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecayFit:
    rate: float
    poly_exponent: float
    intercept: float
    cov: np.ndarray
    chi2: float
    n_points: int
    pinned: dict
    dropped: list

    @property
    def rate_se(self) -> float:
        return self._se("rate")

    @property
    def poly_se(self) -> float:
        return self._se("poly_exponent")

    def _se(self, name):
        order = ["intercept"] + [k for k in ("rate", "poly_exponent") if k not in self.pinned]
        if name not in order:
            return 0.0
        i = order.index(name)
        return float(math.sqrt(self.cov[i, i]))

    def as_dict(self):
        return {
            "rate": self.rate,
            "rate_se": self.rate_se,
            "poly_exponent": self.poly_exponent,
            "poly_exponent_se": self.poly_se,
            "intercept": self.intercept,
            "reduced_chi2": self.chi2,
            "n_points": self.n_points,
            "pinned": dict(self.pinned),
            "dropped_t": list(self.dropped),
        }


def fit_decay(curve, model: str = "exp_poly", pin_rate: float | None = None, pin_poly: float | None = None,
              t_min: float | None = None, t_max: float | None = None, min_points: int = 6) -> DecayFit:
    """Weighted least squares for log E = intercept + rate t + poly_exponent log t.

    Weights are (mean/stderr)^2, the delta-method variance of log E.  Points with
    non-positive estimates are dropped with a warning.
    """
    if model != "exp_poly":
        raise ValueError(f"unknown decay model {model!r}")
    t = np.asarray(curve.t, dtype=float)
    m = np.asarray(curve.mean, dtype=float)
    se = np.asarray(curve.stderr, dtype=float)
    sel = np.ones(t.size, dtype=bool)
    if t_min is not None:
        sel &= t >= t_min
    if t_max is not None:
        sel &= t <= t_max
    bad = sel & ~(m > 0)
    dropped = [float(v) for v in t[bad]]
    if dropped:
        warnings.warn(f"dropping non-positive estimates at t = {dropped}", RuntimeWarning, stacklevel=2)
    sel &= m > 0
    if sel.sum() < min_points:
        raise FitError(f"only {int(sel.sum())} usable points; need at least {min_points}")
    t, m, se = t[sel], m[sel], se[sel]
    y = np.log(m)
    with np.errstate(divide="ignore"):
        w = np.where(se > 0, (m / se) ** 2, 0.0)
    if not np.any(w > 0):
        w = np.ones_like(y)
    elif np.any(w == 0):
        # exact points (zero error) dominate: give them the largest finite weight times 1e6
        w = np.where(w == 0, w.max() * 1e6, w)
    cols = [np.ones_like(t)]
    pinned = {}
    if pin_rate is None:
        cols.append(t)
    else:
        y = y - pin_rate * t
        pinned["rate"] = pin_rate
    if pin_poly is None:
        cols.append(np.log(t))
    else:
        y = y - pin_poly * np.log(t)
        pinned["poly_exponent"] = pin_poly
    X = np.column_stack(cols)
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    cov = np.linalg.pinv((X * w[:, None]).T @ X)
    resid = y - X @ coef
    dof = max(1, t.size - X.shape[1])
    chi2 = float((w * resid**2).sum() / dof)
    it = iter(coef[1:])
    rate = pin_rate if pin_rate is not None else float(next(it))
    poly = pin_poly if pin_poly is not None else float(next(it))
    return DecayFit(rate, poly, float(coef[0]), cov, chi2, int(t.size), pinned, dropped)


@dataclass(frozen=True)
class Plateau:
    value: float
    stderr: float
    correction_power: float | None
    last_point: float
    t_range: tuple


def fit_plateau(curve, rate: float, poly: float, correction_power: float | None = 0.5,
                t_min: float | None = None) -> Plateau:
    """Limit of t^{-poly} e^{-rate t} E[F(A_t)] with rate and exponent fixed.

    With ``correction_power`` p the model is log(...) = c + d t^{-p}, which
    extrapolates the leading finite-time correction; ``None`` fits c alone.
    """
    t = np.asarray(curve.t, dtype=float)
    sel = (curve.mean > 0) & (t >= (t_min or -np.inf))
    t = t[sel]
    g = curve.mean[sel] * np.exp(-rate * t) * t ** (-poly)
    gse = curve.stderr[sel] * np.exp(-rate * t) * t ** (-poly)
    y = np.log(g)
    w = (g / gse) ** 2
    cols = [np.ones_like(t)] if correction_power is None else [np.ones_like(t), t ** (-correction_power)]
    X = np.column_stack(cols)
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    cov = np.linalg.pinv((X * w[:, None]).T @ X)
    val = math.exp(coef[0])
    return Plateau(val, val * math.sqrt(cov[0, 0]), correction_power, float(g[-1]), (float(t[0]), float(t[-1])))


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientEstimate:
    """A limit constant from its pre-limit sequence in x.

    ``value`` is the pre-limit at the largest x and horizon; ``gap`` is the
    last increment of the x-sequence, reported as an extrapolation error bar.
    ``predicted_constant`` multiplies ``value`` by the known prefactor so it
    can be compared with a plateau fitted to a simulated curve.
    """

    which: str
    value: float
    stderr: float
    gap: float = 0.0
    x_grid: tuple = ()
    prelimit: tuple = ()
    prelimit_stderr: tuple = ()
    horizon: float | None = None
    horizon_sequence: dict = field(default_factory=dict)
    min_ess: float = math.inf
    predicted_constant: float = math.nan
    predicted_stderr: float = math.nan
    prefactor: float = 1.0
    flags: tuple = ()
    note: str = ""

    @property
    def error_bar(self) -> float:
        return math.hypot(self.stderr, self.gap)

    def monotone_within(self, n_se: float = 2.0) -> bool:
        p, s = np.asarray(self.prelimit), np.asarray(self.prelimit_stderr)
        return bool(np.all(np.diff(p) >= -n_se * np.hypot(s[1:], s[:-1])))

    def as_dict(self):
        return {
            "which": self.which,
            "value": self.value,
            "stderr": self.stderr,
            "gap": self.gap,
            "x_grid": list(self.x_grid),
            "prelimit": list(self.prelimit),
            "prelimit_stderr": list(self.prelimit_stderr),
            "horizon": self.horizon,
            "horizon_sequence": {str(k): list(v) for k, v in self.horizon_sequence.items()},
            "min_ess": self.min_ess,
            "predicted_constant": self.predicted_constant,
            "predicted_stderr": self.predicted_stderr,
            "prefactor": self.prefactor,
            "flags": list(self.flags),
            "note": self.note,
        }


def has_atomless_marginals(triplet: LevyTriplet) -> bool:
    """P(xi(t) = x) = 0 for all t > 0 and x: Gaussian part or infinite jump activity."""
    return triplet.sigma > 0 or isinstance(triplet.jumps, TemperedStable)


def coeff_c_rho(triplet: LevyTriplet, rho: float) -> CoefficientEstimate:
    """The zero-set correction c(rho); equal to 1 whenever the marginals are atomless."""
    if not satisfies_nonlattice(triplet):
        raise UnsupportedOperation("lattice triplet: c(rho) is not available")
    if not has_atomless_marginals(triplet):
        raise UnsupportedOperation(
            "finite-activity triplet without Gaussian part: xi(t) = 0 with positive probability, "
            "c(rho) < 1 and no computable form is provided"
        )
    return CoefficientEstimate("c_rho", 1.0, 0.0, note="atomless marginals: the integrand vanishes identically")


def _renewal_for(triplet, config, descending, top=60.0, n_ladder=None):
    return renewal_function(
        triplet, np.linspace(0.0, top, 121), config.with_(n_paths=n_ladder or max(40_000, config.n_paths // 4)),
        descending=descending,
    )


def _prelimit_from_sums(sums, xs, horizons, n, renewal):
    est = weighted_estimates(sums, xs, horizons, n, renewal)
    last = est[-1]
    seq = {float(T): [e.product for e in row] for T, row in zip(horizons, est)}
    return last, seq


def _finish(which, last, seq, xs, prefactor, horizon, note, extra_flags=()):
    pre = [e.product for e in last]
    pse = [e.product_stderr for e in last]
    gap = abs(pre[-1] - pre[-2]) if len(pre) > 1 else 0.0
    flags = list(extra_flags)
    if min(e.ess for e in last) < ESS_MIN:
        flags.append("low_ess")
    est = CoefficientEstimate(
        which, pre[-1], pse[-1], gap, tuple(map(float, xs)), tuple(pre), tuple(pse), horizon, seq,
        min(e.ess for e in last), prefactor * pre[-1], prefactor * math.hypot(pse[-1], gap), prefactor, tuple(flags), note,
    )
    if not est.monotone_within():
        flags.append("prelimit_not_monotone")
        est = CoefficientEstimate(**{**est.__dict__, "flags": tuple(flags)})
    return est


def _default_horizons(horizon):
    return [horizon / 16, horizon / 4, horizon]


def coeff_D2(triplet, fspec, alpha, x_grid, horizon, config: SimConfig, renewal: RenewalTable | None = None,
             tol: float = 1e-8) -> CoefficientEstimate:
    """Critical constant: pre-limits of E_x[U~(xi_T) 1{tau_0 > T} F(e^{alpha x} A_T)].

    The reported value is the normalisation-free product (mean descending ladder
    height) x D_2; ``predicted_constant`` multiplies it by sqrt(2 / (pi Phi''(0))).
    """
    m = mean_increment(triplet)
    if abs(m) > tol:
        raise RegimeMismatch(f"critical constant needs zero mean increment; found {m:.6g}")
    rep = check_conditions(fspec, triplet, fspec.beta, alpha)
    rep.require("lipschitz_away_from_zero", "tail_bound", "nonlattice")
    renewal = renewal or _renewal_for(triplet, config, descending=True)
    xs = sorted(map(float, x_grid))
    hs = _default_horizons(horizon)
    sums = conditioned_sums(triplet, xs, hs, PathFunctional("F", alpha, fspec), config, renewal, stream=50)
    last, seq = _prelimit_from_sums(sums, xs, hs, config.n_paths, renewal)
    pref = math.sqrt(2.0 / (math.pi * laplace_exponent_deriv(triplet, 0.0, 2)))
    return _finish("D2", last, seq, xs, pref, horizon, "value = mean descending ladder height x D2 (normalisation-free)")


def _power_fn(expo):
    return _Power(expo)


@dataclass(frozen=True)
class _Power:
    expo: float

    def __call__(self, a):
        return np.asarray(a, dtype=float) ** (-self.expo)


def coeff_D4(triplet, alpha, beta, x_grid, horizon, config: SimConfig, K: float = 1.0,
             renewal: RenewalTable | None = None, tol: float = 1e-8) -> CoefficientEstimate:
    """Intermediate constant, computed for the dual of the beta-tilted process.

    With eta = -xi under the tilted law (zero mean), the pre-limits are
    E_x[U~(eta_T) 1{tau_0 > T} (e^{alpha x} A_T(eta))^{-beta/alpha}] using
    right-endpoint sums, which match the left sums of xi under time reversal.
    """
    dphi = laplace_exponent_deriv(triplet, beta, 1)
    if abs(dphi) > tol:
        raise RegimeMismatch(f"intermediate constant needs Phi'(beta) = 0; found {dphi:.6g}")
    if not satisfies_nonlattice(triplet):
        raise RegimeMismatch("required conditions not met: nonlattice")
    eta = dual(esscher(triplet, beta))
    renewal = renewal or _renewal_for(eta, config, descending=True)
    xs = sorted(map(float, x_grid))
    hs = _default_horizons(horizon)
    fn = PathFunctional("F", alpha, _power_fn(beta / alpha), endpoint="right")
    sums = conditioned_sums(eta, xs, hs, fn, config, renewal, stream=51)
    last, seq = _prelimit_from_sums(sums, xs, hs, config.n_paths, renewal)
    pref = K * math.sqrt(2.0 / (math.pi * laplace_exponent_deriv(triplet, beta, 2)))
    return _finish("D4", last, seq, xs, pref, horizon, "value = mean ascending ladder height (tilted) x D4 (normalisation-free)")


def _pieces_batch(rng, size, triplet, config, alpha, n_steps, endpoint):
    h = config.step_h
    sampler = IncrementSampler(triplet, h, config.small_jump_cutoff)
    z = np.zeros(size)
    low = np.zeros(size)
    acc = np.zeros(size)
    right = endpoint == "right"
    for _ in range(n_steps):
        if not right:
            acc += h * np.exp(-alpha * z)
        z = z + sampler(rng, size)
        np.minimum(low, z, out=low)
        if right:
            acc += h * np.exp(-alpha * z)
    return np.stack([z, low, acc])


def _pair_mean(wf, af, wb, ab, shift_factor, fspec, shifts):
    """Average of wf_i wb_j F(af_i + s ab_j) over cyclic pairings of two independent samples."""
    a, b = wf.size, wb.size
    if a == 0 or b == 0:
        return 0.0
    L = max(a, b)
    i = np.arange(L) % a
    total = 0.0
    for s in range(shifts):
        j = (np.arange(L) + s * max(1, b // shifts) + s) % b
        total += np.mean(wf[i] * wb[j] * fspec(af[i] + shift_factor * ab[j]))
    return total / shifts


def coeff_D3(triplet, fspec, alpha, rho, x_grid, y_grid, horizon, config: SimConfig, groups: int = 10,
             shifts: int = 4, renewals: tuple | None = None, tol: float = 1e-8) -> CoefficientEstimate:
    """Weakly subcritical constant from two independent conditioned pieces.

    The rho-tilted process (zero mean) is started at x and killed below 0; its
    dual is started at y and killed below 0.  For each x the pre-limit is

        (2 / Phi''(rho)) e^{rho x} int e^{-rho y} E[U~d(xi_T) U~a(xi^_T) 1 1 F(e^{alpha x}(A_T + A^_T))] dy

    where the factor 2 / Phi''(rho) converts the two mean-height normalised
    renewal functions back to the unit local-time scale.  Standard errors come
    from ``groups`` disjoint replicates.
    """
    if abs(laplace_exponent_deriv(triplet, rho, 1)) > max(tol, 1e-10):
        raise RegimeMismatch("rho is not a root of Phi'")
    rep = check_conditions(fspec, triplet, fspec.beta, alpha)
    rep.require("lipschitz_away_from_zero", "tail_bound", "nonlattice")
    tilted = esscher(triplet, rho)
    back = dual(tilted)
    if renewals is None:
        renewals = (_renewal_for(tilted, config, descending=True), _renewal_for(back, config, descending=True))
    ud, ua = renewals
    n_steps = max(1, round(horizon / config.step_h))
    front = np.concatenate(run_batches(_pieces_batch, config, tilted, config, alpha, n_steps, "left", stream=52), axis=1)
    rear = np.concatenate(run_batches(_pieces_batch, config, back, config, alpha, n_steps, "right", stream=53), axis=1)
    phi2 = laplace_exponent_deriv(triplet, rho, 2)
    xs = sorted(map(float, x_grid))
    ys = np.asarray(sorted(map(float, y_grid)))
    n = front.shape[1]
    split = np.array_split(np.arange(n), groups)
    reps = np.zeros((groups, len(xs)))
    tail_share = np.zeros(len(xs))
    for gi, idx in enumerate(split):
        zf, lf, af = front[:, idx]
        zb, lb, ab = rear[:, idx]
        m = idx.size
        for xi, x in enumerate(xs):
            alive_f = lf > -x
            wf = ud.evaluate(x + zf[alive_f])
            aff = af[alive_f]
            vals = np.empty(ys.size)
            for yi, y in enumerate(ys):
                alive_b = lb > -y
                wb = ua.evaluate(y + zb[alive_b])
                share = alive_f.sum() * alive_b.sum() / (m * m)
                vals[yi] = share * _pair_mean(wf, aff, wb, ab[alive_b], math.exp(alpha * (x - y)), fspec, shifts)
            integrand = np.exp(rho * (x - ys)) * vals
            reps[gi, xi] = np.trapezoid(integrand, ys)
            tail = integrand[-1] / rho
            tail_share[xi] = max(tail_share[xi], tail / max(reps[gi, xi], 1e-300))
    scale = 2.0 / phi2
    pre = scale * reps.mean(axis=0)
    pse = scale * reps.std(axis=0, ddof=1) / math.sqrt(groups)
    gap = abs(pre[-1] - pre[-2]) if len(pre) > 1 else 0.0
    flags = []
    if tail_share.max() > 0.05:
        flags.append("refine_y_grid")
    if not np.all(np.diff(pre) >= -2 * np.hypot(pse[1:], pse[:-1])):
        flags.append("prelimit_not_monotone")
    c = coeff_c_rho(triplet, rho).value
    pref = c / math.sqrt(2 * math.pi * phi2)
    return CoefficientEstimate(
        "D3", float(pre[-1]), float(pse[-1]), gap, tuple(xs), tuple(map(float, pre)), tuple(map(float, pse)), horizon,
        {}, math.nan, pref * pre[-1], pref * math.hypot(pse[-1], gap), pref, tuple(flags),
        f"y-grid tail share {tail_share.max():.2e}",
    )


def coeff_regime5(triplet, alpha, beta, config: SimConfig, K: float = 1.0) -> CoefficientEstimate:
    """K E^{(beta)}[A_inf(-xi)^{-beta/alpha}] by direct simulation of the tilted dual.

    The tilted dual drifts to +inf exactly when Phi'(beta) < 0.  Right-endpoint
    sums are used, A_right = A_left - h, consistent with time reversal of xi's
    left sums.
    """
    eta = dual(esscher(triplet, beta))
    m = mean_increment(eta)
    if not m > 0:
        raise RegimeMismatch(f"strongly subcritical constant needs Phi'(beta) < 0; the tilted dual has mean {m:.6g}")
    sample = exp_functional_inf(eta, alpha, config.with_(horizon_t=None))
    a = np.atleast_1d(sample.value) - config.step_h
    v = K * a ** (-beta / alpha)
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
    return CoefficientEstimate(
        "regime5_constant", float(v.mean()), se, predicted_constant=float(v.mean()), predicted_stderr=se,
        note=f"K={K:g}; tail-stopped share {sample.meta['stopped_by_tail_share']:.4f}",
    )


# ---------------------------------------------------------------------------
# first passage
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FirstPassageReport:
    x: float
    curve: ExpectationCurve
    fit: DecayFit
    fit_pinned: DecayFit | None
    predicted_rate: float
    predicted_poly: float
    regime: str
    truncated_t: list
    rho: float | None = None

    def as_dict(self):
        return {
            "x": self.x,
            "regime": self.regime,
            "rho": self.rho,
            "predicted_rate": self.predicted_rate,
            "predicted_poly_exponent": self.predicted_poly,
            "fit": self.fit.as_dict(),
            "fit_pinned_rate": self.fit_pinned.as_dict() if self.fit_pinned else None,
            "truncated_t": self.truncated_t,
            "curve": self.curve.rows(),
        }


def _passage_batch(rng, size, triplet, config, levels, steps, theta, phi_theta):
    h = config.step_h
    sampler = IncrementSampler(triplet, h, config.small_jump_cutoff)
    x = np.zeros(size)
    low = np.zeros(size)
    out = {k: np.zeros((len(steps), len(levels))) for k in ("v", "v2", "alive", "w", "w2")}
    k = 0
    for i, n in enumerate(steps):
        while k < n:
            x = x + sampler(rng, size)
            np.minimum(low, x, out=low)
            k += 1
        w = np.exp(-theta * x + phi_theta * n * h) if theta else np.ones(size)
        for j, lev in enumerate(levels):
            alive = low > lev
            v = np.where(alive, w, 0.0)
            out["v"][i, j] = v.sum()
            out["v2"][i, j] = (v * v).sum()
            out["alive"][i, j] = alive.sum()
            out["w"][i, j] = w.sum()
            out["w2"][i, j] = (w * w).sum()
    return out


def survival_curves(triplet, levels, t_grid, config, tilt=None, stream=60):
    """P(tau_level > t) for several levels <= 0 on shared paths; returns curves and survivor counts."""
    steps = grid_steps(t_grid, config.step_h)
    theta = float(tilt or 0.0)
    sim = esscher(triplet, theta) if theta else triplet
    phi_theta = laplace_exponent(triplet, theta) if theta else 0.0
    s = sum_batches(run_batches(_passage_batch, config, sim, config, list(map(float, levels)), steps, theta, phi_theta, stream=stream))
    n = config.n_paths
    curves = []
    for j in range(len(levels)):
        mean = s["v"][:, j] / n
        se = np.sqrt(np.maximum(s["v2"][:, j] / n - mean**2, 0.0) / n)
        ess = s["v"][:, j] ** 2 / np.where(s["v2"][:, j] > 0, s["v2"][:, j], np.inf)
        curves.append(ExpectationCurve(np.asarray(t_grid, float), mean, se, ess, ess < ESS_MIN,
                                       meta={"level": levels[j], "tilt": theta or None, "n_paths": n, "seed": config.seed}))
    return curves, s["alive"]


def rho_for_passage(triplet: LevyTriplet) -> float:
    """Minimiser of Phi on the positive half of its domain (root of Phi')."""
    from scipy import optimize

    dom = exponent_domain(triplet)
    hi = dom.upper if math.isfinite(dom.upper) else 1.0
    f = lambda lam: laplace_exponent_deriv(triplet, lam, 1)
    if not math.isfinite(dom.upper):
        while f(hi) <= 0:
            hi *= 2
            if hi > 1e6:
                raise RegimeMismatch("Phi' has no positive root")
    else:
        hi = hi * (1 - 1e-9)
        if f(hi) <= 0:
            raise RegimeMismatch("Phi' has no root inside the domain")
    return float(optimize.brentq(f, 0.0, hi, xtol=1e-14))


def first_passage_asymptotics(triplet, x, t_grid, config: SimConfig, min_survivors: int = 100,
                              tol: float = 1e-8) -> FirstPassageReport:
    """Tail of tau_{-x} = inf{t : xi_t <= -x}, with decay fit against the predicted law.

    Zero mean: t^{-1/2}.  Negative mean with a root rho of Phi': t^{-3/2} e^{Phi(rho) t},
    estimated under the rho-tilted law.
    """
    m = mean_increment(triplet)
    rho = None
    if abs(m) <= tol:
        regime, rate, poly, tilt = "critical", 0.0, -0.5, None
    elif m < 0:
        rho = rho_for_passage(triplet)
        regime, rate, poly, tilt = "weakly_subcritical", laplace_exponent(triplet, rho), -1.5, rho
    else:
        raise RegimeMismatch(f"first-passage decay laws need mean <= 0; found {m:.6g}")
    curves, alive = survival_curves(triplet, [-float(x)], t_grid, config, tilt)
    curve = curves[0]
    ok = alive[:, 0] >= min_survivors
    truncated = [float(t) for t in np.asarray(t_grid)[~ok]]
    if truncated:
        warnings.warn(f"fewer than {min_survivors} survivors at t = {truncated}; grid truncated", RuntimeWarning, stacklevel=2)
        curve = ExpectationCurve(curve.t[ok], curve.mean[ok], curve.stderr[ok], curve.ess[ok], curve.flagged[ok], curve.meta)
    fit = fit_decay(curve)
    pinned = fit_decay(curve, pin_rate=rate)
    return FirstPassageReport(float(x), curve, fit, pinned, rate, poly, regime, truncated, rho)


# ---------------------------------------------------------------------------
# predictions
# ---------------------------------------------------------------------------


def default_tilt(regime: Regime) -> float | None:
    return regime.tilt


def predicted_law(triplet: LevyTriplet, beta: float, **kw) -> Regime:
    return classify_regime(triplet, beta, **kw)


# ---------------------------------------------------------------------------
# bound checks on A_t^{-beta/alpha}
# ---------------------------------------------------------------------------


def _bounds_batch(rng, size, triplet, config, alpha, beta, n_steps, unit_steps):
    h = config.step_h
    sampler = IncrementSampler(triplet, h, config.small_jump_cutoff)
    x = np.zeros(size)
    a_left = np.zeros(size)
    a_right_neg = np.zeros(size)
    sup1 = np.zeros(size)
    min_int = np.zeros(size)  # min over integer times 0..floor(t)-1
    last_int = math.floor(n_steps * h + 1e-9) - 1
    for k in range(1, n_steps + 1):
        a_left += h * np.exp(-alpha * x)
        x = x + sampler(rng, size)
        a_right_neg += h * np.exp(alpha * x)
        if k <= unit_steps:
            np.maximum(sup1, x, out=sup1)
        if k % unit_steps == 0 and k // unit_steps <= last_int:
            np.minimum(min_int, x, out=min_int)
    q = beta / alpha
    cols = {
        "lhs": a_left ** (-q),
        "exp_beta_xi": np.exp(beta * x),
        "exp_min": np.exp(beta * min_int),
        "exp_sup1": np.exp(beta * sup1),
        "dual": np.exp(beta * x) * a_right_neg ** (-q),
    }
    out = {}
    for k, v in cols.items():
        out[k] = np.array([v.sum(), (v * v).sum()])
    return out


@dataclass(frozen=True)
class BoundCheck:
    name: str
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    passed: bool

    def as_dict(self):
        return self.__dict__.copy()


def bound_checks(triplet: LevyTriplet, alpha: float, beta: float, t: float, config: SimConfig, n_se: float = 3.0):
    """Three Monte Carlo checks on E[A_t^{-beta/alpha}] (t >= 2, integer t/step grid).

    doob:      E[A_t^{-b/a}] <= 4 t^{-b/a} e^{b (drift_a + |drift_a|) t} E[e^{b xi_t}]
    skeleton:  E[A_t^{-b/a}] <= E[exp(b min_{k <= floor(t)-1} xi_k)] E[e^{b S_1}]
    duality:   E[A_t(xi)^{-b/a}] = E[e^{b xi_t} A_t(-xi)^{-b/a}]

    The duality pair uses independent path sets and right-endpoint sums for -xi,
    which makes it exact for the skeleton.
    """
    h = config.step_h
    n_steps = round(t / h)
    unit = round(1.0 / h)
    if abs(unit * h - 1.0) > 1e-9 or abs(n_steps * h - t) > 1e-9 or t < 2:
        raise ValueError("need t >= 2 and 1/step_h, t/step_h integers")
    n = config.n_paths
    s1 = sum_batches(run_batches(_bounds_batch, config, triplet, config, alpha, beta, n_steps, unit, stream=70))
    s2 = sum_batches(run_batches(_bounds_batch, config, triplet, config, alpha, beta, n_steps, unit, stream=71))

    def ms(s, k):
        m = s[k][0] / n
        return m, math.sqrt(max(s[k][1] / n - m * m, 0.0) / n)

    lhs, lse = ms(s1, "lhs")
    e_b, e_bse = ms(s1, "exp_beta_xi")
    a = triplet.drift_a
    fac = 4 * t ** (-beta / alpha) * math.exp(beta * (a + abs(a)) * t)
    doob_r, doob_se = fac * e_b, fac * e_bse
    emin, emin_se = ms(s1, "exp_min")
    esup, esup_se = ms(s2, "exp_sup1")
    sk_r = emin * esup
    sk_se = math.hypot(emin_se * esup, emin * esup_se)
    du, du_se = ms(s2, "dual")
    out = [
        BoundCheck("doob", lhs, lse, doob_r, doob_se, lhs <= doob_r + n_se * math.hypot(lse, doob_se)),
        BoundCheck("skeleton", lhs, lse, sk_r, sk_se, lhs <= sk_r + n_se * math.hypot(lse, sk_se)),
        BoundCheck("duality", lhs, lse, du, du_se, abs(lhs - du) <= n_se * math.hypot(lse, du_se)),
    ]
    return out
