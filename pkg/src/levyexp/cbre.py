"""Stable branching in a Lévy random environment.

The environment L has jumps e^z - 1 where z ~ nu, so it never jumps below -1.
Given the environment path, the Laplace transform of X solves a Bernoulli-type
backward equation whose solution is explicit,

    u_{r,t}(lam) = (c alpha int_r^t e^{-alpha xi(s)} ds + lam^{-alpha})^{-1/alpha},

and the survival probability reduces to E[F_x(A_t)] with
F_x(z) = 1 - exp(-x (c alpha z)^{-1/alpha}).  The branching process itself is
never simulated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .asymptotics import CbreTail, ExpectationCurve, estimate_expectation_curve
from .errors import DomainError
from .levy_core import (
    JumpMeasure,
    LevyTriplet,
    Regime,
    RegimeKind,
    ZeroJumps,
    classify_regime,
    exponent_domain,
    laplace_exponent_deriv,
    validate_triplet,
)
from .path_sim import PathSample, SimConfig

LABELS = {
    RegimeKind.SUPERCRITICAL: "Supercritical",
    RegimeKind.CRITICAL: "Critical",
    RegimeKind.WEAKLY_SUBCRITICAL: "Weakly subcritical",
    RegimeKind.INTERMEDIATELY_SUBCRITICAL: "Intermediately subcritical",
    RegimeKind.STRONGLY_SUBCRITICAL: "Strongly subcritical",
}


@dataclass(frozen=True)
class EnvironmentSpec:
    beta_drift: float
    sigma: float = 0.0
    jumps: JumpMeasure = field(default_factory=ZeroJumps)

    def validate(self) -> list[str]:
        out = []
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            out.append(f"environment sigma must be finite and >= 0 (got {self.sigma})")
        if not math.isfinite(self.beta_drift):
            out.append("environment beta_drift must be finite")
        out.extend(self.jumps.validate())
        return out


@dataclass(frozen=True)
class CbreParams:
    x0: float
    c: float
    alpha: float
    env: EnvironmentSpec

    def validate(self) -> list[str]:
        out = []
        if not self.x0 > 0:
            out.append(f"x0 must be > 0 (got {self.x0})")
        if not self.c >= 0:
            out.append(f"c must be >= 0 (got {self.c})")
        if not 0 < self.alpha <= 1:
            out.append(f"alpha must lie in (0, 1] (got {self.alpha})")
        return out + self.env.validate()

    @property
    def tail(self) -> CbreTail:
        return CbreTail(self.x0, self.c, self.alpha)

    @property
    def K(self) -> float:
        return self.x0 * (self.c * self.alpha) ** (-1.0 / self.alpha)


def _small_jump_correction(jumps: JumpMeasure) -> float:
    """int_{[-1,1]} (e^z - 1 - z) nu(dz) - int_{|z|>1} z nu(dz)."""
    if isinstance(jumps, ZeroJumps):
        return 0.0
    inner = jumps.integrate(lambda z: math.expm1(z) - z, -1.0, 1.0, "environment small-jump integral")
    outer = jumps.integrate(lambda z: z, -math.inf, -1.0, "environment large-jump integral") + jumps.integrate(
        lambda z: z, 1.0, math.inf, "environment large-jump integral"
    )
    return inner - outer


def environment_drift(env: EnvironmentSpec) -> float:
    """a0 = beta - sigma^2/2 - int_{[-1,1]}(e^z - 1 - z) nu(dz) + int_{[-1,1]^c} z nu(dz)."""
    errs = env.validate()
    if errs:
        raise DomainError("; ".join(errs))
    a0 = env.beta_drift - 0.5 * env.sigma**2 - _small_jump_correction(env.jumps)
    if not math.isfinite(a0):
        raise DomainError("environment integrals diverge")
    return a0


def xi_from_environment(env: EnvironmentSpec) -> LevyTriplet:
    """Triplet of xi(t) = a0 t + sigma B(t) + compensated jumps; its mean is a0."""
    trip = LevyTriplet(drift_a=-environment_drift(env), sigma=env.sigma, jumps=env.jumps)
    errs = validate_triplet(trip)
    if errs:
        raise DomainError("; ".join(errs))
    return trip


def environment_for_drift(a0: float, sigma: float, jumps: JumpMeasure | None = None) -> EnvironmentSpec:
    """Inverse of :func:`environment_drift`: the beta drift that yields a given a0."""
    jumps = jumps or ZeroJumps()
    return EnvironmentSpec(a0 + 0.5 * sigma**2 + _small_jump_correction(jumps), sigma, jumps)


# ---------------------------------------------------------------------------
# conditional Laplace transform
# ---------------------------------------------------------------------------


def _grid_index(times, s):
    i = int(np.searchsorted(times, s - 1e-9 * max(1.0, abs(s))))
    if i >= times.size or abs(times[i] - s) > 1e-9 * max(1.0, abs(s)):
        raise ValueError(f"time {s} is not on the path grid")
    return i


def u_transform(path: PathSample, r: float, t: float, lam: float, c: float, alpha: float):
    """u_{r,t}(lam) along a skeleton path (left-endpoint Riemann sum).

    ``lam = inf`` drops the lam^{-alpha} term analytically.  With c = 0 and
    lam = inf the value is +inf (survival probability 1).  For a 2-D path
    sample an array with one value per path is returned.
    """
    if t < r:
        raise ValueError("need t >= r")
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    times = np.asarray(path.times)
    i, j = _grid_index(times, r), _grid_index(times, t)
    vals = np.asarray(path.values, dtype=float)
    seg = vals[..., i:j]
    dt = np.diff(times[i : j + 1])
    # same reduction as exp_functional, so both routes agree bit for bit
    integral = np.exp(-alpha * seg) @ dt
    inv = 0.0 if math.isinf(lam) else lam ** (-alpha)
    total = c * alpha * integral + inv
    with np.errstate(divide="ignore"):
        out = np.where(total > 0, total, 0.0) ** (-1.0 / alpha)
    return float(out) if np.ndim(out) == 0 else out


def ode_residual(path: PathSample, t: float, lam: float, c: float, alpha: float) -> np.ndarray:
    """Forward differences of r -> u_{r,t}(lam) minus c e^{-alpha xi(r)} u^{1+alpha}, for grid r < t."""
    times = np.asarray(path.times)
    j = _grid_index(times, t)
    u = np.array([u_transform(path, float(r), t, lam, c, alpha) for r in times[: j + 1]])
    du = np.diff(u) / np.diff(times[: j + 1])
    rhs = c * np.exp(-alpha * np.asarray(path.values)[:j]) * u[:-1] ** (1 + alpha)
    return du - rhs


# ---------------------------------------------------------------------------
# survival
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CbreRegime:
    label: str
    regime: Regime
    K: float
    constant_formula: str
    notes: tuple = ()

    def as_dict(self):
        return {
            "label": self.label,
            **self.regime.as_dict(),
            "K": self.K,
            "constant_formula": self.constant_formula,
            "notes": list(self.notes),
        }


_FORMULAS = {
    RegimeKind.SUPERCRITICAL: "lim P(X(t) > 0) = E[1 - exp(-x (c alpha A_inf)^(-1/alpha))] > 0",
    RegimeKind.CRITICAL: "lim t^(1/2) P(X(t) > 0) = sqrt(2 / (pi Phi''(0))) P^[H(1)] D2(alpha, F_x)",
    RegimeKind.WEAKLY_SUBCRITICAL: "lim t^(3/2) e^(-t Phi(rho)) P(X(t) > 0) = c(rho) / sqrt(2 pi Phi''(rho)) D3(alpha, F_x)",
    RegimeKind.INTERMEDIATELY_SUBCRITICAL: "lim t^(1/2) e^(-t Phi(1)) P(X(t) > 0) = x (c alpha)^(-1/alpha) sqrt(2 / (pi Phi''(1))) P^(1)[H(1)] D4(alpha, 1)",
    RegimeKind.STRONGLY_SUBCRITICAL: "lim e^(-t Phi(1)) P(X(t) > 0) = x (c alpha)^(-1/alpha) E^(1)[A_inf(-xi)^(-1/alpha)]",
}


def classify_cbre(params: CbreParams, tol: float = 1e-8) -> CbreRegime:
    """Survival regime of the process with beta = 1 and F = F_x."""
    errs = params.validate()
    if errs:
        raise DomainError("; ".join(errs))
    xi = xi_from_environment(params.env)
    dom = exponent_domain(xi)
    if not (dom.interior(0.0) and dom.interior(1.0)):
        raise DomainError(f"0 and 1 must be interior to the exponent domain {dom}")
    reg = classify_regime(xi, 1.0, tol=tol)
    notes = []
    if reg.kind == RegimeKind.STRONGLY_SUBCRITICAL:
        notes.append("strongly subcritical clause keyed on Phi'(1) < 0")
    if reg.kind == RegimeKind.INTERMEDIATELY_SUBCRITICAL:
        notes.append("curvature evaluated at 1: Phi''(1) = %.12g" % laplace_exponent_deriv(xi, 1.0, 2))
    return CbreRegime(LABELS[reg.kind], reg, params.K, _FORMULAS[reg.kind], tuple(notes))


@dataclass(frozen=True)
class SurvivalCurve:
    t: np.ndarray
    p: np.ndarray
    stderr: np.ndarray
    regime: CbreRegime
    curve: ExpectationCurve | None = None

    def rows(self):
        return [{"t": float(t), "p": float(p), "stderr": float(s)} for t, p, s in zip(self.t, self.p, self.stderr)]

    def as_curve(self) -> ExpectationCurve:
        ess = self.curve.ess if self.curve is not None else np.full(self.t.size, np.inf)
        return ExpectationCurve(self.t, self.p, self.stderr, ess, ess < 100, {})


def survival_probability(params: CbreParams, t_grid, config: SimConfig, tilt: float | None = None) -> SurvivalCurve:
    """P(X(t) > 0) on ``t_grid`` from one set of environment paths.

    t = 0 entries are exactly 1.  ``tilt`` enables Esscher importance sampling.
    """
    errs = params.validate()
    if errs:
        raise DomainError("; ".join(errs))
    reg = classify_cbre(params)
    xi = xi_from_environment(params.env)
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < 0):
        raise ValueError("times must be >= 0")
    zero = t_grid == 0
    p = np.ones(t_grid.size)
    se = np.zeros(t_grid.size)
    curve = None
    if (~zero).any():
        if params.c == 0:
            return SurvivalCurve(t_grid, p, se, reg)
        curve = estimate_expectation_curve(xi, params.tail, params.alpha, t_grid[~zero], config, tilt=tilt, stream=80)
        p[~zero] = curve.mean
        se[~zero] = curve.stderr
    return SurvivalCurve(t_grid, p, se, reg, curve)


def zero_environment_survival(x0: float, c: float, alpha: float, t) -> np.ndarray:
    """Closed form 1 - exp(-x0 (c alpha t)^{-1/alpha}) for a constant environment."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        return -np.expm1(-x0 * (c * alpha * t) ** (-1.0 / alpha))
