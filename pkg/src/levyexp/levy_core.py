"""Exponent calculus for Lévy processes with parametric jump measures.

Conventions follow the triplet ``(a, sigma, nu)`` with Laplace exponent

    Phi(lam) = -a*lam + sigma**2/2 * lam**2 + int (e^{lam x} - 1 - lam x) nu(dx)

so ``E[exp(lam * xi(t))] = exp(t * Phi(lam))`` and the mean increment is
``Phi'(0) = -a``.  Every regime decision goes through :func:`mean_increment`
and the sign of ``Phi'`` rather than through the sign of ``a``.

Jump measures are restricted to a few families that are closed under
exponential tilting and reflection, so exact exponents are always available.
A quadrature path (``method="quad"``) is kept as an independent check.
"""
from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize, special

from .errors import DomainError, QuadratureError, RegimeMismatch, UnsupportedOperation

QUAD_ABS_TOL = 1e-10


def _quad(fn: Callable[[float], float], lo: float, hi: float, what: str) -> float:
    """Adaptive quadrature that raises instead of returning a poor value."""
    if lo >= hi:
        return 0.0
    # tolerance is checked against the declared absolute tolerance plus a
    # relative allowance for large integrals
    value, err = integrate.quad(fn, lo, hi, epsabs=QUAD_ABS_TOL, epsrel=1e-12, limit=400)
    if not np.isfinite(value) or err > QUAD_ABS_TOL + 1e-9 * abs(value):
        raise QuadratureError(f"{what}: quad on [{lo}, {hi}] gave {value!r} with error {err:.3g}")
    return value


def _quad_split(fn, lo, hi, what):
    """Integrate over (lo, hi) split at 0 and at +-1."""
    cuts = sorted({lo, hi, *[c for c in (-1.0, 0.0, 1.0) if lo < c < hi]})
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        total += _quad(fn, a, b, what)
    return total


# ---------------------------------------------------------------------------
# jump-size laws for compound Poisson measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointMass:
    """All jumps have the same size."""

    size: float

    family = "point_mass"

    def validate(self) -> list[str]:
        return [] if self.size != 0.0 else ["point_mass size must be nonzero"]

    def mgf(self, lam, order=0):
        return self.size**order * np.exp(lam * self.size)

    @property
    def mean(self):
        return self.size

    def domain(self):
        return (-math.inf, math.inf, False, False)

    def tilt(self, theta):
        return self, math.exp(theta * self.size)

    def reflect(self):
        return PointMass(-self.size)

    def atoms(self):
        return [(self.size, 1.0)]

    density = None

    def sample_sum(self, rng, counts):
        return counts * self.size

    def params(self):
        return {"size": self.size}


@dataclass(frozen=True)
class TwoSidedExponential:
    """Jump up with probability ``p_up`` and size Exp(eta_up), else down with size Exp(eta_down)."""

    p_up: float
    eta_up: float
    eta_down: float

    family = "two_sided_exponential"

    def validate(self):
        out = []
        if not 0.0 <= self.p_up <= 1.0:
            out.append("two_sided_exponential p_up must lie in [0, 1]")
        if self.eta_up <= 0 or self.eta_down <= 0:
            out.append("two_sided_exponential rates eta_up, eta_down must be > 0")
        return out

    def _in_domain(self, lam):
        lo, hi, _, _ = self.domain()
        return lo < lam < hi

    def mgf(self, lam, order=0):
        p, eu, ed = self.p_up, self.eta_up, self.eta_down
        lam = complex(lam) if isinstance(lam, complex) else lam
        fact = math.factorial(order)
        up = p * eu / (eu - lam) ** (order + 1) if p > 0 else 0.0
        down = (1 - p) * ed * (-1) ** order / (ed + lam) ** (order + 1) if p < 1 else 0.0
        return fact * (up + down)

    @property
    def mean(self):
        return self.p_up / self.eta_up - (1 - self.p_up) / self.eta_down

    def domain(self):
        lo = -self.eta_down if self.p_up < 1 else -math.inf
        hi = self.eta_up if self.p_up > 0 else math.inf
        return (lo, hi, False, False)

    def tilt(self, theta):
        m = self.mgf(theta)
        up = self.p_up * self.eta_up / (self.eta_up - theta) if self.p_up > 0 else 0.0
        return TwoSidedExponential(up / m, self.eta_up - theta, self.eta_down + theta), m

    def reflect(self):
        return TwoSidedExponential(1 - self.p_up, self.eta_down, self.eta_up)

    def atoms(self):
        return []

    def density(self, x):
        if x > 0:
            return self.p_up * self.eta_up * math.exp(-self.eta_up * x)
        return (1 - self.p_up) * self.eta_down * math.exp(self.eta_down * x)

    def sample_sum(self, rng, counts):
        n_up = rng.binomial(counts, self.p_up)
        up = rng.gamma(n_up, 1.0 / self.eta_up)
        down = rng.gamma(counts - n_up, 1.0 / self.eta_down)
        return up - down

    def params(self):
        return {"p_up": self.p_up, "eta_up": self.eta_up, "eta_down": self.eta_down}


@dataclass(frozen=True)
class GaussianSize:
    """Normally distributed jump sizes."""

    mean_size: float
    std: float

    family = "gaussian"

    def validate(self):
        return [] if self.std > 0 else ["gaussian jump std must be > 0"]

    def mgf(self, lam, order=0):
        mu, s2 = self.mean_size, self.std**2
        base = np.exp(mu * lam + 0.5 * s2 * lam * lam)
        d = mu + s2 * lam
        if order == 0:
            return base
        if order == 1:
            return d * base
        if order == 2:
            return (d * d + s2) * base
        raise ValueError("order must be 0, 1 or 2")

    @property
    def mean(self):
        return self.mean_size

    def domain(self):
        return (-math.inf, math.inf, False, False)

    def tilt(self, theta):
        return GaussianSize(self.mean_size + theta * self.std**2, self.std), float(self.mgf(theta))

    def reflect(self):
        return GaussianSize(-self.mean_size, self.std)

    def atoms(self):
        return []

    def density(self, x):
        z = (x - self.mean_size) / self.std
        return math.exp(-0.5 * z * z) / (self.std * math.sqrt(2 * math.pi))

    def sample_sum(self, rng, counts):
        return counts * self.mean_size + np.sqrt(counts) * self.std * rng.standard_normal(np.shape(counts))

    def params(self):
        return {"mean": self.mean_size, "std": self.std}


SIZE_LAWS = {cls.family: cls for cls in (PointMass, TwoSidedExponential, GaussianSize)}


# ---------------------------------------------------------------------------
# jump measures
# ---------------------------------------------------------------------------


def upper_gamma(s: float, z: float) -> float:
    """Upper incomplete gamma function Gamma(s, z) for z > 0 and any real s > -3."""
    if s > 0:
        return float(special.gamma(s) * special.gammaincc(s, z))
    if s == 0:
        return float(special.exp1(z))
    return (upper_gamma(s + 1, z) - z**s * math.exp(-z)) / s


class JumpMeasure:
    """Interface shared by the parametric jump families.

    ``phi_part(lam, order)`` is the order-th derivative of
    ``int (e^{lam x} - 1 - lam x) nu(dx)``; ``psi_part`` the matching piece of
    the characteristic exponent.  ``density``/``atoms`` back the quadrature
    fallback, which never calls the closed forms.
    """

    family = "abstract"
    finite_activity = True

    def validate(self) -> list[str]:
        return []

    def domain(self):
        return (-math.inf, math.inf, False, False)

    def phi_part(self, lam, order=0):
        raise NotImplementedError

    def psi_part(self, lam):
        raise NotImplementedError

    def tilt(self, theta) -> "JumpMeasure":
        raise UnsupportedOperation(f"{self.family} is not closed under tilting")

    def reflect(self) -> "JumpMeasure":
        raise NotImplementedError

    def is_lattice(self) -> bool:
        """True when nu is carried by a lattice {0, +-r, +-2r, ...}."""
        return False

    def atoms(self):
        return []

    def density(self, x):
        return 0.0

    def support(self):
        """Interval outside which the density underflows to zero."""
        return (-math.inf, math.inf)

    def integrate(self, g, lo=-math.inf, hi=math.inf, what="jump integral") -> float:
        """int_{lo}^{hi} g(x) nu(dx), by atoms plus quadrature over the density."""
        total = sum(w * g(x) for x, w in self.atoms() if lo <= x <= hi)
        s_lo, s_hi = self.support()
        a, b = max(lo, s_lo), min(hi, s_hi)
        if a < b and self.has_density:
            total += _quad_split(lambda x: g(x) * self.density(x), a, b, what)
        return total

    has_density = False

    def params(self) -> dict:
        return {}


@dataclass(frozen=True)
class ZeroJumps(JumpMeasure):
    family = "zero"

    def phi_part(self, lam, order=0):
        return 0.0

    def psi_part(self, lam):
        return 0j

    def tilt(self, theta):
        return self

    def reflect(self):
        return self

    def is_lattice(self):
        return True

    def params(self):
        return {}


@dataclass(frozen=True)
class CompoundPoisson(JumpMeasure):
    """nu(dx) = rate * law(dx) for a finite jump-size law."""

    rate: float
    law: PointMass | TwoSidedExponential | GaussianSize = field(default_factory=lambda: PointMass(1.0))

    family = "compound_poisson"
    finite_activity = True

    @property
    def has_density(self):
        return not isinstance(self.law, PointMass)

    def validate(self):
        out = [] if self.rate > 0 else ["compound_poisson rate must be > 0"]
        return out + self.law.validate()

    def domain(self):
        return self.law.domain()

    def phi_part(self, lam, order=0):
        m = self.law.mean
        if order == 0:
            return self.rate * (self.law.mgf(lam) - 1.0 - lam * m)
        if order == 1:
            return self.rate * (self.law.mgf(lam, 1) - m)
        return self.rate * self.law.mgf(lam, 2)

    def psi_part(self, lam):
        # int (1 - e^{i lam x} + i lam x) nu(dx)
        return self.rate * (1.0 - complex(self.law.mgf(1j * lam)) + 1j * lam * self.law.mean)

    def tilt(self, theta):
        law, mass = self.law.tilt(theta)
        return CompoundPoisson(self.rate * float(np.real(mass)), law)

    def reflect(self):
        return CompoundPoisson(self.rate, self.law.reflect())

    def is_lattice(self):
        return isinstance(self.law, PointMass)

    def atoms(self):
        return [(x, self.rate * w) for x, w in self.law.atoms()]

    def density(self, x):
        return self.rate * self.law.density(x)

    def support(self):
        law = self.law
        if isinstance(law, TwoSidedExponential):
            lo = -745.0 / law.eta_down if law.p_up < 1 else 0.0
            hi = 745.0 / law.eta_up if law.p_up > 0 else 0.0
            return (lo, hi)
        if isinstance(law, GaussianSize):
            return (law.mean_size - 38.0 * law.std, law.mean_size + 38.0 * law.std)
        return (-math.inf, math.inf)

    def params(self):
        return {"rate": self.rate, "size.family": self.law.family, **{f"size.{k}": v for k, v in self.law.params().items()}}


@dataclass(frozen=True)
class TemperedStable(JumpMeasure):
    """One-sided tempered stable: nu(dx) = c |x|^{-1-Y} e^{-tempering |x|} dx on one half-line.

    ``side = +1`` puts the mass on positive jumps, ``side = -1`` on negative ones.
    """

    scale: float
    index: float
    tempering: float
    side: int = 1

    family = "tempered_stable"
    finite_activity = False
    has_density = True

    def validate(self):
        out = []
        if self.scale <= 0:
            out.append("tempered_stable scale must be > 0")
        if not 0 < self.index < 2:
            out.append("tempered_stable index must lie in (0, 2)")
        if self.tempering <= 0:
            out.append("tempered_stable tempering rate must be > 0")
        if self.side not in (1, -1):
            out.append("tempered_stable side must be +1 or -1")
        return out

    def domain(self):
        if self.side == 1:
            return (-math.inf, self.tempering, False, True)
        return (-self.tempering, math.inf, True, False)

    def _positive(self, u, order):
        # derivatives of c*Gamma(-Y)[(th-u)^Y - th^Y + Y th^{Y-1} u] (Y = 1 handled by its limit)
        c, y, th = self.scale, self.index, self.tempering
        d = th - u
        if abs(y - 1.0) < 1e-12:
            if order == 0:
                return c * (d * np.log(d / th) + u) if d != 0 else c * u
            if order == 1:
                return -c * np.log(d / th)
            return c / d
        g = special.gamma(-y)
        if order == 0:
            return c * g * (d**y - th**y + y * th ** (y - 1) * u)
        if order == 1:
            return c * g * y * (th ** (y - 1) - d ** (y - 1))
        return c * g * y * (y - 1) * d ** (y - 2)

    def phi_part(self, lam, order=0):
        u = self.side * lam
        return self.side**order * self._positive(u, order)

    def psi_part(self, lam):
        return -complex(self._positive(self.side * 1j * lam, 0))

    def tilt(self, theta):
        return TemperedStable(self.scale, self.index, self.tempering - self.side * theta, self.side)

    def reflect(self):
        return TemperedStable(self.scale, self.index, self.tempering, -self.side)

    def support(self):
        cut = 745.0 / self.tempering
        return (0.0, cut) if self.side == 1 else (-cut, 0.0)

    def density(self, x):
        ax = abs(x)
        if ax == 0.0 or (x > 0) != (self.side == 1):
            return 0.0
        return self.scale * ax ** (-1.0 - self.index) * math.exp(-self.tempering * ax)

    # quantities used by the small-jump compensated sampler
    def small_jump_variance(self, eps):
        c, y, th = self.scale, self.index, self.tempering
        return c * th ** (y - 2) * special.gamma(2 - y) * special.gammainc(2 - y, th * eps)

    def big_jump_rate(self, eps):
        c, y, th = self.scale, self.index, self.tempering
        return c * th**y * upper_gamma(-y, th * eps)

    def big_jump_mean(self, eps):
        """Signed first moment of nu restricted to |x| > eps."""
        c, y, th = self.scale, self.index, self.tempering
        return self.side * c * th ** (y - 1) * upper_gamma(1 - y, th * eps)

    def second_moment(self):
        c, y, th = self.scale, self.index, self.tempering
        return c * special.gamma(2 - y) * th ** (y - 2)

    def params(self):
        return {"scale": self.scale, "index": self.index, "tempering": self.tempering, "side": self.side}


# ---------------------------------------------------------------------------
# triplets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LevyTriplet:
    drift_a: float = 0.0
    sigma: float = 0.0
    jumps: JumpMeasure = field(default_factory=ZeroJumps)

    def __post_init__(self):
        problems = validate_triplet(self)
        if problems:
            raise ValueError("; ".join(problems))

    def __str__(self):
        return f"LevyTriplet(a={self.drift_a:g}, sigma={self.sigma:g}, jumps={self.jumps.family}{self.jumps.params()})"


def validate_triplet(triplet: LevyTriplet) -> list[str]:
    out = []
    if not np.isfinite(triplet.drift_a):
        out.append("drift_a must be finite")
    if not (triplet.sigma >= 0):
        out.append(f"sigma must be >= 0 (got {triplet.sigma})")
    out += triplet.jumps.validate()
    return out


def brownian(a: float, sigma: float) -> LevyTriplet:
    """Brownian motion with mean increment ``-a`` and volatility ``sigma``."""
    return LevyTriplet(a, sigma)


@dataclass(frozen=True)
class ExponentDomain:
    lower: float
    upper: float
    lower_closed: bool = False
    upper_closed: bool = False

    def contains(self, lam: float) -> bool:
        if self.lower < lam < self.upper:
            return True
        return (lam == self.lower and self.lower_closed) or (lam == self.upper and self.upper_closed)

    def interior(self, lam: float) -> bool:
        return self.lower < lam < self.upper

    def __str__(self):
        lb = "[" if self.lower_closed else "("
        rb = "]" if self.upper_closed else ")"
        return f"{lb}{self.lower:g}, {self.upper:g}{rb}"


def exponent_domain(triplet: LevyTriplet) -> ExponentDomain:
    lo, hi, lc, hc = triplet.jumps.domain()
    return ExponentDomain(lo, hi, lc, hc)


def _expm1_minus_linear(u: float) -> float:
    # e^u - 1 - u without cancellation near 0
    if abs(u) < 1e-2:
        return u * u * (0.5 + u * (1 / 6 + u * (1 / 24 + u * (1 / 120 + u / 720))))
    return math.expm1(u) - u


def _linear_minus_sin(u: float) -> float:
    if abs(u) < 1e-2:
        u2 = u * u
        return u * u2 * (1 / 6 - u2 * (1 / 120 - u2 / 5040))
    return u - math.sin(u)


def _quad_phi(jumps: JumpMeasure, lam: float, order: int) -> float:
    def kernel(x):
        if order == 0:
            return _expm1_minus_linear(lam * x)
        if order == 1:
            return x * math.expm1(lam * x)
        return x * x * math.exp(lam * x)

    return jumps.integrate(kernel, what=f"Phi^({order}) jump part")


def laplace_exponent(triplet: LevyTriplet, lam, method: str = "closed"):
    """Phi(lam); ``+inf`` outside the exponent domain.

    Accepts scalars or arrays.  ``method="quad"`` evaluates the jump integral by
    adaptive quadrature on the density instead of the closed form.
    """
    if np.ndim(lam):
        return np.array([laplace_exponent(triplet, float(v), method) for v in np.ravel(lam)]).reshape(np.shape(lam))
    lam = float(lam)
    if lam == 0.0:
        return 0.0
    if not exponent_domain(triplet).contains(lam):
        return math.inf
    gauss = -triplet.drift_a * lam + 0.5 * triplet.sigma**2 * lam * lam
    if method == "quad":
        return gauss + _quad_phi(triplet.jumps, lam, 0)
    return gauss + float(triplet.jumps.phi_part(lam, 0))


def laplace_exponent_deriv(triplet: LevyTriplet, lam, order: int = 1, method: str = "closed"):
    """First or second derivative of Phi at an interior point of its domain."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if np.ndim(lam):
        return np.array([laplace_exponent_deriv(triplet, float(v), order, method) for v in np.ravel(lam)]).reshape(np.shape(lam))
    lam = float(lam)
    dom = exponent_domain(triplet)
    if not dom.interior(lam):
        raise DomainError(f"lambda={lam} is not interior to the exponent domain {dom}")
    if method == "quad":
        jump = _quad_phi(triplet.jumps, lam, order)
    else:
        jump = float(triplet.jumps.phi_part(lam, order))
    if order == 1:
        return -triplet.drift_a + triplet.sigma**2 * lam + jump
    return triplet.sigma**2 + jump


def characteristic_exponent(triplet: LevyTriplet, lam: float, method: str = "closed") -> complex:
    """Psi(lam) with E[exp(i lam xi(t))] = exp(-t Psi(lam))."""
    lam = float(lam)
    if lam == 0.0:
        return 0j
    base = 1j * triplet.drift_a * lam + 0.5 * triplet.sigma**2 * lam * lam
    if method == "quad":
        re = triplet.jumps.integrate(lambda x: 2.0 * math.sin(0.5 * lam * x) ** 2, what="Re Psi jump part")
        im = triplet.jumps.integrate(lambda x: _linear_minus_sin(lam * x), what="Im Psi jump part")
        return base + complex(re, im)
    return base + complex(triplet.jumps.psi_part(lam))


def mean_increment(triplet: LevyTriplet) -> float:
    """E[xi(1)] = Phi'(0), read off the exponent rather than from the sign of ``a``."""
    return laplace_exponent_deriv(triplet, 0.0, 1)


def esscher(triplet: LevyTriplet, theta: float) -> LevyTriplet:
    """Triplet of xi under the measure tilted by exp(theta xi(t) - Phi(theta) t)."""
    theta = float(theta)
    if theta == 0.0:
        return triplet
    dom = exponent_domain(triplet)
    if not dom.interior(theta):
        raise DomainError(f"theta={theta} is not interior to the exponent domain {dom}")
    jumps = triplet.jumps.tilt(theta)
    # the tilted mean is Phi'(theta); jump parts are compensated so drift_a = -mean
    return LevyTriplet(-laplace_exponent_deriv(triplet, theta, 1), triplet.sigma, jumps)


def dual(triplet: LevyTriplet) -> LevyTriplet:
    """Triplet of -xi."""
    return LevyTriplet(-triplet.drift_a, triplet.sigma, triplet.jumps.reflect())


def scale_time(triplet: LevyTriplet, c: float) -> LevyTriplet:
    """Triplet of xi(c t); Phi is multiplied by ``c``."""
    j = triplet.jumps
    if isinstance(j, CompoundPoisson):
        j = CompoundPoisson(j.rate * c, j.law)
    elif isinstance(j, TemperedStable):
        j = TemperedStable(j.scale * c, j.index, j.tempering, j.side)
    return LevyTriplet(triplet.drift_a * c, triplet.sigma * math.sqrt(c), j)


def satisfies_nonlattice(triplet: LevyTriplet) -> bool:
    """Re Psi(lam) > 0 for lam != 0: sigma > 0 or nu not carried by a lattice."""
    return triplet.sigma > 0 or not triplet.jumps.is_lattice()


def find_rho(triplet: LevyTriplet, beta: float, tol_scale: float = 1e-10) -> float:
    """The unique root of Phi' in (0, beta); needs Phi'(0) < 0 < Phi'(beta)."""
    dom = exponent_domain(triplet)
    if not (dom.interior(0.0) and dom.interior(beta) and beta > 0):
        raise DomainError(f"[0, {beta}] is not inside the interior of the exponent domain {dom}")
    d0 = laplace_exponent_deriv(triplet, 0.0, 1)
    db = laplace_exponent_deriv(triplet, beta, 1)
    # derivatives within rounding of zero are boundary cases, not brackets
    eps = tol_scale * max(1.0, laplace_exponent_deriv(triplet, beta, 2))
    if not (d0 < -eps and db > eps):
        raise RegimeMismatch(
            f"find_rho needs Phi'(0) < 0 < Phi'(beta); found Phi'(0) = {d0:.6g}, Phi'({beta:g}) = {db:.6g}"
        )
    f = lambda lam: laplace_exponent_deriv(triplet, lam, 1)
    rho = optimize.brentq(f, 0.0, beta, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    # Newton polish, kept inside the bracket
    for _ in range(5):
        d1 = f(rho)
        d2 = laplace_exponent_deriv(triplet, rho, 2)
        if abs(d1) <= tol_scale * max(1.0, abs(d2)):
            break
        step = rho - d1 / d2
        if 0.0 < step < beta:
            rho = step
    d1, d2 = f(rho), laplace_exponent_deriv(triplet, rho, 2)
    if abs(d1) > tol_scale * max(1.0, abs(d2)):
        raise QuadratureError(f"root polish failed: |Phi'(rho)| = {abs(d1):.3g}")
    return float(rho)


class RegimeKind(str, enum.Enum):
    SUPERCRITICAL = "supercritical"
    CRITICAL = "critical"
    WEAKLY_SUBCRITICAL = "weakly_subcritical"
    INTERMEDIATELY_SUBCRITICAL = "intermediately_subcritical"
    STRONGLY_SUBCRITICAL = "strongly_subcritical"


@dataclass(frozen=True)
class Regime:
    """Which of the five decay laws applies, with the exponent values it needs.

    The decay law is ``E[F(A_t)] ~ C * t**poly_exponent * exp(rate * t)``.
    """

    kind: RegimeKind
    beta: float
    mean: float
    dphi_beta: float
    rho: float | None = None
    phi_value: float = 0.0
    phi2_value: float = 0.0

    @property
    def rate(self) -> float:
        return self.phi_value if self.kind not in (RegimeKind.SUPERCRITICAL, RegimeKind.CRITICAL) else 0.0

    @property
    def poly_exponent(self) -> float:
        return {
            RegimeKind.SUPERCRITICAL: 0.0,
            RegimeKind.CRITICAL: -0.5,
            RegimeKind.WEAKLY_SUBCRITICAL: -1.5,
            RegimeKind.INTERMEDIATELY_SUBCRITICAL: -0.5,
            RegimeKind.STRONGLY_SUBCRITICAL: 0.0,
        }[self.kind]

    @property
    def tilt(self) -> float | None:
        """Change-of-measure parameter used by the importance sampler in this regime."""
        if self.kind is RegimeKind.WEAKLY_SUBCRITICAL:
            return self.rho
        if self.kind in (RegimeKind.INTERMEDIATELY_SUBCRITICAL, RegimeKind.STRONGLY_SUBCRITICAL):
            return self.beta
        return None

    def as_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "beta": self.beta,
            "mean_increment": self.mean,
            "dphi_beta": self.dphi_beta,
            "rho": self.rho,
            "phi_value": self.phi_value,
            "phi2_value": self.phi2_value,
            "predicted_rate": self.rate,
            "predicted_poly_exponent": self.poly_exponent,
        }


def classify_regime(triplet: LevyTriplet, beta: float, tol: float = 1e-8, exact_critical: bool = True) -> Regime:
    """Place ``(triplet, beta)`` in one of the five regimes.

    A derivative within ``tol`` of zero counts as a boundary case (critical or
    intermediately subcritical).  Pass ``exact_critical=False`` to forbid
    boundary answers: a near-zero derivative then raises RegimeMismatch.
    """
    dom = exponent_domain(triplet)
    if not (beta > 0 and dom.interior(beta) and dom.interior(0.0)):
        raise DomainError(f"beta={beta} must lie in the interior of D_+(Phi) = {dom} (and 0 must be interior)")
    m = mean_increment(triplet)
    db = laplace_exponent_deriv(triplet, beta, 1)

    def boundary(value, what):
        if abs(value) <= tol:
            if not exact_critical:
                raise RegimeMismatch(f"{what} = {value:.3g} is within tol={tol:g} of zero but exact_critical=False")
            return True
        return False

    if not boundary(m, "Phi'(0)") and m > 0:
        return Regime(RegimeKind.SUPERCRITICAL, beta, m, db, phi2_value=laplace_exponent_deriv(triplet, 0.0, 2))
    if abs(m) <= tol:
        return Regime(RegimeKind.CRITICAL, beta, m, db, phi2_value=laplace_exponent_deriv(triplet, 0.0, 2))
    if not boundary(db, f"Phi'({beta:g})") and db > 0:
        rho = find_rho(triplet, beta)
        return Regime(
            RegimeKind.WEAKLY_SUBCRITICAL, beta, m, db, rho,
            laplace_exponent(triplet, rho), laplace_exponent_deriv(triplet, rho, 2),
        )
    kind = RegimeKind.INTERMEDIATELY_SUBCRITICAL if abs(db) <= tol else RegimeKind.STRONGLY_SUBCRITICAL
    return Regime(kind, beta, m, db, None, laplace_exponent(triplet, beta), laplace_exponent_deriv(triplet, beta, 2))


# ---------------------------------------------------------------------------
# flat key/value form
# ---------------------------------------------------------------------------


def jumps_to_params(jumps: JumpMeasure) -> dict:
    return {"family": jumps.family, **jumps.params()}


def jumps_from_params(params: dict) -> JumpMeasure:
    family = params.get("family", "zero")
    if family == "zero":
        return ZeroJumps()
    if family == "compound_poisson":
        size_family = params.get("size.family", "point_mass")
        if size_family == "point_mass":
            law = PointMass(float(params["size.size"]))
        elif size_family == "two_sided_exponential":
            law = TwoSidedExponential(float(params["size.p_up"]), float(params["size.eta_up"]), float(params["size.eta_down"]))
        elif size_family == "gaussian":
            law = GaussianSize(float(params["size.mean"]), float(params["size.std"]))
        else:
            raise ValueError(f"unknown jump size family {size_family!r}")
        return CompoundPoisson(float(params["rate"]), law)
    if family == "tempered_stable":
        return TemperedStable(
            float(params["scale"]), float(params["index"]), float(params["tempering"]), int(params.get("side", 1))
        )
    raise ValueError(f"unknown jump family {family!r}")


def triplet_to_params(triplet: LevyTriplet) -> dict:
    out = {"drift_a": triplet.drift_a, "sigma": triplet.sigma}
    out.update({f"jump.{k}": v for k, v in jumps_to_params(triplet.jumps).items()})
    return out


def triplet_from_params(params: dict) -> LevyTriplet:
    jump = {k[len("jump."):]: v for k, v in params.items() if k.startswith("jump.")}
    return LevyTriplet(float(params.get("drift_a", 0.0)), float(params.get("sigma", 0.0)), jumps_from_params(jump))


def triplet_hash(triplet: LevyTriplet) -> str:
    text = "\n".join(f"{k}={v!r}" for k, v in sorted(triplet_to_params(triplet).items()))
    return hashlib.sha256(text.encode()).hexdigest()[:16]
