"""Exponential functionals of Lévy processes: decay regimes, limit constants and
survival of stable branching processes in a Lévy random environment."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DomainError,
    FitError,
    InfiniteFunctional,
    LevyError,
    QuadratureError,
    RegimeMismatch,
    UnsupportedOperation,
)
from .levy_core import (
    CompoundPoisson,
    GaussianSize,
    LevyTriplet,
    PointMass,
    Regime,
    RegimeKind,
    TemperedStable,
    TwoSidedExponential,
    ZeroJumps,
    brownian,
    classify_regime,
    dual,
    esscher,
    exponent_domain,
    find_rho,
    laplace_exponent,
    laplace_exponent_deriv,
    mean_increment,
)
from .path_sim import SimConfig, exp_functional, exp_functional_inf, simulate_path
