import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levyexp.errors import DomainError, RegimeMismatch
from levyexp.levy_core import (
    CompoundPoisson,
    GaussianSize,
    LevyTriplet,
    PointMass,
    RegimeKind,
    TemperedStable,
    TwoSidedExponential,
    ZeroJumps,
    brownian,
    characteristic_exponent,
    classify_regime,
    dual,
    esscher,
    exponent_domain,
    find_rho,
    laplace_exponent,
    laplace_exponent_deriv,
    mean_increment,
    satisfies_nonlattice,
    scale_time,
    triplet_from_params,
    triplet_hash,
    triplet_to_params,
    upper_gamma,
)

import oracles

SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# [DERIVED] values against independent oracles
# ---------------------------------------------------------------------------


def test_brownian_polynomial():
    t = brownian(1.0, SQRT2)
    assert laplace_exponent(t, 1.0) == pytest.approx(0.0, abs=1e-15)
    for lam in (-2.0, -0.3, 0.5, 1.7, 4.0):
        assert laplace_exponent(t, lam) == pytest.approx(oracles.phi_brownian(1.0, SQRT2, lam), rel=1e-13)


def test_unit_point_mass_gives_e_minus_two():
    t = LevyTriplet(0.0, 0.0, CompoundPoisson(1.0, PointMass(1.0)))
    assert laplace_exponent(t, 1.0) == pytest.approx(math.e - 2, rel=1e-14)


def test_derivative_examples():
    t = brownian(1.0, SQRT2)
    assert laplace_exponent_deriv(t, 0.0, 1) == pytest.approx(-1.0)
    assert laplace_exponent_deriv(t, 0.0, 2) == pytest.approx(2.0)
    pm = LevyTriplet(0.0, 0.0, CompoundPoisson(1.0, PointMass(1.0)))
    assert laplace_exponent_deriv(pm, 0.0, 1) == 0.0


CASES = [
    (
        LevyTriplet(0.3, 0.7, CompoundPoisson(1.5, PointMass(-0.8))),
        lambda lam, o: oracles.phi_point_mass(0.3, 0.7, 1.5, -0.8, lam, o),
        (-2.0, -0.5, 0.4, 1.3),
    ),
    (
        LevyTriplet(-0.2, 0.5, CompoundPoisson(2.0, TwoSidedExponential(0.4, 3.0, 2.0))),
        lambda lam, o: oracles.phi_two_sided_exp(-0.2, 0.5, 2.0, 0.4, 3.0, 2.0, lam, o),
        (-1.5, -0.2, 0.9, 2.5),
    ),
    (
        LevyTriplet(0.1, 0.0, CompoundPoisson(0.7, GaussianSize(0.3, 0.6))),
        lambda lam, o: oracles.phi_gaussian_jumps(0.1, 0.0, 0.7, 0.3, 0.6, lam, o),
        (-2.0, -0.4, 0.8, 2.0),
    ),
    (
        LevyTriplet(0.5, 0.3, TemperedStable(0.8, 0.6, 2.0, 1)),
        lambda lam, o: oracles.phi_tempered_stable(0.5, 0.3, 0.8, 0.6, 2.0, 1, lam, o),
        (-1.0, 0.3, 1.2, 1.9),
    ),
    (
        LevyTriplet(0.0, 1.0, TemperedStable(0.5, 1.5, 1.5, -1)),
        lambda lam, o: oracles.phi_tempered_stable(0.0, 1.0, 0.5, 1.5, 1.5, -1, lam, o),
        (-1.4, -0.5, 0.7, 3.0),
    ),
    (
        LevyTriplet(0.2, 0.0, TemperedStable(1.0, 1.0, 1.0, 1)),
        lambda lam, o: oracles.phi_tempered_stable(0.2, 0.0, 1.0, 1.0, 1.0, 1, lam, o),
        (-1.0, 0.5, 0.9),
    ),
]


@pytest.mark.parametrize("triplet,oracle,lams", CASES)
@pytest.mark.parametrize("order", [0, 1, 2])
def test_exponent_against_mpmath(triplet, oracle, lams, order):
    for lam in lams:
        got = laplace_exponent(triplet, lam) if order == 0 else laplace_exponent_deriv(triplet, lam, order)
        want = oracle(lam, order)
        assert got == pytest.approx(want, rel=1e-9, abs=1e-12), (lam, order)


@pytest.mark.parametrize("triplet,oracle,lams", CASES)
def test_quad_method_matches_closed_form(triplet, oracle, lams):
    for lam in lams:
        assert laplace_exponent(triplet, lam, method="quad") == pytest.approx(laplace_exponent(triplet, lam), rel=1e-7, abs=1e-10)


def test_characteristic_exponent_examples():
    assert characteristic_exponent(LevyTriplet(0.0, 1.0), 2.0) == pytest.approx(2.0 + 0j)
    pm = LevyTriplet(0.0, 0.0, CompoundPoisson(1.0, PointMass(1.0)))
    assert characteristic_exponent(pm, math.pi) == pytest.approx(2.0 + 1j * math.pi)
    for t, _, _ in CASES:
        assert characteristic_exponent(t, 0.0) == 0


@pytest.mark.parametrize("triplet,oracle,lams", CASES[:4])
def test_characteristic_exponent_matches_quadrature(triplet, oracle, lams):
    for lam in (0.3, 1.1, 2.7):
        assert characteristic_exponent(triplet, lam, method="quad") == pytest.approx(
            characteristic_exponent(triplet, lam), rel=1e-7, abs=1e-10
        )


def test_characteristic_exponent_matches_empirical_cf():
    # E exp(i lam xi(1)) = exp(-Psi(lam)) for a compound Poisson with Gaussian sizes
    t = LevyTriplet(0.2, 0.4, CompoundPoisson(1.3, GaussianSize(0.5, 0.3)))
    rng = np.random.default_rng(5)
    n = 400_000
    k = rng.poisson(1.3, n)
    x = -0.2 + 0.4 * rng.standard_normal(n) + 0.5 * k + 0.3 * np.sqrt(k) * rng.standard_normal(n)
    x -= 1.3 * 0.5  # compensated jumps
    for lam in (0.5, 1.5):
        emp = np.mean(np.exp(1j * lam * x))
        assert abs(emp - cmath.exp(-characteristic_exponent(t, lam))) < 5e-3


def test_domain_examples():
    d = exponent_domain(brownian(3.0, 1.0))
    assert (d.lower, d.upper) == (-math.inf, math.inf)
    d = exponent_domain(LevyTriplet(0.0, 1.0, CompoundPoisson(1.0, TwoSidedExponential(0.5, 3.0, 2.0))))
    assert (d.lower, d.upper, d.lower_closed, d.upper_closed) == (-2.0, 3.0, False, False)
    d = exponent_domain(LevyTriplet(0.0, 0.0, TemperedStable(1.0, 0.5, 1.0, 1)))
    assert d.upper == 1.0 and d.upper_closed


def test_outside_domain_is_infinite_and_derivative_raises():
    t = LevyTriplet(0.0, 1.0, CompoundPoisson(1.0, TwoSidedExponential(0.5, 3.0, 2.0)))
    assert laplace_exponent(t, 3.5) == math.inf
    assert laplace_exponent(t, 3.0) == math.inf
    with pytest.raises(DomainError):
        laplace_exponent_deriv(t, 3.0, 1)
    ts = LevyTriplet(0.0, 0.0, TemperedStable(1.0, 0.5, 1.0, 1))
    assert math.isfinite(laplace_exponent(ts, 1.0))
    assert laplace_exponent(ts, 1.0) == pytest.approx(oracles.phi_tempered_stable(0, 0, 1.0, 0.5, 1.0, 1, 1.0), rel=1e-8)


def test_esscher_examples():
    t = esscher(brownian(1.0, SQRT2), 0.5)
    assert t.drift_a == pytest.approx(0.0, abs=1e-15) and t.sigma == SQRT2 and isinstance(t.jumps, ZeroJumps)
    base = LevyTriplet(0.4, 0.3, CompoundPoisson(2.0, TwoSidedExponential(0.5, 3.0, 2.0)))
    assert esscher(base, 0.0) is base
    tilted = esscher(base, 1.0)
    assert tilted.jumps.law.eta_up == pytest.approx(2.0)
    assert tilted.jumps.law.eta_down == pytest.approx(3.0)
    # rate times tilted law equals e^{x} times the old density
    for x in (-0.7, 0.2, 1.5):
        assert tilted.jumps.density(x) == pytest.approx(math.exp(x) * base.jumps.density(x), rel=1e-12)
    with pytest.raises(DomainError):
        esscher(base, 3.0)


def test_dual_example():
    d = dual(LevyTriplet(1.0, 0.0, CompoundPoisson(1.0, PointMass(1.0))))
    assert d.drift_a == -1.0 and d.sigma == 0.0
    assert d.jumps.rate == 1.0 and d.jumps.law == PointMass(-1.0)


def test_find_rho_examples():
    t = brownian(1.0, SQRT2)
    rho = find_rho(t, 1.0)
    assert rho == pytest.approx(0.5, abs=1e-12)
    assert laplace_exponent(t, rho) == pytest.approx(-0.25, abs=1e-12)
    assert find_rho(t, 0.6) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(RegimeMismatch, match="Phi'"):
        find_rho(brownian(2.0, SQRT2), 1.0)


@pytest.mark.parametrize(
    "a,kind",
    [
        (-1.0, RegimeKind.SUPERCRITICAL),
        (0.0, RegimeKind.CRITICAL),
        (1.0, RegimeKind.WEAKLY_SUBCRITICAL),
        (2.0, RegimeKind.INTERMEDIATELY_SUBCRITICAL),
        (3.0, RegimeKind.STRONGLY_SUBCRITICAL),
    ],
)
def test_classify_canonical(a, kind):
    reg = classify_regime(brownian(a, SQRT2), 1.0)
    assert reg.kind is kind
    if kind is RegimeKind.WEAKLY_SUBCRITICAL:
        assert reg.rho == pytest.approx(0.5) and reg.rate == pytest.approx(-0.25)
    if kind is RegimeKind.STRONGLY_SUBCRITICAL:
        assert reg.rate == pytest.approx(-2.0)


def test_classify_boundary_strictness():
    with pytest.raises(RegimeMismatch):
        classify_regime(brownian(1e-12, SQRT2), 1.0, exact_critical=False)
    with pytest.raises(DomainError):
        classify_regime(LevyTriplet(0.0, 1.0, CompoundPoisson(1.0, TwoSidedExponential(0.5, 3.0, 2.0))), 3.0)


def test_upper_gamma_negative_order():
    import mpmath as mp

    for s in (-1.5, -1.0, -0.5, 0.0, 0.7):
        for z in (0.1, 1.0, 3.0):
            assert upper_gamma(s, z) == pytest.approx(float(mp.gammainc(s, z)), rel=1e-10)


def test_nonlattice_flag():
    assert not satisfies_nonlattice(LevyTriplet(0.0, 0.0, CompoundPoisson(1.0, PointMass(1.0))))
    assert satisfies_nonlattice(LevyTriplet(0.0, 0.1, CompoundPoisson(1.0, PointMass(1.0))))
    assert satisfies_nonlattice(LevyTriplet(0.0, 0.0, CompoundPoisson(1.0, GaussianSize(0.0, 1.0))))


def test_invalid_triplets_rejected():
    with pytest.raises(ValueError, match="sigma"):
        LevyTriplet(0.0, -1.0)
    with pytest.raises(ValueError):
        LevyTriplet(0.0, 1.0, TemperedStable(1.0, 2.5, 1.0))


def test_params_round_trip_and_hash():
    for t, _, _ in CASES:
        back = triplet_from_params(triplet_to_params(t))
        assert back == t
        assert triplet_hash(back) == triplet_hash(t)
    assert triplet_hash(CASES[0][0]) != triplet_hash(CASES[1][0])


# ---------------------------------------------------------------------------
# invariants as properties
# ---------------------------------------------------------------------------

finite = dict(allow_nan=False, allow_infinity=False)


@st.composite
def triplets(draw):
    a = draw(st.floats(-3, 3, **finite))
    sigma = draw(st.floats(0, 2, **finite))
    fam = draw(st.sampled_from(["zero", "point", "tse", "gauss", "ts"]))
    if fam == "zero":
        jumps = ZeroJumps()
        if sigma == 0:
            sigma = 0.5
    elif fam == "point":
        jumps = CompoundPoisson(draw(st.floats(0.1, 3, **finite)), PointMass(draw(st.sampled_from([-1.0, -0.5, 0.5, 1.2]))))
    elif fam == "tse":
        jumps = CompoundPoisson(
            draw(st.floats(0.1, 3, **finite)),
            TwoSidedExponential(draw(st.floats(0, 1, **finite)), draw(st.floats(1.5, 5, **finite)), draw(st.floats(1.5, 5, **finite))),
        )
    elif fam == "gauss":
        jumps = CompoundPoisson(draw(st.floats(0.1, 3, **finite)), GaussianSize(draw(st.floats(-1, 1, **finite)), draw(st.floats(0.1, 1, **finite))))
    else:
        jumps = TemperedStable(
            draw(st.floats(0.1, 2, **finite)),
            draw(st.sampled_from([0.3, 0.7, 1.0, 1.4, 1.8])),
            draw(st.floats(1.5, 4, **finite)),
            draw(st.sampled_from([1, -1])),
        )
    return LevyTriplet(a, sigma, jumps)


def _interior_points(t, n=7, cap=1.2):
    d = exponent_domain(t)
    lo = max(d.lower, -cap * 2)
    hi = min(d.upper, cap * 2)
    return np.linspace(lo, hi, n + 2)[1:-1]


@settings(max_examples=60, deadline=None)
@given(triplets())
def test_phi_zero_at_origin(t):
    assert laplace_exponent(t, 0.0) == 0.0


@settings(max_examples=60, deadline=None)
@given(triplets())
def test_convexity(t):
    lam = _interior_points(t)
    phi = laplace_exponent(t, lam)
    second = phi[:-2] - 2 * phi[1:-1] + phi[2:]
    assert np.all(second >= -1e-9 * (1 + np.abs(phi[1:-1])))


@settings(max_examples=60, deadline=None)
@given(triplets(), st.floats(-0.7, 0.7), st.floats(-0.7, 0.7))
def test_esscher_consistency(t, theta_frac, lam_frac):
    d = exponent_domain(t)
    lo, hi = max(d.lower, -2.0), min(d.upper, 2.0)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    theta = mid + theta_frac * half
    lam = mid + lam_frac * half - theta
    tilted = esscher(t, theta)
    want = laplace_exponent(t, lam + theta) - laplace_exponent(t, theta)
    assert laplace_exponent(tilted, lam) == pytest.approx(want, rel=1e-9, abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(triplets())
def test_derivatives_match_finite_differences(t):
    for lam in _interior_points(t, 3):
        for order in (1, 2):
            h = 1e-4 if order == 1 else 1e-3
            f = lambda x: laplace_exponent(t, x) if order == 1 else laplace_exponent_deriv(t, x, 1)
            fd = (f(lam + h) - f(lam - h)) / (2 * h)
            got = laplace_exponent_deriv(t, lam, order)
            assert got == pytest.approx(fd, rel=1e-5, abs=1e-7)


@settings(max_examples=40, deadline=None)
@given(triplets(), st.floats(0.1, 10))
def test_time_scaling_preserves_regime(t, c):
    d = exponent_domain(t)
    beta = min(1.0, 0.5 * d.upper)
    try:
        base = classify_regime(t, beta)
    except RegimeMismatch:
        return
    scaled = scale_time(t, c)
    for lam in _interior_points(t, 3):
        assert laplace_exponent(scaled, lam) == pytest.approx(c * laplace_exponent(t, lam), rel=1e-9, abs=1e-12)
    assert classify_regime(scaled, beta).kind is base.kind


@settings(max_examples=40, deadline=None)
@given(triplets())
def test_dual_reflects_exponent(t):
    d = dual(t)
    for lam in _interior_points(t, 3):
        assert laplace_exponent(d, -lam) == pytest.approx(laplace_exponent(t, lam), rel=1e-10, abs=1e-12)
    assert mean_increment(d) == pytest.approx(-mean_increment(t), abs=1e-12)
