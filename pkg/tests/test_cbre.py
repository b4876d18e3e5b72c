import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levyexp.cbre import (
    CbreParams,
    EnvironmentSpec,
    classify_cbre,
    environment_drift,
    environment_for_drift,
    ode_residual,
    survival_probability,
    u_transform,
    xi_from_environment,
    zero_environment_survival,
)
from levyexp.errors import DomainError
from levyexp.levy_core import (
    CompoundPoisson,
    GaussianSize,
    RegimeKind,
    TwoSidedExponential,
    laplace_exponent_deriv,
    mean_increment,
)
from levyexp.path_sim import PathSample, SimConfig, exp_functional, exp_functional_inf, simulate_path

import oracles

SQRT2 = math.sqrt(2.0)


def test_pure_drift_environment():
    env = EnvironmentSpec(0.7)
    assert environment_drift(env) == 0.7
    assert mean_increment(xi_from_environment(env)) == pytest.approx(0.7)


def test_brownian_environment():
    env = EnvironmentSpec(1.5, 0.8)
    assert environment_drift(env) == pytest.approx(1.5 - 0.32)
    xi = xi_from_environment(env)
    assert xi.sigma == 0.8 and mean_increment(xi) == pytest.approx(1.18)


def test_jump_environment_drift_against_quadrature():
    law = TwoSidedExponential(0.4, 2.5, 1.5)
    jumps = CompoundPoisson(1.3, law)

    def dens(z):
        return 1.3 * (0.4 * 2.5 * mp.e ** (-2.5 * z) if z > 0 else 0.6 * 1.5 * mp.e ** (1.5 * z))

    inner = mp.quad(lambda z: (mp.expm1(z) - z) * dens(z), [-1, 0, 1])
    outer = mp.quad(lambda z: z * dens(z), [-mp.inf, -1]) + mp.quad(lambda z: z * dens(z), [1, mp.inf])
    want = 0.9 - 0.5 * 0.3**2 - float(inner) + float(outer)
    assert environment_drift(EnvironmentSpec(0.9, 0.3, jumps)) == pytest.approx(want, rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(0, 2), st.booleans())
def test_environment_for_drift_inverts(a0, sigma, with_jumps):
    jumps = CompoundPoisson(0.8, GaussianSize(-0.2, 0.4)) if with_jumps else None
    env = environment_for_drift(a0, sigma, jumps)
    assert environment_drift(env) == pytest.approx(a0, abs=1e-10)
    assert mean_increment(xi_from_environment(env)) == pytest.approx(a0, abs=1e-9)


# ---------------------------------------------------------------------------
# u transform
# ---------------------------------------------------------------------------


def _zero_path(T=5.0, h=0.01):
    return simulate_path(brownian0(), SimConfig(step_h=h, horizon_t=T, n_paths=1, seed=0))


def brownian0():
    from levyexp.levy_core import LevyTriplet

    return LevyTriplet(0.0, 0.0)


def test_u_empty_interval_returns_lambda():
    p = simulate_path(xi_from_environment(EnvironmentSpec(0.0, 1.0)), SimConfig(step_h=0.1, horizon_t=3.0, n_paths=1, seed=1))
    for lam in (0.3, 2.0, 17.0):
        assert u_transform(p, 1.0, 1.0, lam, 1.0, 0.5) == pytest.approx(lam)


def test_u_zero_path_closed_form():
    p = _zero_path()
    for c, alpha, t in ((1.0, 1.0, 2.0), (0.5, 0.5, 5.0), (2.0, 0.3, 1.0)):
        assert u_transform(p, 0.0, t, math.inf, c, alpha) == pytest.approx((c * alpha * t) ** (-1 / alpha), rel=1e-9)


def test_u_divergent_marker():
    assert u_transform(_zero_path(), 0.0, 2.0, math.inf, 0.0, 0.5) == math.inf


def test_ode_residual_first_order():
    def sample(h):
        times = np.round(np.arange(0.0, 2.0 + h / 2, h), 12)
        return PathSample(times, np.sin(3 * times))

    r1 = np.abs(ode_residual(sample(0.01), 2.0, 1.5, 1.0, 0.5)).max()
    r2 = np.abs(ode_residual(sample(0.005), 2.0, 1.5, 1.0, 0.5)).max()
    assert r1 < 0.1
    assert math.log2(r1 / r2) == pytest.approx(1.0, abs=0.15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10), st.floats(0.2, 1.0), st.floats(0.2, 3))
def test_flow_property(seed, lam, alpha, c):
    rng = np.random.default_rng(seed)
    h = 0.05
    times = np.round(np.arange(0.0, 4.0 + h / 2, h), 12)
    p = PathSample(times, np.cumsum(np.r_[0.0, rng.normal(0, math.sqrt(h), times.size - 1)]))
    r, s, t = np.sort(rng.choice(times, 3, replace=False))
    direct = u_transform(p, r, t, lam, c, alpha)
    composed = u_transform(p, r, s, u_transform(p, s, t, lam, c, alpha), c, alpha)
    assert composed == pytest.approx(direct, rel=1e-12)


def test_u_off_grid_rejected():
    with pytest.raises(ValueError):
        u_transform(_zero_path(h=0.1), 0.05, 1.0, 1.0, 1.0, 1.0)


# ---------------------------------------------------------------------------
# survival
# ---------------------------------------------------------------------------


def test_zero_environment_closed_form():
    params = CbreParams(1.3, 0.8, 0.5, EnvironmentSpec(0.0))
    t = np.array([0.0, 0.5, 1.0, 2.0, 4.0])
    s = survival_probability(params, t, SimConfig(step_h=0.5, n_paths=50, seed=1))
    np.testing.assert_allclose(s.p, zero_environment_survival(1.3, 0.8, 0.5, t), atol=1e-12)
    assert s.p[0] == 1.0
    want = [oracles.stable_csbp_survival(1.3, 0.8, 0.5, v) for v in t[1:]]
    np.testing.assert_allclose(s.p[1:], want, rtol=1e-12)


@pytest.fixture(scope="module")
def shared_env():
    env = environment_for_drift(0.0, SQRT2)
    cfg = SimConfig(step_h=0.05, n_paths=20_000, seed=17)
    return env, cfg


def test_survival_range_and_monotone(shared_env):
    env, cfg = shared_env
    s = survival_probability(CbreParams(1.0, 1.0, 0.7, env), np.arange(0.0, 20.1, 1.0), cfg)
    assert np.all((s.p >= 0) & (s.p <= 1))
    assert s.as_curve().monotone_violations(2.0) == []


def test_survival_monotone_in_x0_pathwise(shared_env):
    env, cfg = shared_env
    t = np.arange(1.0, 10.1, 1.0)
    small = survival_probability(CbreParams(0.5, 1.0, 0.7, env), t, cfg)
    large = survival_probability(CbreParams(2.0, 1.0, 0.7, env), t, cfg)
    assert np.all(large.p >= small.p)


def test_branch_free_consistency():
    env = environment_for_drift(0.3, 1.0)
    xi = xi_from_environment(env)
    cfg = SimConfig(step_h=0.1, horizon_t=3.0, n_paths=200, seed=2)
    paths = simulate_path(xi, cfg)
    x0, c, alpha = 1.7, 0.9, 0.6
    u = u_transform(paths, 0.0, 3.0, math.inf, c, alpha)
    a = exp_functional(paths, alpha).value
    tail = CbreParams(x0, c, alpha, env).tail
    np.testing.assert_array_equal(-np.expm1(-x0 * u), tail(a))


def test_supercritical_plateau_is_one_minus_extinction():
    env = environment_for_drift(1.0, SQRT2)
    params = CbreParams(1.0, 1.0, 1.0, env)
    cfg = SimConfig(step_h=0.02, n_paths=30_000, seed=3)
    s = survival_probability(params, [10.0, 20.0, 40.0], cfg)
    a = exp_functional_inf(xi_from_environment(env), 1.0, cfg.with_(seed=4, rel_tol=1e-6)).value
    direct = params.tail(a)
    se = direct.std() / math.sqrt(direct.size)
    assert abs(s.p[-1] - direct.mean()) < 3 * math.hypot(s.stderr[-1], se)
    # inverse-gamma oracle for the Brownian environment
    shape, scale = oracles.dufresne_params(1.0, SQRT2, 1.0)
    exact = oracles.inverse_gamma_expectation(lambda z: 1 - mp.e ** (-1 / z), shape, scale)
    assert abs(s.p[-1] - exact) < 3 * s.stderr[-1] + 0.01


# ---------------------------------------------------------------------------
# regimes
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "a0,kind,label",
    [
        (1.0, RegimeKind.SUPERCRITICAL, "Supercritical"),
        (0.0, RegimeKind.CRITICAL, "Critical"),
        (-0.5, RegimeKind.WEAKLY_SUBCRITICAL, "Weakly subcritical"),
        (-2.0, RegimeKind.INTERMEDIATELY_SUBCRITICAL, "Intermediately subcritical"),
        (-3.0, RegimeKind.STRONGLY_SUBCRITICAL, "Strongly subcritical"),
    ],
)
def test_classify_cbre_brownian(a0, kind, label):
    reg = classify_cbre(CbreParams(1.0, 1.0, 1.0, environment_for_drift(a0, SQRT2)))
    assert reg.regime.kind is kind and reg.label == label


def test_intermediate_constant_uses_k():
    x0, c, alpha = 2.0, 0.5, 0.5
    env = environment_for_drift(-2.0, SQRT2)
    assert laplace_exponent_deriv(xi_from_environment(env), 1.0, 1) == pytest.approx(0.0, abs=1e-12)
    reg = classify_cbre(CbreParams(x0, c, alpha, env))
    assert reg.label == "Intermediately subcritical"
    assert reg.K == pytest.approx(x0 * (c * alpha) ** (-1 / alpha))
    assert "x (c alpha)^(-1/alpha)" in reg.constant_formula


def test_classify_domain_and_param_errors():
    narrow = CompoundPoisson(1.0, TwoSidedExponential(0.5, 0.8, 2.0))
    with pytest.raises(DomainError):
        classify_cbre(CbreParams(1.0, 1.0, 1.0, EnvironmentSpec(0.0, 1.0, narrow)))
    with pytest.raises(DomainError):
        classify_cbre(CbreParams(-1.0, 1.0, 1.0, EnvironmentSpec(0.0)))
    with pytest.raises(DomainError):
        survival_probability(CbreParams(1.0, 1.0, 1.5, EnvironmentSpec(0.0)), [1.0], SimConfig())
