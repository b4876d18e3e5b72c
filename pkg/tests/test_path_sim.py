import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levyexp.errors import InfiniteFunctional
from levyexp.levy_core import (
    CompoundPoisson,
    GaussianSize,
    LevyTriplet,
    PointMass,
    TemperedStable,
    TwoSidedExponential,
    brownian,
    laplace_exponent,
    laplace_exponent_deriv,
    triplet_hash,
)
from levyexp.path_sim import (
    PathSample,
    SimConfig,
    exp_functional,
    exp_functional_inf,
    hitting_time,
    read_paths_binary,
    simulate_path,
    time_grid,
    write_paths_binary,
)

import oracles

SQRT2 = math.sqrt(2.0)


def test_zero_path():
    p = simulate_path(LevyTriplet(0.0, 0.0), SimConfig(step_h=0.1, horizon_t=5.0, n_paths=1, seed=1))
    assert np.all(p.values == 0.0) and np.all(p.sup == 0.0) and np.all(p.inf == 0.0)
    assert exp_functional(p, 0.7).value == pytest.approx(5.0)


def test_pure_drift_values():
    p = simulate_path(brownian(-1.0, 0.0), SimConfig(step_h=0.5, horizon_t=2.0, n_paths=1, seed=3))
    np.testing.assert_allclose(p.values, [0.0, 0.5, 1.0, 1.5, 2.0])
    np.testing.assert_allclose(p.times, [0.0, 0.5, 1.0, 1.5, 2.0])


def test_start_offset_and_partial_last_cell():
    p = simulate_path(brownian(-1.0, 0.0), SimConfig(step_h=0.3, horizon_t=1.0, n_paths=2, seed=3), start=2.0)
    assert p.times[-1] == 1.0
    np.testing.assert_allclose(p.values[:, -1], 3.0)


def test_piecewise_path_by_hand():
    path = PathSample(np.array([0.0, 1.0, 2.0]), np.array([0.0, math.log(2.0), math.log(2.0)]))
    assert exp_functional(path, 1.0).value == pytest.approx(1.5)
    assert exp_functional(path, 1.0, t=1.5).value == pytest.approx(1.25)


def test_pure_drift_functional_converges():
    h = 1e-3
    p = simulate_path(brownian(-1.0, 0.0), SimConfig(step_h=h, horizon_t=30.0, n_paths=1, seed=0))
    a = exp_functional(p, 1.0).value
    # left sum of e^{-s}: (1 - e^{-t}) h / (1 - e^{-h})
    assert a == pytest.approx((1 - math.exp(-30.0)) * h / -math.expm1(-h), rel=1e-10)
    assert a == pytest.approx(1.0, rel=1e-3)


def test_a_inf_pure_drift():
    cfg = SimConfig(step_h=1e-4, horizon_t=None, n_paths=1, seed=0, rel_tol=1e-6)
    s = exp_functional_inf(brownian(-1.0, 0.0), 1.0, cfg)
    # skeleton bias is h/2 for a left sum
    assert s.value - 0.5e-4 == pytest.approx(1.0, rel=1e-6)
    assert s.truncation_flag


def test_a_inf_refuses_nonpositive_mean():
    with pytest.raises(InfiniteFunctional):
        exp_functional_inf(brownian(0.0, SQRT2), 1.0, SimConfig())
    with pytest.raises(InfiniteFunctional):
        exp_functional_inf(brownian(1.0, SQRT2), 1.0, SimConfig())


def test_a_inf_dufresne_law():
    mu, sigma = 3.0, 1.0
    cfg = SimConfig(step_h=1e-3, horizon_t=None, n_paths=20_000, seed=11, rel_tol=1e-6)
    s = exp_functional_inf(brownian(-mu, sigma), 1.0, cfg)
    a = s.value - cfg.step_h / 2
    shape, scale = oracles.dufresne_params(mu, sigma, 1.0)
    m, v = oracles.inverse_gamma_moments(shape, scale)
    se = a.std() / math.sqrt(a.size)
    assert abs(a.mean() - m) < 3 * se
    assert a.var() == pytest.approx(v, rel=0.1)


def test_hitting_time_examples():
    drift = simulate_path(brownian(1.0, 0.0), SimConfig(step_h=0.01, horizon_t=5.0, n_paths=1, seed=0))
    assert abs(hitting_time(drift, -2.0) - 2.0) <= 0.01 + 1e-12
    zero = simulate_path(LevyTriplet(0.0, 0.0), SimConfig(step_h=0.1, horizon_t=5.0, n_paths=1, seed=0))
    assert hitting_time(zero, -1.0) is None
    many = simulate_path(brownian(1.0, 0.0), SimConfig(step_h=0.01, horizon_t=1.0, n_paths=3, seed=0))
    assert np.all(np.isnan(hitting_time(many, -2.0)))


def test_time_grid():
    np.testing.assert_allclose(time_grid(1.0, 0.25), [0, 0.25, 0.5, 0.75, 1.0])
    g = time_grid(1.0, 0.3)
    assert g[-1] == 1.0 and g.size == 5


def test_config_validation():
    assert SimConfig().validate() == []
    bad = SimConfig(step_h=-1, n_paths=0, rel_tol=2.0).validate()
    assert len(bad) == 3
    with pytest.raises(ValueError):
        simulate_path(brownian(0, 1), SimConfig(step_h=2.0, horizon_t=1.0))


FAMILIES = [
    brownian(0.5, 1.2),
    LevyTriplet(0.2, 0.3, CompoundPoisson(2.0, PointMass(-0.5))),
    LevyTriplet(-0.1, 0.0, CompoundPoisson(1.5, TwoSidedExponential(0.3, 4.0, 2.5))),
    LevyTriplet(0.0, 0.2, CompoundPoisson(1.0, GaussianSize(0.4, 0.5))),
    LevyTriplet(0.3, 0.1, TemperedStable(0.5, 0.7, 3.0, 1)),
    LevyTriplet(0.0, 0.0, TemperedStable(0.4, 1.5, 2.0, -1)),
]


@pytest.mark.parametrize("triplet", FAMILIES, ids=lambda t: t.jumps.family)
def test_increment_moments(triplet):
    # xi(1) has mean Phi'(0) and variance Phi''(0)
    cfg = SimConfig(step_h=0.1, horizon_t=1.0, n_paths=100_000, seed=21)
    x = simulate_path(triplet, cfg).values[:, -1]
    m, v = laplace_exponent_deriv(triplet, 0.0, 1), laplace_exponent_deriv(triplet, 0.0, 2)
    n = x.size
    assert abs(x.mean() - m) < 4 * math.sqrt(v / n)
    assert x.var() == pytest.approx(v, rel=0.05)


@pytest.mark.parametrize("triplet", FAMILIES, ids=lambda t: t.jumps.family)
def test_exponential_martingale(triplet):
    theta = 0.5 if triplet.jumps.family != "tempered_stable" or triplet.jumps.side == -1 else 0.8
    cfg = SimConfig(step_h=0.05, horizon_t=1.0, n_paths=100_000, seed=33)
    x = simulate_path(triplet, cfg).values[:, -1]
    m = np.exp(theta * x - laplace_exponent(triplet, theta))
    assert abs(m.mean() - 1.0) < 3 * m.std() / math.sqrt(m.size)


def test_refinement_consistency():
    t = brownian(-0.5, 1.0)
    means, ses = [], []
    for h in (0.02, 0.01):
        a = exp_functional(simulate_path(t, SimConfig(step_h=h, horizon_t=3.0, n_paths=10_000, seed=4)), 1.0).value
        means.append(a.mean())
        ses.append(a.std() / math.sqrt(a.size))
    assert abs(means[0] - means[1]) < max(ses)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**64 - 1), st.integers(1, 40), st.sampled_from(FAMILIES))
def test_bitwise_reproducible(seed, n, triplet):
    cfg = SimConfig(step_h=0.1, horizon_t=1.0, n_paths=n, seed=seed, batch_size=7)
    a, b = simulate_path(triplet, cfg), simulate_path(triplet, cfg)
    assert a.values.tobytes() == b.values.tobytes()


def test_worker_count_does_not_change_output():
    t = FAMILIES[2]
    cfg = SimConfig(step_h=0.1, horizon_t=2.0, n_paths=300, seed=8, batch_size=64)
    one = simulate_path(t, cfg)
    two = simulate_path(t, cfg.with_(workers=2))
    assert one.values.tobytes() == two.values.tobytes()


def test_different_seeds_differ():
    cfg = SimConfig(step_h=0.1, horizon_t=1.0, n_paths=5, seed=1)
    assert not np.array_equal(simulate_path(FAMILIES[0], cfg).values, simulate_path(FAMILIES[0], cfg.with_(seed=2)).values)


def test_binary_round_trip():
    t = FAMILIES[3]
    cfg = SimConfig(step_h=0.25, horizon_t=2.0, n_paths=4, seed=77)
    p = simulate_path(t, cfg)
    buf = io.BytesIO()
    write_paths_binary(p, buf, cfg.seed, cfg.step_h, triplet_hash(t))
    buf.seek(0)
    header, back = read_paths_binary(buf)
    assert header["seed"] == 77 and header["step"] == 0.25 and header["triplet_hash"] == triplet_hash(t)
    assert back.values.tobytes() == p.values.tobytes()
    np.testing.assert_array_equal(back.times, p.times)
    with pytest.raises(ValueError):
        read_paths_binary(io.BytesIO(b"XXXX" + buf.getvalue()[4:]))
