"""Reference values computed independently of the package.

Everything here uses mpmath at 40 digits or plain closed forms written out by
hand; nothing imports from levyexp.
"""
import math

import mpmath as mp

mp.mp.dps = 40


def phi_brownian(a, sigma, lam, order=0):
    if order == 0:
        return -a * lam + 0.5 * sigma**2 * lam**2
    if order == 1:
        return -a + sigma**2 * lam
    return sigma**2


def phi_point_mass(a, sigma, rate, size, lam, order=0):
    lam, size = mp.mpf(lam), mp.mpf(size)
    base = phi_brownian(mp.mpf(a), mp.mpf(sigma), lam, order)
    if order == 0:
        jump = rate * (mp.e ** (lam * size) - 1 - lam * size)
    elif order == 1:
        jump = rate * size * (mp.e ** (lam * size) - 1)
    else:
        jump = rate * size**2 * mp.e ** (lam * size)
    return float(base + jump)


def _levy_integral(density, lam, order, lo, hi):
    lam = mp.mpf(lam)

    def k(x):
        u = lam * x
        if order == 0:
            # series near 0: tanh-sinh nodes crowd the singular endpoint
            g = u * u / 2 * (1 + u / 3 + u * u / 12 + u**3 / 60) if abs(u) < mp.mpf("1e-8") else mp.expm1(u) - u
        elif order == 1:
            g = x * mp.expm1(u)
        else:
            g = x * x * mp.e ** (lam * x)
        return g * density(x)

    return mp.quad(k, [lo, 0, hi] if lo < 0 < hi else [lo, hi])


def phi_two_sided_exp(a, sigma, rate, p_up, eta_up, eta_down, lam, order=0):
    def dens(x):
        if x > 0:
            return rate * p_up * eta_up * mp.e ** (-eta_up * x)
        return rate * (1 - p_up) * eta_down * mp.e ** (eta_down * x)

    return float(phi_brownian(a, sigma, mp.mpf(lam), order) + _levy_integral(dens, lam, order, -mp.inf, mp.inf))


def phi_gaussian_jumps(a, sigma, rate, mean, std, lam, order=0):
    def dens(x):
        return rate * mp.e ** (-((x - mean) ** 2) / (2 * std**2)) / (std * mp.sqrt(2 * mp.pi))

    return float(phi_brownian(a, sigma, mp.mpf(lam), order) + _levy_integral(dens, lam, order, -mp.inf, mp.inf))


def phi_tempered_stable(a, sigma, scale, index, tempering, side, lam, order=0):
    def dens(x):
        return scale * abs(x) ** (-1 - index) * mp.e ** (-tempering * abs(x))

    lo, hi = (0, mp.inf) if side == 1 else (-mp.inf, 0)
    return float(phi_brownian(a, sigma, mp.mpf(lam), order) + _levy_integral(dens, lam, order, lo, hi))


def inverse_gamma_moments(shape, scale):
    """Mean and variance of an inverse-gamma law (shape > 2)."""
    mean = scale / (shape - 1)
    var = scale**2 / ((shape - 1) ** 2 * (shape - 2))
    return mean, var


def inverse_gamma_expectation(g, shape, scale):
    """E[g(A)] by mpmath quadrature of the inverse-gamma density."""
    c = mp.mpf(scale) ** shape / mp.gamma(shape)

    def k(z):
        return g(z) * c * z ** (-shape - 1) * mp.e ** (-scale / z)

    return float(mp.quad(k, [0, scale / (shape + 1), 10 * scale, mp.inf]))


def dufresne_params(mu, sigma, alpha):
    """A_inf of Brownian motion with mean mu > 0 and volatility sigma is inverse gamma(2mu/(alpha sigma^2), 2/(alpha sigma)^2)."""
    return 2 * mu / (alpha * sigma**2), 2 / (alpha * sigma) ** 2


def stable_csbp_survival(x0, c, alpha, t):
    return 1.0 - math.exp(-x0 * (c * alpha * t) ** (-1.0 / alpha))
