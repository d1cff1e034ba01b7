"""Independent high-precision reference values computed with mpmath quadrature.

Nothing here imports the package; the densities are restated from their
formulas so that a mistake in the package cannot leak into its oracle.
"""

import mpmath as mp

mp.mp.dps = 30


def powlog(alpha, beta=0):
    return lambda t: (t + 2) ** alpha * (mp.log(t + 2) ** beta if beta else 1)


def exponential(rate=1):
    def rho(t):
        return mp.e ** (-rate * t)

    rho.fast_decay = True
    return rho


def _breaks(r):
    r = mp.mpf(r)
    if r == 0:
        return [0, 1, 10, 100, 1e4, mp.inf]
    return [r, 2 * r, 10 * r, 100 * r, 1e4 * r, mp.inf]


def tail(rho, r):
    """int_r^inf rho(t) dt, integrated in u = log(t+2) so slowly decaying tails become algebraic in u."""
    if getattr(rho, "fast_decay", False):
        return mp.quad(rho, _breaks(r))
    u0 = mp.log(mp.mpf(r) + 2)
    g = lambda u: rho(mp.e**u - 2) * mp.e**u  # noqa: E731
    return mp.quad(g, [u0, u0 + 1, u0 + 10, u0 + 100, mp.inf])


def segment(rho, a, b):
    """int_a^b rho(t) dt."""
    return mp.quad(rho, [a, b])


def polar_mass(rho, sigma, a, b=mp.inf):
    """pi int_a^b t rho(t)^sigma dt, the half-plane mu_rho of the annulus a <= |x| < b."""
    pts = _breaks(a) if b == mp.inf else [a, b]
    return mp.pi * mp.quad(lambda t: t * rho(t) ** sigma, pts)


def halfdisk_area(R):
    return mp.pi * mp.mpf(R) ** 2 / 2


def radial_curve_integral(rho, x0, y0, x1, y1):
    """int of rho(|z|) over the straight segment between two planar points."""
    L = mp.sqrt((x1 - x0) ** 2 + (y1 - y0) ** 2)
    f = lambda s: rho(mp.sqrt((x0 + s * (x1 - x0)) ** 2 + (y0 + s * (y1 - y0)) ** 2))  # noqa: E731
    return L * mp.quad(f, [0, 1])


def condition_C_ratio(rho, sigma, r):
    """(pi int_r^inf t rho^sigma) / (rho(r)^sigma * half-disk area of radius r+1)."""
    return polar_mass(rho, sigma, r) / (rho(r) ** sigma * halfdisk_area(r + 1))
