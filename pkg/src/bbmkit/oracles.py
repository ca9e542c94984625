"""Reference values computed without the Nystrom machinery.

These serve as the independent side of two-route checks: an ODE shooting
solve for the critical intensity of a radial field, and closed forms for
sharp indicator fields.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .potential import Potential

__all__ = [
    "shooting_slope",
    "shooting_beta_critical",
    "sharp_indicator_beta_critical",
    "sharp_indicator_lambda0_1d",
    "yule_moments",
]


def shooting_slope(beta: float, p: Potential) -> tuple[float, float]:
    """Integrate 1/2 u'' + beta v(r) u = 0, u(0) = 0, u'(0) = 1 up to the support edge.

    u = r psi, so the zero-energy state has u' = 0 at and beyond the edge.
    Returns ``(u'(R), min u on the breakpoints)``.
    """
    if p.dim != 3:
        raise ValueError("radial shooting is defined for dim=3 fields")
    bps = p.breakpoints()

    def rhs(r, y):
        return [y[1], -2.0 * beta * p.radial(np.array([r]))[0] * y[0]]

    y = np.array([0.0, 1.0])
    umin = np.inf
    for a, b in zip(bps[:-1], bps[1:]):
        sol = solve_ivp(rhs, (a, b), y, method="DOP853", rtol=1e-12, atol=1e-14)
        y = sol.y[:, -1]
        umin = min(umin, y[0])
    return float(y[1]), float(umin)


def shooting_beta_critical(p: Potential) -> float:
    """Smallest beta for which the shooting solution leaves the support with zero slope."""
    R = p.support_radius
    beta = np.pi**2 / (8.0 * p.v_max * R * R)  # comparison with the sharp ball: a lower bound
    slope, _ = shooting_slope(beta, p)
    if slope <= 0:
        raise RuntimeError("lower bound bracket failed")
    while True:
        nxt = 1.1 * beta
        s2, umin = shooting_slope(nxt, p)
        if s2 <= 0:
            break
        beta = nxt
    return float(brentq(lambda b: shooting_slope(b, p)[0], beta, nxt, xtol=1e-14, rtol=1e-13))


def sharp_indicator_beta_critical(radius: float = 1.0, height: float = 1.0) -> float:
    """sqrt(2 beta h) a = pi / 2 for the indicator of a ball in dim=3."""
    return np.pi**2 / (8.0 * height * radius**2)


def sharp_indicator_lambda0_1d(beta: float, radius: float = 1.0, height: float = 1.0) -> float:
    """Top eigenvalue of 1/2 d^2 + beta h 1_{|x|<a}.

    Even ground state cos(k x) inside, exp(-kappa |x|) outside:
    k tan(k a) = kappa with k = sqrt(2 (beta h - lambda)), kappa = sqrt(2 lambda).
    """
    top = beta * height

    def f(lam):
        k = np.sqrt(2.0 * (top - lam))
        return k * np.tan(k * radius) - np.sqrt(2.0 * lam)

    # the even ground state has k a < pi/2
    lo = max(top - (np.pi / (2 * radius)) ** 2 / 2.0, 0.0) + 1e-15
    return float(brentq(f, lo, top - 1e-15, xtol=1e-15, rtol=1e-14))


def yule_moments(rate: float, t: float) -> tuple[float, float]:
    """First two moments of a binary Yule process at time t: geometric law with mean e^{rate t}."""
    m = np.exp(rate * t)
    return m, 2.0 * m * m - m
