"""Free heat kernel and free resolvent kernels for real spectral parameter.

Sign convention: ``G_lambda`` is the *positive* kernel of (lambda - Delta/2)^{-1}.

    dim=1:  G(r) = exp(-kappa |r|) / kappa
    dim=3:  G(r) = exp(-kappa r) / (2 pi r)
    kappa = sqrt(2 lambda)

For radial functions in dim=3 the angular integral is done in closed form;
the reduced kernel between shells of radii r and s is

    exp(-kappa (M - m)) * g(2 kappa m) / (2 pi M),   M = max(r, s), m = min(r, s)

with g(z) = (1 - exp(-z)) / z, which is bounded and reduces to 1/(2 pi M) at
lambda = 0. It is continuous but kinked at r = s, so panels containing the
target point are integrated piecewise on either side of it (product
integration against the panel's Lagrange basis).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .quadrature import QuadGrid, lagrange_matrix

__all__ = [
    "GreenKernel",
    "heat_kernel",
    "green_kernel",
    "shell_kernel",
    "green_matrix",
    "radial_green_apply",
]


@dataclass(frozen=True)
class GreenKernel:
    dim: int
    lam: float

    def __post_init__(self):
        if self.dim not in (1, 3):
            raise ValueError("dim must be 1 or 3")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.dim == 1 and self.lam == 0:
            raise ValueError("the dim=1 resolvent kernel diverges at lambda = 0")

    @cached_property
    def kappa(self) -> float:
        return float(np.sqrt(2.0 * self.lam))

    def __call__(self, r):
        return green_kernel(self.lam, r, self.dim)


def _radius(x, dim):
    x = np.asarray(x, dtype=float)
    if dim == 3 and x.shape[-1:] == (3,):
        return np.linalg.norm(x, axis=-1)
    return np.abs(x)


def heat_kernel(t: float, x, dim: int):
    """Transition density of standard Brownian motion after time t.

    ``x`` is a displacement; in dim=3 it may be given as (..., 3) vectors or
    as distances.
    """
    if not t > 0:
        raise ValueError(f"heat kernel needs t > 0, got {t}")
    r = _radius(x, dim)
    return (2.0 * np.pi * t) ** (-0.5 * dim) * np.exp(-r * r / (2.0 * t))


def green_kernel(lam: float, r, dim: int):
    """Free Green kernel G_lambda at separation r (positive convention)."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    r = _radius(r, dim)
    kappa = np.sqrt(2.0 * lam)
    if dim == 1:
        if lam == 0:
            raise ValueError("the dim=1 resolvent kernel diverges at lambda = 0")
        return np.exp(-kappa * r) / kappa
    if dim != 3:
        raise ValueError("dim must be 1 or 3")
    if np.any(r == 0):
        raise ZeroDivisionError("dim=3 Green kernel is singular at r = 0")
    return np.exp(-kappa * r) / (2.0 * np.pi * r)


def _g(z):
    # (1 - exp(-z)) / z, stable for small z
    z = np.asarray(z, dtype=float)
    small = z < 1e-6
    zs = np.where(small, 1.0, z)
    return np.where(small, 1.0 - 0.5 * z + z * z / 6.0, -np.expm1(-zs) / zs)


def shell_kernel(kappa: float, r, s):
    """Spherical average of G over the shell |y| = s, seen from |x| = r (dim=3)."""
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    big = np.maximum(r, s)
    small = np.minimum(r, s)
    return np.exp(-kappa * (big - small)) * _g(2.0 * kappa * small) / (2.0 * np.pi * big)


@lru_cache(maxsize=None)
def _leggauss(m):
    return np.polynomial.legendre.leggauss(m)


def _pair(dim, kappa, x, y):
    if dim == 1:
        return np.exp(-kappa * np.abs(x - y)) / kappa
    return shell_kernel(kappa, x, y)


def green_matrix(lam: float, grid: QuadGrid, targets=None) -> np.ndarray:
    """Matrix A with (G_lambda f)(targets) ~= A @ f(grid.nodes).

    f is taken to vanish outside the grid's panels. Targets may lie anywhere
    (dim=1: real line, dim=3: radii >= 0).
    """
    dim = grid.dim
    if dim == 1 and lam <= 0:
        raise ValueError("dim=1 requires lambda > 0")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    kappa = float(np.sqrt(2.0 * lam))
    t = grid.nodes if targets is None else np.atleast_1d(np.asarray(targets, dtype=float))
    A = _pair(dim, kappa, t[:, None], grid.nodes[None, :]) * grid.weights[None, :]

    for p in range(grid.n_panels):
        a, b = grid.edges[p], grid.edges[p + 1]
        rows = np.nonzero((t > a) & (t < b))[0]
        if rows.size == 0:
            continue
        sl = grid.panel_nodes(p)
        pn = grid.nodes[sl]
        xi, om = _leggauss(min(pn.size + 8 + int(np.ceil(kappa * (b - a))), 200))
        tt = t[rows][:, None]
        blocks = []
        for lo, hi in ((a, tt), (tt, b)):
            half = 0.5 * (hi - lo)
            s = lo + half * (xi[None, :] + 1.0)
            w = half * om[None, :]
            if dim == 3:
                w = w * 4.0 * np.pi * s * s
            kern = _pair(dim, kappa, tt, s) * w          # (k, m)
            L = lagrange_matrix(pn, s.ravel()).reshape(s.shape + (pn.size,))
            blocks.append(np.einsum("km,kmj->kj", kern, L))
        A[rows, sl] = blocks[0] + blocks[1]
    return A


def radial_green_apply(lam: float, f, grid: QuadGrid, targets=None) -> np.ndarray:
    """(G_lambda f) at ``targets`` (default: the grid nodes) for f sampled on the grid."""
    f = np.asarray(f, dtype=float)
    return green_matrix(lam, grid, targets) @ f
