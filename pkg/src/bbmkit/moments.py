"""Limit-variable moment data.

Supercritical regime: f_1 = psi (L2-normalized ground state) and

    f_n = beta * sum_{k=1}^{n-1} C(n, k) S_{n lambda0}(v f_k f_{n-k}),

so that E xi^n = (int psi)^n f_n(x). Subcritical regime (dim=3): f_1 = 1 + phi
with phi = S_0(beta v), the same recursion with S_0 in place of S_{n lambda0},
and the limiting count has moments m_n = sum_k S(n, k) f_k.

Resolvents are applied in the positive convention S_lambda = (lambda - L)^{-1}.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb, factorial

import numpy as np

from .errors import DomainError, ValidationError
from .potential import Potential
from .quadrature import QuadGrid
from .spectral import GroundState, Resolvent, beta_critical, ground_state

__all__ = [
    "MAX_ORDER",
    "MomentTable",
    "stirling2",
    "supercritical_f",
    "subcritical_f",
    "xi_moments",
    "limit_moments_sub",
    "raw_count_moments",
    "factorial_envelope",
    "carleman_terms",
]

MAX_ORDER = 12


@lru_cache(maxsize=None)
def _stirling_row(n: int) -> tuple:
    if n == 0:
        return (1,)
    prev = _stirling_row(n - 1) + (0,)
    return tuple((k * prev[k] if k else 0) + (prev[k - 1] if k else 0) for k in range(n + 1))


def stirling2(n: int, k: int) -> int:
    """Stirling number of the second kind, 1 <= k <= n <= 30."""
    if not (1 <= k <= n <= 30):
        raise DomainError(f"stirling2 defined here for 1 <= k <= n <= 30, got ({n}, {k})")
    return _stirling_row(n)[k]


@dataclass(frozen=True)
class MomentTable:
    regime: str
    beta: float
    order: int
    points: np.ndarray
    f: np.ndarray            # (order, len(points))
    f_grid: np.ndarray       # (order, n_nodes)
    grid: QuadGrid = field(repr=False)
    mass: float | None = None
    lambda0: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def column(self, x) -> int:
        idx = np.nonzero(np.isclose(self.points, x, rtol=0, atol=1e-12))[0]
        if idx.size == 0:
            raise ValidationError(f"{x} is not among the query points {self.points}")
        return int(idx[0])

    def to_rows(self, moments: dict | None = None):
        """(n, x, f_n, moment) rows for CSV export."""
        rows = []
        for j, x in enumerate(self.points):
            mom = moments.get(j) if moments else None
            for n in range(1, self.order + 1):
                rows.append((n, float(x), float(self.f[n - 1, j]),
                             float(mom[n - 1]) if mom is not None else float("nan")))
        return rows


def _check_order(N):
    if not 1 <= N <= MAX_ORDER:
        raise ValidationError(f"order must be in [1, {MAX_ORDER}], got {N}")


def _radii(points, dim):
    pts = np.asarray(points, dtype=float)
    if dim == 3 and pts.ndim == 2 and pts.shape[1] == 3:
        pts = np.linalg.norm(pts, axis=1)
    return np.atleast_1d(pts)


def _source(beta, v, f_grid, n, symmetric):
    # beta * sum_k C(n,k) v f_k f_{n-k}; symmetric=True folds k and n-k together
    src = np.zeros_like(v)
    if symmetric:
        for k in range(1, n // 2 + 1):
            term = comb(n, k) * f_grid[k - 1] * f_grid[n - k - 1]
            src += term if 2 * k == n else 2.0 * term
    else:
        for k in range(1, n):
            src += comb(n, k) * f_grid[k - 1] * f_grid[n - k - 1]
    return beta * v * src


def _recursion(f_grid, f_pts, resolvent_for, beta, v, N, pts, symmetric):
    for n in range(2, N + 1):
        R = resolvent_for(n)
        on_grid, off = R.apply(_source(beta, v, f_grid, n, symmetric), targets=pts)
        if not (np.all(np.isfinite(on_grid)) and np.all(np.isfinite(off))):
            raise FloatingPointError(f"f_{n} overflowed double precision")
        f_grid[n - 1], f_pts[n - 1] = on_grid, off


def supercritical_f(beta: float, N: int, points, p: Potential, grid: QuadGrid,
                    gs: GroundState | None = None, symmetric: bool = False) -> MomentTable:
    _check_order(N)
    if gs is None:
        try:
            gs = ground_state(beta, p, grid, normalization="L2")
        except DomainError as exc:
            raise DomainError(f"supercritical_f needs beta above beta_cr: {exc}") from None
    if gs.lambda0 <= 0 or gs.normalization != "L2":
        raise DomainError("supercritical_f needs an L2-normalized supercritical ground state")
    pts = _radii(points, grid.dim)
    v = p.radial(grid.nodes)
    f_grid = np.zeros((N, grid.n_nodes))
    f_pts = np.zeros((N, pts.size))
    f_grid[0], f_pts[0] = gs.psi, gs.radial(pts)
    _recursion(f_grid, f_pts, lambda n: Resolvent(n * gs.lambda0, beta, p, grid),
               beta, v, N, pts, symmetric)
    return MomentTable("supercritical", float(beta), N, pts, f_pts, f_grid, grid,
                       mass=gs.mass, lambda0=gs.lambda0)


def subcritical_f(beta: float, N: int, points, p: Potential, grid: QuadGrid,
                  symmetric: bool = False, beta_cr: float | None = None) -> MomentTable:
    _check_order(N)
    if grid.dim != 3:
        raise DomainError("the subcritical regime exists only in dim=3")
    bc = beta_critical(p, grid) if beta_cr is None else beta_cr
    if not 0 < beta < bc:
        raise DomainError(f"subcritical_f needs 0 < beta < beta_cr={bc}, got {beta}")
    pts = _radii(points, grid.dim)
    v = p.radial(grid.nodes)
    R0 = Resolvent(0.0, beta, p, grid)
    phi_grid, phi_pts = R0.apply(beta * v, targets=pts)
    f_grid = np.zeros((N, grid.n_nodes))
    f_pts = np.zeros((N, pts.size))
    f_grid[0], f_pts[0] = 1.0 + phi_grid, 1.0 + phi_pts
    _recursion(f_grid, f_pts, lambda n: R0, beta, v, N, pts, symmetric)
    return MomentTable("subcritical", float(beta), N, pts, f_pts, f_grid, grid,
                       diagnostics={"amplification": R0.amplification, "beta_cr": bc})


def xi_moments(table: MomentTable, x, N: int | None = None) -> np.ndarray:
    """E xi^n = (int psi)^n f_n(x), n = 1..N."""
    if table.regime != "supercritical":
        raise DomainError("xi moments need a supercritical table")
    N = table.order if N is None else N
    j = table.column(x)
    n = np.arange(1, N + 1)
    return table.mass**n * table.f[:N, j]


def limit_moments_sub(table: MomentTable, x, N: int | None = None) -> np.ndarray:
    """m_n(x) = sum_k S(n, k) f_k(x) for the limiting subcritical count."""
    if table.regime != "subcritical":
        raise DomainError("limit moments need a subcritical table")
    N = table.order if N is None else N
    return raw_count_moments(table.f[:N, table.column(x)], N)


def raw_count_moments(rho_bars, n: int | None = None) -> np.ndarray:
    """E[count^j] = sum_{k<=j} S(j, k) rho_bar_k for j = 1..n."""
    rb = np.asarray(rho_bars, dtype=float)
    n = rb.shape[0] if n is None else n
    out = np.zeros((n,) + rb.shape[1:])
    for j in range(1, n + 1):
        for k in range(1, j + 1):
            out[j - 1] += stirling2(j, k) * rb[k - 1]
    return out


def factorial_envelope(norms, fit_upto: int = 3):
    """Fit A = max_{n <= fit_upto} (||f_n|| / n!)^{1/(2n-1)} and test ||f_n|| <= A^{2n-1} n!.

    Returns ``(A, ok)`` where ``ok[n-1]`` reports the bound for order n.
    """
    norms = np.asarray(norms, dtype=float)
    n = np.arange(1, norms.size + 1)
    fact = np.array([float(factorial(k)) for k in n])
    A = float(np.max((norms[:fit_upto] / fact[:fit_upto]) ** (1.0 / (2 * n[:fit_upto] - 1))))
    ok = np.log(norms) <= (2 * n - 1) * np.log(A) + np.log(fact) + 1e-12
    return A, ok


def carleman_terms(f_values) -> np.ndarray:
    """Terms f_n^{-1/(2n)} of the Carleman series."""
    f = np.asarray(f_values, dtype=float)
    n = np.arange(1, f.size + 1)
    return f ** (-1.0 / (2 * n))
