"""Principal eigenvalue machinery for K_lambda = beta v G_lambda.

Everything downstream rests on the equivalence between the eigenproblem of
1/2 Delta + beta v and the fixed point h = beta v G_lambda h: lambda is an
eigenvalue exactly when K_lambda has eigenvalue 1. The principal eigenvalue
mu(lambda) of K_lambda (beta = 1) is strictly decreasing in lambda, so

* beta_cr = 1 / mu(0) in dim=3 (and 0 in dim=1),
* lambda0(beta) is the root of beta * mu(lambda) = 1,
* the ground state is psi = G_lambda0 h for the principal vector h.

The resolvent S_lambda = (lambda - 1/2 Delta - beta v)^{-1} is applied through
S g = G g + G w with (I - K) w = beta v G g, valid for lambda above lambda0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import ConvergenceError, DomainError
from .greenfn import _g, green_matrix
from .potential import Potential
from .quadrature import QuadGrid, build_grid, extend_grid

log = logging.getLogger(__name__)

__all__ = [
    "QuadGrid",
    "build_grid",
    "DiscretizedOperator",
    "GroundState",
    "assemble_K",
    "principal_eigen",
    "principal_mu",
    "beta_critical",
    "lambda0",
    "ground_state",
    "spectral_gap",
    "Resolvent",
    "resolvent_apply",
    "refinement_change",
]

POWER_TOL = 1e-12
RESIDUAL_TOL = 1e-10
MAX_POWER_ITER = 100_000


@dataclass(frozen=True)
class DiscretizedOperator:
    """Nystrom matrix M[i, j] ~ beta v(x_i) G_lambda(x_i, x_j) w_j (diagonal panels product-integrated)."""

    matrix: np.ndarray
    lam: float
    beta: float
    grid: QuadGrid
    v_nodes: np.ndarray
    green: np.ndarray = field(repr=False)

    def symmetrized(self) -> np.ndarray:
        """W^{1/2} D^{1/2} (G W^{-1}) D^{1/2} W^{1/2}, similar to ``matrix``."""
        w = self.grid.weights
        d = np.sqrt(self.beta * self.v_nodes)
        kern = self.green / w[None, :]
        sw = np.sqrt(w)
        return (sw * d)[:, None] * kern * (d * sw)[None, :]


def assemble_K(lam: float, beta: float, p: Potential, grid: QuadGrid) -> DiscretizedOperator:
    if lam < 0:
        raise DomainError(f"lambda must be >= 0, got {lam}")
    if grid.dim == 1 and lam == 0:
        raise DomainError("dim=1 requires lambda > 0")
    if beta < 0:
        raise DomainError(f"beta must be >= 0, got {beta}")
    A = green_matrix(lam, grid)
    v = p.radial(grid.nodes)
    return DiscretizedOperator((beta * v)[:, None] * A, float(lam), float(beta), grid, v, A)


def principal_eigen(K, h0=None, tol: float = POWER_TOL, max_iter: int = MAX_POWER_ITER):
    """Power iteration for the Perron root of a nonnegative matrix.

    Returns ``(mu, h)`` with ``max(h) == 1``. The matrix may be a
    :class:`DiscretizedOperator` or a plain array.
    """
    M = K.matrix if isinstance(K, DiscretizedOperator) else np.asarray(K, dtype=float)
    n = M.shape[0]
    if not np.any(M):
        raise DomainError("operator is identically zero")
    h = np.ones(n) if h0 is None else np.array(h0, dtype=float)
    h /= np.max(np.abs(h))
    mu = 0.0
    ratios = []
    for it in range(1, max_iter + 1):
        y = M @ h
        mu_new = np.max(y)
        if mu_new <= 0:
            raise ConvergenceError("power iterate collapsed to zero")
        y /= mu_new
        step = np.max(np.abs(y - h))
        ratios.append(step)
        h = y
        if abs(mu_new - mu) <= tol * mu_new and step <= tol:
            mu = mu_new
            break
        mu = mu_new
    else:
        rate = ratios[-1] / ratios[-2] if len(ratios) > 1 and ratios[-2] > 0 else np.nan
        raise ConvergenceError(
            f"power iteration did not converge in {max_iter} steps "
            f"(contraction ratio ~ {rate:.6f}; spectral gap too small)")
    Mh = M @ h
    mu = float(np.dot(Mh, h) / np.dot(h, h))
    if np.max(np.abs(Mh - mu * h)) > RESIDUAL_TOL * max(1.0, mu):
        raise ConvergenceError("power iteration residual above tolerance")
    return mu, h


def principal_mu(lam: float, p: Potential, grid: QuadGrid, beta: float = 1.0, h0=None):
    return principal_eigen(assemble_K(lam, beta, p, grid), h0=h0)


def beta_critical(p: Potential, grid: QuadGrid | None = None, n_nodes: int = 128) -> float:
    """Critical intensity: 1/mu(0) in dim=3, zero in dim=1."""
    if p.dim == 1:
        return 0.0
    grid = grid or build_grid(p, n_nodes)
    mu, _ = principal_mu(0.0, p, grid)
    return 1.0 / mu


def _lambda_bracket(beta, p, grid):
    hi = beta * p.v_max  # top of the spectrum never exceeds sup(beta v)
    if grid.dim == 3:
        return 0.0, hi
    lo = min(1e-3, 0.5 * hi)
    while beta * principal_mu(lo, p, grid)[0] <= 1.0:
        lo *= 0.1
        if lo < 1e-300:
            raise ConvergenceError("could not bracket lambda0 from below")
    return lo, hi


def lambda0(beta: float, p: Potential, grid: QuadGrid, rtol: float = 1e-11,
            beta_cr: float | None = None) -> float:
    """Growth exponent: the root of beta * mu(lambda) = 1."""
    if beta <= 0:
        raise DomainError("beta must be positive")
    if grid.dim == 3:
        bc = beta_critical(p, grid) if beta_cr is None else beta_cr
        if beta <= bc:
            raise DomainError(f"subcritical/critical: lambda0 undefined/zero (beta={beta} <= beta_cr={bc})")
    lo, hi = _lambda_bracket(beta, p, grid)
    while beta * principal_mu(hi, p, grid)[0] > 1.0:
        lo, hi = hi, 2.0 * hi
    state = {"h": None}

    def f(lam):
        mu, h = principal_mu(lam, p, grid, h0=state["h"])
        state["h"] = h
        return beta * mu - 1.0

    return float(brentq(f, lo, hi, xtol=1e-300, rtol=rtol, maxiter=500))


def refinement_change(lam: float, p: Potential, grid: QuadGrid) -> float:
    """Relative change of mu(lambda) when the node count is doubled."""
    mu1, _ = principal_mu(lam, p, grid)
    mu2, _ = principal_mu(lam, p, build_grid(p, 2 * grid.n_nodes))
    return abs(mu2 - mu1) / mu1


def spectral_gap(beta: float, p: Potential, grid: QuadGrid, lam0: float | None = None) -> float:
    """Distance from lambda0 to the rest of the radial spectrum.

    The continuous spectrum ends at 0; a second bound state lambda1 > 0 exists
    exactly when beta * mu_2(0+) > 1, mu_2 being the second eigenvalue of K.
    """
    lam0 = lambda0(beta, p, grid) if lam0 is None else lam0

    def mu2(lam):
        ev = np.sort(np.abs(np.linalg.eigvals(assemble_K(lam, 1.0, p, grid).matrix)))[::-1]
        return ev[1]

    floor = 0.0 if grid.dim == 3 else 1e-12
    if beta * mu2(floor) <= 1.0:
        return lam0
    lam1 = brentq(lambda lam: beta * mu2(lam) - 1.0, floor, lam0, rtol=1e-10)
    return lam0 - lam1


@dataclass(frozen=True)
class GroundState:
    """Positive ground state psi = G_lambda0 (beta v psi).

    ``h`` holds beta v psi on the grid; calling the object evaluates psi
    anywhere (dim=3 takes radii or (..., 3) points).
    """

    beta: float
    lambda0: float
    grid: QuadGrid
    h: np.ndarray
    psi: np.ndarray
    mass: float
    normalization: str
    tail_amplitude: tuple  # dim=3: (C,) with psi = C e^{-kappa r}/r; dim=1: (C_left, C_right)

    @property
    def kappa(self) -> float:
        return float(np.sqrt(2.0 * self.lambda0))

    @property
    def support(self) -> tuple[float, float]:
        return float(self.grid.edges[0]), float(self.grid.edges[-1])

    def radial(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        flat = r.ravel()
        return (green_matrix(self.lambda0, self.grid, flat) @ self.h).reshape(r.shape)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.grid.dim == 3 and x.shape[-1:] == (3,):
            x = np.linalg.norm(x, axis=-1)
        return self.radial(x)

    def tail(self, r) -> np.ndarray:
        """Closed-form exterior values (valid outside the support interval)."""
        r = np.asarray(r, dtype=float)
        k = self.kappa
        if self.grid.dim == 3:
            return self.tail_amplitude[0] * np.exp(-k * r) / r
        lo, hi = self.support
        cl, cr = self.tail_amplitude
        return np.where(r >= hi, cr * np.exp(-k * (r - hi)), cl * np.exp(-k * (lo - r)))

    def score_table(self, n: int = 4001):
        """Uniform table of psi over the support plus the exterior tail constants."""
        lo, hi = self.support
        xs = np.linspace(lo, hi, n)
        return xs, self.radial(xs), np.asarray(self.tail_amplitude, dtype=float), self.kappa


def _tail_amplitudes(lam, grid, h):
    kappa = np.sqrt(2.0 * lam)
    s, w = grid.nodes, grid.weights
    if grid.dim == 3:
        # shell kernel for r >= s: e^{-kappa r} / r * e^{kappa s} g(2 kappa s) / (2 pi)
        c = np.dot(w * h, np.exp(kappa * s) * _g(2.0 * kappa * s)) / (2.0 * np.pi)
        return (float(c),)
    lo, hi = grid.edges[0], grid.edges[-1]
    cr = np.dot(w * h, np.exp(-kappa * (hi - s))) / kappa
    cl = np.dot(w * h, np.exp(-kappa * (s - lo))) / kappa
    return (float(cl), float(cr))


def _exterior_integrals(lam, grid, amp):
    """(int psi, int psi^2) over the complement of the support interval."""
    kappa = np.sqrt(2.0 * lam)
    if grid.dim == 3:
        R, c = grid.edges[-1], amp[0]
        if kappa == 0:
            return np.inf, np.inf
        m1 = 4 * np.pi * c * np.exp(-kappa * R) * (R / kappa + 1 / kappa**2)
        m2 = 4 * np.pi * c * c * np.exp(-2 * kappa * R) / (2 * kappa)
        return m1, m2
    cl, cr = amp
    return (cl + cr) / kappa, (cl * cl + cr * cr) / (2 * kappa)


def ground_state(beta: float, p: Potential, grid: QuadGrid, normalization: str | None = None,
                 lam0: float | None = None) -> GroundState:
    """Ground state at lambda0(beta), or the zero-energy state when beta == beta_cr (dim=3).

    ``normalization`` is ``"L2"`` (||psi||_2 = 1, supercritical) or
    ``"critical"`` (||beta v psi||_2 = 1); it defaults by regime.
    """
    if grid.dim == 3:
        bc = beta_critical(p, grid)
        critical = abs(beta - bc) <= 1e-9 * bc
        if beta < bc and not critical:
            raise DomainError(f"subcritical beta={beta} < beta_cr={bc}: no ground state")
    else:
        critical = False
    if critical:
        lam = 0.0
        beta = bc
    else:
        lam = lambda0(beta, p, grid) if lam0 is None else float(lam0)
    normalization = normalization or ("critical" if critical else "L2")
    if critical and normalization == "L2":
        raise DomainError("the critical ground state is not square integrable in dim=3")

    K = assemble_K(lam, beta, p, grid)
    mu, h = principal_eigen(K)
    psi = K.green @ h
    amp = _tail_amplitudes(lam, grid, h)
    if normalization == "L2":
        m1, m2 = _exterior_integrals(lam, grid, amp)
        scale = 1.0 / np.sqrt(grid.integrate(psi**2) + m2)
    elif normalization == "critical":
        scale = 1.0 / np.sqrt(grid.integrate(h**2))
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    h, psi = h * scale, psi * scale
    amp = tuple(a * scale for a in amp)
    m1, _ = _exterior_integrals(lam, grid, amp)
    mass = grid.integrate(psi) + m1
    log.debug("ground state beta=%g lambda0=%.12g mu=%.3e", beta, lam, mu)
    return GroundState(float(beta), float(lam), grid, h, psi, float(mass), normalization, amp)


class Resolvent:
    """S_lambda = (lambda - 1/2 Delta - beta v)^{-1} for lambda above the top of the spectrum.

    Sources passed as arrays live on ``grid.nodes`` and are taken to vanish
    outside the support. Callable sources are integrated over the support
    extended by ``reach``.
    """

    def __init__(self, lam: float, beta: float, p: Potential, grid: QuadGrid):
        self.lam, self.beta, self.p, self.grid = float(lam), float(beta), p, grid
        self.K = assemble_K(lam, beta, p, grid)
        self.v = self.K.v_nodes
        if beta > 0:
            mu, _ = principal_eigen(self.K)
        else:
            mu = 0.0
        self.mu = mu
        if mu >= 1.0 - 1e-10:
            raise DomainError(
                f"lambda={lam} is not above the spectrum (principal eigenvalue of K = {mu:.12g})")
        self.amplification = 1.0 / (1.0 - mu)
        self._lu = np.eye(grid.n_nodes) - self.K.matrix

    def _solve(self, rhs):
        w = np.linalg.solve(self._lu, rhs)
        res = np.max(np.abs(self._lu @ w - rhs))
        if res > 1e-10 * max(1.0, np.max(np.abs(rhs))):
            raise ConvergenceError(f"resolvent solve residual {res:.3e}")
        return w

    def apply(self, g, targets=None, reach: float | None = None):
        """Return S_lambda g at the grid nodes and, if given, at ``targets``."""
        if callable(g):
            if reach is None:
                raise ValueError("callable sources need a finite integration reach")
            src = extend_grid(self.grid, reach)
            gs = np.asarray(g(src.nodes), dtype=float)
        else:
            src, gs = self.grid, np.asarray(g, dtype=float)
        Gg = green_matrix(self.lam, src, self.grid.nodes) @ gs
        w = self._solve(self.beta * self.v * Gg)
        on_grid = Gg + self.K.green @ w
        if targets is None:
            return on_grid
        t = np.asarray(targets, dtype=float).ravel()
        off = green_matrix(self.lam, src, t) @ gs + green_matrix(self.lam, self.grid, t) @ w
        return on_grid, off.reshape(np.shape(targets))


def resolvent_apply(lam: float, beta: float, p: Potential, grid: QuadGrid, g, targets=None,
                    reach: float | None = None):
    return Resolvent(lam, beta, p, grid).apply(g, targets=targets, reach=reach)
