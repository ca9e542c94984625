"""Finite-difference oracle for the integrated moment hierarchy.

Solves, for n = 1..n_max <= 3,

    d/dt rho_n = 1/2 Laplacian rho_n + beta v (rho_n + sum_{k=1}^{n-1} C(n, k) rho_k rho_{n-k})

with rho_1(0) = 1 and rho_n(0) = 0 for n >= 2 ("ones" mode), or the linear
equation d/dt rho = 1/2 Laplacian rho + beta v rho from compactly supported
data ("compact" mode). Here rho_n(t, x) is the factorial moment
E[n_t (n_t - 1) ... (n_t - n + 1)] for a process started from one particle at x.

Crank-Nicolson in time; the coupling source of order n uses the already
advanced lower orders, averaged over the step (trapezoidal). The first steps
are backward Euler to damp the start-up transient. dim=3 is solved radially
for u = r rho, which turns the radial Laplacian into u''. The outer boundary
is reflecting (zero normal derivative of rho), i.e. u' = u / L in dim=3.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import comb

import numpy as np

from ._accel import solve_tridiagonal
from .errors import DomainError, ValidationError
from .potential import Potential

__all__ = ["PdeProblem", "PdeSolution", "solve_rho_bar", "decay_exponent", "DecayFit"]

MAX_SOURCE_STEP = 0.5     # dt * beta * v_max
MAX_DIFFUSION_NUMBER = 200.0  # dt / h^2
STARTUP_STEPS = 4


@dataclass(frozen=True)
class PdeProblem:
    potential: Potential
    beta: float
    t_end: float
    h: float = 0.02
    dt: float = 0.005
    n_max: int = 2
    mode: str = "ones"
    margin: float | None = None
    output_times: tuple = ()
    initial: object = None    # compact mode: callable of the coordinate; default v / v_max

    def __post_init__(self):
        if self.mode not in ("ones", "compact"):
            raise ValidationError(f"mode must be 'ones' or 'compact', got {self.mode!r}")
        if not 1 <= int(self.n_max) <= 3:
            raise ValidationError("n_max must be 1, 2 or 3")
        if self.mode == "compact" and self.n_max != 1:
            raise ValidationError("compact mode solves the linear equation only (n_max = 1)")
        if not (self.beta >= 0 and self.t_end > 0 and self.h > 0 and self.dt > 0):
            raise ValidationError("beta >= 0 and positive t_end, h, dt are required")
        need = 6.0 * np.sqrt(self.t_end)
        if self.margin is not None and self.margin < need:
            raise ValidationError(f"margin {self.margin} below 6 sqrt(t_end) = {need:.3g}")
        src = self.dt * self.beta * self.potential.v_max
        if src > MAX_SOURCE_STEP:
            raise ValidationError(
                f"dt * beta * v_max = {src:.3g} exceeds {MAX_SOURCE_STEP}; "
                f"use dt <= {MAX_SOURCE_STEP / (self.beta * self.potential.v_max):.3g}")
        mu = self.dt / self.h**2
        if mu > MAX_DIFFUSION_NUMBER:
            raise ValidationError(
                f"dt / h^2 = {mu:.3g} exceeds {MAX_DIFFUSION_NUMBER}; "
                f"use dt <= {MAX_DIFFUSION_NUMBER * self.h**2:.3g}")
        if any(t < 0 or t > self.t_end for t in self.output_times):
            raise ValidationError("output times must lie in [0, t_end]")

    @property
    def dim(self) -> int:
        return self.potential.dim

    @property
    def L(self) -> float:
        margin = 6.0 * np.sqrt(self.t_end) + 1.0 if self.margin is None else self.margin
        return self.potential.support_radius + margin

    def mesh(self) -> np.ndarray:
        n = int(np.ceil(self.L / self.h))
        if self.dim == 3:
            return self.h * np.arange(1, n + 1)
        return self.h * np.arange(-n, n + 1)

    def stability(self) -> dict:
        return {"dt_beta_vmax": self.dt * self.beta * self.potential.v_max,
                "dt_over_h2": self.dt / self.h**2, "L": self.L}


@dataclass(frozen=True)
class PdeSolution:
    problem: PdeProblem
    x: np.ndarray                 # mesh (radii in dim=3)
    times: np.ndarray             # output times
    rho: np.ndarray               # (n_times, n_max, n_x): rho_n itself (not u)
    sup_series: tuple = field(default=(), repr=False)  # (t, sup_x rho_1) at every step

    def at(self, x0, n: int = 1) -> np.ndarray:
        """rho_n(t, x0) for every output time."""
        x0 = np.asarray(x0, dtype=float)
        c = float(np.linalg.norm(x0)) if self.problem.dim == 3 else float(x0)
        return np.array([np.interp(c, self.x, r[n - 1]) for r in self.rho])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "n", "rho_bar"])
            for t, snap in zip(self.times, self.rho):
                for n in range(snap.shape[0]):
                    for x, val in zip(self.x, snap[n]):
                        w.writerow([repr(float(t)), repr(float(x)), n + 1, repr(float(val))])


def _operator(prob: PdeProblem, x):
    """Tridiagonal pieces of A = 1/2 D2 + beta v acting on the unknowns."""
    h = prob.h
    m = x.size
    c = 0.5 / h**2
    lower = np.full(m, c)
    upper = np.full(m, c)
    diag = -2.0 * c + prob.beta * prob.potential.radial(x)
    if prob.dim == 3:
        # u_0 = 0 at r = 0; ghost u_{m+1} = u_{m-1} + 2 h u_m / L
        lower[-1] = 2.0 * c
        diag[-1] += 2.0 * c * h / x[-1]
    else:
        upper[0] = 2.0 * c
        lower[-1] = 2.0 * c
    lower[0] = 0.0
    upper[-1] = 0.0
    return lower, diag, upper


def _matvec(lower, diag, upper, u):
    out = diag * u
    out[1:] += lower[1:] * u[:-1]
    out[:-1] += upper[:-1] * u[1:]
    return out


def solve_rho_bar(prob: PdeProblem, record_sup: bool = False) -> PdeSolution:
    """March the hierarchy to t_end; snapshots at the output times (and t_end)."""
    x = prob.mesh()
    dim, nmax = prob.dim, int(prob.n_max)
    lo, di, up = _operator(prob, x)
    bv = prob.beta * prob.potential.radial(x)
    scale = x if dim == 3 else np.ones_like(x)       # u = scale * rho
    steps = int(np.ceil(prob.t_end / prob.dt - 1e-9))
    dt = prob.t_end / steps
    out_t = sorted(set(float(t) for t in prob.output_times) | {float(prob.t_end)})
    out_steps = {int(round(t / dt)): t for t in out_t}

    u = np.zeros((nmax, x.size))
    if prob.mode == "ones":
        u[0] = scale
    else:
        g = prob.initial if prob.initial is not None else \
            (lambda c: prob.potential.radial(c) / prob.potential.v_max)
        u[0] = scale * np.asarray(g(x), dtype=float)

    def coupling(uu, n):
        # u-form of beta v sum_k C(n,k) rho_k rho_{n-k}
        s = np.zeros_like(x)
        for k in range(1, n):
            s += comb(n, k) * uu[k - 1] * uu[n - k - 1]
        return bv * s / scale

    snaps, times, sup_t, sup_v = [], [], [], []
    if 0 in out_steps:
        snaps.append(u / scale)
        times.append(0.0)

    ops = {}

    def system(theta):
        if theta not in ops:
            a = theta * dt
            ops[theta] = (-a * lo, 1.0 - a * di, -a * up)
        return ops[theta]

    for step in range(1, steps + 1):
        theta = 1.0 if step <= STARTUP_STEPS else 0.5
        L_, D_, U_ = system(theta)
        new = np.empty_like(u)
        for n in range(1, nmax + 1):
            rhs = u[n - 1] + (1.0 - theta) * dt * _matvec(lo, di, up, u[n - 1])
            if n > 1:
                rhs += dt * ((1.0 - theta) * coupling(u, n) + theta * coupling(new, n))
            new[n - 1] = solve_tridiagonal(L_, D_, U_, rhs)
        u = new
        if record_sup:
            sup_t.append(step * dt)
            sup_v.append(float(np.max(u[0] / scale)))
        if step in out_steps:
            snaps.append(u / scale)
            times.append(out_steps[step])
    if np.any(u < -1e-10 * max(1.0, np.abs(u).max())):
        raise DomainError("negative solution values: refine dt / h")
    return PdeSolution(prob, x, np.asarray(times), np.asarray(snaps),
                       (np.asarray(sup_t), np.asarray(sup_v)) if record_sup else ())


@dataclass(frozen=True)
class DecayFit:
    exponent: float
    curvature: float
    power_law: bool


def decay_exponent(t, values, window=None, curvature_tol: float = 0.02) -> DecayFit:
    """Slope of log value against log t, with a curvature diagnostic.

    A quadratic in log t is also fitted; if its curvature term changes the
    fit over the window by more than ``curvature_tol`` times the linear
    change, the series is flagged as not a power law.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(values, dtype=float)
    if window is not None:
        sel = (t >= window[0]) & (t <= window[1])
        t, y = t[sel], y[sel]
    if t.size < 3:
        raise ValidationError("need at least 3 points in the window")
    if np.any(y <= 0) or np.any(t <= 0):
        raise DomainError("decay fit needs positive times and values")
    s, ly = np.log(t), np.log(y)
    slope = float(np.polyfit(s, ly, 1)[0])
    c2 = float(np.polyfit(s, ly, 2)[0])
    span = s.max() - s.min()
    power = abs(c2) * span**2 <= curvature_tol * max(abs(slope) * span, 1e-12)
    return DecayFit(slope, c2, bool(power))
