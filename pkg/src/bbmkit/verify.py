"""Acceptance suites: matched spectral / Monte Carlo / PDE comparisons.

Three suites share one reference setup (dim=3 smooth bump of radius 1 and
height 1, started at the origin):

* ``super``: critical intensity, growth exponent, ground-state tail,
  supercritical growth and moments, martingale flatness, PDE cross-checks,
  moment growth and Stirling numbers (criteria 1, 2, 3, 4, 5, 8, 10).
* ``sub``: subcritical limit moments and decay exponent (criteria 6, 7).
* ``critical``: stabilization at the critical intensity and near-critical
  scaling (criterion 9).

Each criterion is a list of named checks with a measured value, a reference,
a tolerance and a margin (tolerance minus deviation, as a fraction of the
tolerance; positive means pass).
"""

from __future__ import annotations

import itertools
import time
from math import factorial
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np
from scipy.stats import ks_2samp

from .moments import (factorial_envelope, limit_moments_sub, stirling2, subcritical_f,
                      supercritical_f, xi_moments)
from .oracles import (shooting_beta_critical, sharp_indicator_beta_critical,
                      sharp_indicator_lambda0_1d)
from .pde import PdeProblem, decay_exponent, solve_rho_bar
from .potential import Potential, make_potential
from .quadrature import build_grid
from .sim import SimConfig, empirical_moments, estimate_growth, martingale_check, run_ensemble
from .spectral import beta_critical, ground_state, lambda0, principal_mu

__all__ = ["Check", "Criterion", "Reference", "SUITES", "run_suite", "CRITERIA"]

REFERENCE_POTENTIAL = {"dim": 3, "shape": "bump", "radius": 1.0, "height": 1.0}


@dataclass
class Check:
    name: str
    value: float
    reference: float
    tolerance: float
    passed: bool
    margin: float
    rule: str

    @classmethod
    def abs(cls, name, value, reference, tol, rule="|value - reference| <= tol"):
        dev = abs(value - reference)
        return cls(name, float(value), float(reference), float(tol), bool(dev <= tol),
                   float((tol - dev) / tol), rule)

    @classmethod
    def rel(cls, name, value, reference, tol):
        dev = abs(value - reference) / abs(reference)
        return cls(name, float(value), float(reference), float(tol), bool(dev <= tol),
                   float((tol - dev) / tol), "|value/reference - 1| <= tol")

    @classmethod
    def se(cls, name, value, reference, se, k=3.0):
        z = abs(value - reference) / se if se > 0 else (0.0 if value == reference else np.inf)
        return cls(name, float(value), float(reference), float(k * se), bool(z <= k),
                   float((k - z) / k), f"|value - reference| <= {k:g} SE (SE = {se:.4g})")

    @classmethod
    def upper(cls, name, value, bound):
        return cls(name, float(value), float(bound), float(bound), bool(value <= bound),
                   float((bound - value) / bound) if bound else float(value <= bound), "value <= bound")

    @classmethod
    def flag(cls, name, ok, value=float("nan"), rule="condition holds"):
        return cls(name, float(value), float("nan"), float("nan"), bool(ok), 1.0 if ok else -1.0, rule)


@dataclass
class Criterion:
    id: int
    title: str
    checks: list = field(default_factory=list)
    runtime_s: float = 0.0
    notes: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    @property
    def margin(self) -> float:
        return float(min(c.margin for c in self.checks)) if self.checks else float("nan")

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.id:2d}: {self.title} (margin {self.margin:+.3f}, {self.runtime_s:.1f} s)"

    def to_dict(self) -> dict:
        d = {"id": self.id, "title": self.title, "passed": self.passed, "margin": self.margin,
             "runtime_s": self.runtime_s, "notes": self.notes,
             "checks": [asdict(c) for c in self.checks]}
        return _jsonable(d)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return _jsonable(obj.item())
    return obj


@dataclass
class Reference:
    """Shared inputs. ``replicas`` and ``seed`` drive every Monte Carlo run."""

    potential: Potential = field(default_factory=lambda: make_potential(REFERENCE_POTENTIAL))
    nodes: int = 128
    replicas: int = 10_000
    seed: int = 1
    workers: int = 1
    target_lambda0: float = 0.5
    super_t_end: float = 10.0
    sub_t_end: float = 1.0e6
    critical_T: float = 1000.0

    @cached_property
    def grid(self):
        return build_grid(self.potential, self.nodes)

    @cached_property
    def beta_cr(self) -> float:
        return beta_critical(self.potential, self.grid)

    @cached_property
    def beta_super(self) -> float:
        # lambda0(beta) = target exactly when beta mu(target) = 1
        return 1.0 / principal_mu(self.target_lambda0, self.potential, self.grid)[0]

    @cached_property
    def gs(self):
        return ground_state(self.beta_super, self.potential, self.grid, normalization="L2")

    @cached_property
    def super_table(self):
        return supercritical_f(self.beta_super, 10, [0.0], self.potential, self.grid, gs=self.gs)

    @cached_property
    def super_run(self):
        t0 = time.perf_counter()
        cps = tuple(np.arange(4.0, self.super_t_end + 1e-9, 1.0))
        cfg = SimConfig(self.potential, self.beta_super, self.super_t_end, cps,
                        replicas=self.replicas, seed=self.seed)
        rep = run_ensemble(cfg, self.gs, workers=self.workers)
        return rep, time.perf_counter() - t0

    @cached_property
    def super_pde(self):
        prob = PdeProblem(self.potential, self.beta_super, self.super_t_end, h=0.01, dt=0.0025,
                          n_max=2, output_times=tuple(self.super_run[0].times))
        return solve_rho_bar(prob)


def _timed(fn):
    def wrapper(ref):
        t0 = time.perf_counter()
        crit = fn(ref)
        crit.runtime_s = time.perf_counter() - t0
        return crit
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def criterion_1(ref: Reference) -> Criterion:
    c = Criterion(1, "critical intensity: quadrature vs shooting, sharp-indicator limit")
    t0 = time.perf_counter()
    nys = beta_critical(ref.potential, ref.grid)
    shoot = shooting_beta_critical(ref.potential)
    c.checks.append(Check.rel("beta_cr quadrature vs shooting (128 nodes)", nys, shoot, 0.01))
    seq = []
    for eps in (0.2, 0.1, 0.05):
        p = make_potential({"dim": 3, "shape": "indicator_smoothed", "radius": 1.0,
                            "height": 1.0, "eps": eps})
        seq.append(beta_critical(p, build_grid(p, ref.nodes)))
    c.checks.append(Check.rel("beta_cr smoothed indicator, eps=0.05, vs pi^2/8", seq[-1],
                              sharp_indicator_beta_critical(), 0.02))
    errs = np.abs(np.array(seq) - sharp_indicator_beta_critical())
    c.checks.append(Check.flag("error shrinks along eps = 0.2, 0.1, 0.05",
                               bool(np.all(np.diff(errs) < 0)), errs[-1]))
    c.checks.append(Check.upper("runtime (s)", time.perf_counter() - t0, 10.0))
    c.notes = f"indicator sequence {seq}"
    return c


@_timed
def criterion_2(ref: Reference) -> Criterion:
    c = Criterion(2, "dim=1 growth exponent vs transcendental root, monotone in beta")
    t0 = time.perf_counter()
    p = make_potential({"dim": 1, "shape": "indicator_smoothed", "radius": 1.0, "height": 1.0,
                        "eps": 0.02})
    g = build_grid(p, ref.nodes)
    lam = lambda0(1.0, p, g)
    c.checks.append(Check.abs("lambda0(beta=1) vs sharp-indicator root", lam,
                              sharp_indicator_lambda0_1d(1.0), 1e-3))
    ladder = [lambda0(b, p, g) for b in (0.5, 0.75, 1.0, 1.5, 2.0)]
    c.checks.append(Check.flag("strictly increasing over beta = 0.5..2", bool(np.all(np.diff(ladder) > 0)),
                               float(np.min(np.diff(ladder)))))
    c.checks.append(Check.upper("runtime (s)", time.perf_counter() - t0, 10.0))
    c.notes = f"ladder {ladder}"
    return c


@_timed
def criterion_3(ref: Reference) -> Criterion:
    c = Criterion(3, "ground-state far field: exp(-kappa r)/r supercritical, 1/r critical")
    r = np.linspace(2.0, 5.0, 31)
    gs = ref.gs
    kappa = np.sqrt(2.0 * gs.lambda0)
    slope = np.polyfit(r, np.log(gs.radial(r) * r), 1)[0]
    c.checks.append(Check.rel("fitted decay rate vs sqrt(2 lambda0)", -slope, kappa, 0.05))
    gc = ground_state(ref.beta_cr, ref.potential, ref.grid, normalization="critical")
    expo = np.polyfit(np.log(r), np.log(gc.radial(r)), 1)[0]
    c.checks.append(Check.abs("critical power-law exponent vs -1", expo, -1.0, 0.05))
    return c


@_timed
def criterion_4(ref: Reference) -> Criterion:
    c = Criterion(4, "supercritical growth rate and scaled moments (Monte Carlo vs spectral)")
    rep, secs = ref.super_run
    t_end = rep.times[-1]
    mean_end = rep.moments(1)[0, -1]
    lam_hat, ci = estimate_growth(rep, window=(5.0, t_end), n_boot=400, seed=ref.seed)
    c.checks.append(Check.rel("growth slope vs lambda0", lam_hat, ref.gs.lambda0, 0.05))
    em = empirical_moments(rep, "exp", n_boot=50, seed=ref.seed)
    xm = xi_moments(ref.super_table, 0.0, 2)
    c.checks.append(Check.se("scaled mean at t_end vs (int psi) psi(0)", em.moments[0, -1], xm[0],
                             em.se[0, -1]))
    c.checks.append(Check.se("scaled second moment at t_end vs (int psi)^2 f_2(0)",
                             em.moments[1, -1], xm[1], em.se[1, -1]))
    c.checks.append(Check.upper("mean count at t_end", mean_end, 1000.0))
    c.checks.append(Check.upper("simulation runtime (s)", secs, 300.0))
    c.notes = (f"beta={ref.beta_super:.6f}, lambda0={ref.gs.lambda0:.6f}, M={rep.replicas}, "
               f"slope CI={ci}, truncated={rep.n_truncated}")
    return c


@_timed
def criterion_5(ref: Reference) -> Criterion:
    c = Criterion(5, "additive martingale flat across checkpoints")
    rep, _ = ref.super_run
    mc = martingale_check(rep)
    c.checks.append(Check.flag(">= 5 checkpoints", rep.times.size >= 5, rep.times.size))
    c.checks.append(Check.upper("max pairwise z", mc.flatness, 3.0))
    c.checks.append(Check.upper("first checkpoint vs psi(x0): z", float(mc.z_initial[0]), 3.0))
    c.notes = f"means {mc.means.tolist()}, psi(x0)={mc.initial}"
    return c


@_timed
def criterion_6(ref: Reference) -> Criterion:
    c = Criterion(6, "subcritical limit count: mean and second moment, zero growth")
    t0 = time.perf_counter()
    beta = 0.5 * ref.beta_cr
    T = ref.sub_t_end
    cfg = SimConfig(ref.potential, beta, T, tuple(T * np.array([0.125, 0.25, 0.5, 1.0])),
                    replicas=ref.replicas, seed=ref.seed + 1_000_000)
    rep = run_ensemble(cfg, workers=ref.workers)
    table = subcritical_f(beta, 2, [0.0], ref.potential, ref.grid, beta_cr=ref.beta_cr)
    m = limit_moments_sub(table, 0.0)
    em = empirical_moments(rep, n_boot=50, seed=ref.seed)
    c.checks.append(Check.se("mean count vs f_1(0)", em.moments[0, -1], m[0], em.se[0, -1]))
    c.checks.append(Check.se("second moment vs f_1(0) + f_2(0)", em.moments[1, -1], m[1],
                             em.se[1, -1]))
    slope, (lo, hi) = estimate_growth(rep, n_boot=400, seed=ref.seed)
    half = 0.5 * (hi - lo)
    c.checks.append(Check.abs("growth slope vs 0 (tol: 2 CI half-widths)", slope, 0.0, 2.0 * half))
    c.checks.append(Check.upper("runtime (s)", time.perf_counter() - t0, 300.0))
    c.notes = f"beta={beta:.6f}, t_end={T:g}, M={rep.replicas}"
    return c


@_timed
def criterion_7(ref: Reference) -> Criterion:
    c = Criterion(7, "subcritical sup-norm decay exponent from compact data")
    prob = PdeProblem(ref.potential, 0.5 * ref.beta_cr, 1000.0, h=0.05, dt=0.1, n_max=1,
                      mode="compact")
    ts, vs = solve_rho_bar(prob, record_sup=True).sup_series
    fit = decay_exponent(ts, vs, window=(100.0, 1000.0))
    c.checks.append(Check.abs("fitted exponent vs -3/2", fit.exponent, -1.5, 0.2))
    c.notes = f"curvature {fit.curvature:.3g}, power law {fit.power_law}"
    return c


@_timed
def criterion_8(ref: Reference) -> Criterion:
    c = Criterion(8, "PDE vs spectral limit profile, PDE vs Monte Carlo moments")
    sol = ref.super_pde
    rep, _ = ref.super_run
    gap = ref.gs.lambda0   # no second bound state: the continuum starts at 0
    t_star = np.log(100.0) / gap
    j = int(np.searchsorted(sol.times, t_star))
    if j >= sol.times.size:
        raise RuntimeError("PDE horizon shorter than the spectrally justified time")
    t = sol.times[j]
    r1 = sol.at(0.0, 1)
    r2 = sol.at(0.0, 2)
    xm = xi_moments(ref.super_table, 0.0, 1)[0]
    c.checks.append(Check.rel(f"exp(-lambda0 t) rho_1(t, 0) at t={t:g} vs (int psi) psi(0)",
                              np.exp(-ref.gs.lambda0 * t) * r1[j], xm, 0.02))
    em = empirical_moments(rep, n_boot=10, seed=ref.seed)
    k = -1
    c.checks.append(Check.se("MC mean vs rho_1 at t_end", em.moments[0, k], r1[k], em.se[0, k]))
    c.checks.append(Check.se("MC second moment vs rho_1 + rho_2 at t_end", em.moments[1, k],
                             r1[k] + r2[k], em.se[1, k]))
    c.notes = f"t* = ln(100)/gap = {t_star:.3f}"
    return c


@_timed
def criterion_9(ref: Reference) -> Criterion:
    c = Criterion(9, "critical stabilization and near-critical mean scaling")
    T = ref.critical_T
    cfg = SimConfig(ref.potential, ref.beta_cr, 2 * T, (T / 4, T / 2, T, 2 * T),
                    replicas=ref.replicas, seed=ref.seed + 2_000_000)
    rep = run_ensemble(cfg, workers=ref.workers)
    means = rep.moments(1)[0]
    c.checks.append(Check.flag("mean count strictly increasing", bool(np.all(np.diff(means) > 0)),
                               float(np.min(np.diff(means)))))
    ks = ks_2samp(rep.counts[:, 2], rep.counts[:, 3]).statistic
    c.checks.append(Check.upper(f"KS distance, counts at T={T:g} vs 2T", ks, 0.03))
    gc = ground_state(ref.beta_cr, ref.potential, ref.grid, normalization="critical")
    amps, corrs = [], []
    for frac in (0.90, 0.95, 0.98):
        b = frac * ref.beta_cr
        tab = subcritical_f(b, 1, [0.0], ref.potential, ref.grid, beta_cr=ref.beta_cr)
        amps.append((ref.beta_cr - b) * (tab.f[0, 0] - 1.0))
        corrs.append(np.corrcoef((ref.beta_cr - b) * (tab.f_grid[0] - 1.0), gc.psi)[0, 1])
    spread = (max(amps) - min(amps)) / min(amps)
    c.checks.append(Check.upper("(beta_cr - beta)(f_1(0) - 1) spread over 0.90/0.95/0.98", spread, 0.10))
    c.checks.append(Check.abs("profile correlation with critical ground state (min)", min(corrs),
                              1.0, 1e-3, "value >= 0.999"))
    c.notes = f"means {means.tolist()}, amplitudes {amps}"
    return c


def _partitions(n: int) -> dict:
    """Count set partitions of {0..n-1} by number of blocks, by explicit enumeration."""
    counts = {}

    # restricted growth strings: element i joins one of the open blocks or opens a new one
    def rec(i, blocks):
        if i == n:
            counts[blocks] = counts.get(blocks, 0) + 1
            return
        for _ in range(blocks):
            rec(i + 1, blocks)
        rec(i + 1, blocks + 1)

    rec(0, 0)
    return counts


@_timed
def criterion_10(ref: Reference) -> Criterion:
    c = Criterion(10, "factorial envelope of f_n (A fitted on n <= 3), Stirling numbers")
    notes = []
    sub = subcritical_f(0.5 * ref.beta_cr, 10, [0.0], ref.potential, ref.grid, beta_cr=ref.beta_cr)
    for label, tab in (("supercritical", ref.super_table), ("subcritical", sub)):
        norms = np.max(np.abs(tab.f_grid), axis=1)
        A, ok = factorial_envelope(norms)
        n = np.arange(1, norms.size + 1)
        ratio = (norms / np.array([float(factorial(k)) for k in n])) ** (1.0 / (2 * n - 1))
        worst = int(n[np.argmax(ratio)])
        c.checks.append(Check.flag(f"{label}: ||f_n|| <= A^(2n-1) n! for n = 4..10",
                                   bool(ok[3:].all()), A,
                                   f"A = {A:.4f} fitted on n <= 3; smallest A valid to n=10 is "
                                   f"{ratio.max():.4f} (set by n={worst})"))
        notes.append(f"{label}: (||f_n||/n!)^(1/(2n-1)) = {np.round(ratio, 4).tolist()}")
    good = all(stirling2(n, k) == cnt for n in range(1, 9) for k, cnt in _partitions(n).items())
    c.checks.append(Check.flag("S(n,k) matches partition enumeration for n <= 8", good))
    c.notes = "; ".join(notes)
    return c


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10}
SUITES = {"super": (1, 2, 3, 4, 5, 8, 10), "sub": (6, 7), "critical": (9,)}
SUITES["all"] = tuple(itertools.chain(SUITES["super"], SUITES["sub"], SUITES["critical"]))


def run_suite(name: str, ref: Reference | None = None, on_result=None) -> list:
    """Run a suite; ``on_result`` is called with each finished criterion."""
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    ref = Reference() if ref is None else ref
    out = []
    for cid in SUITES[name]:
        crit = CRITERIA[cid](ref)
        out.append(crit)
        if on_result is not None:
            on_result(crit)
    return out
