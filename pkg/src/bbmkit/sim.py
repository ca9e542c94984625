"""Exact Monte Carlo simulation of branching Brownian motion.

Each particle performs Brownian motion and splits in two at rate beta v(x).
Branch times are sampled exactly by thinning: candidate events arrive at the
dominating rate beta v_max, the particle moves by an exact Gaussian increment
up to the candidate (or to the next checkpoint, whichever is first), and the
candidate is accepted with probability v(x)/v_max. There is no time step.

Random numbers come from a counter-based splitmix64 stream owned by each
particle. A particle's stream is keyed by its lineage: the root key is derived
from the replica seed and every split derives two fresh child keys from the
parent key. A trajectory is therefore a function of its key alone, so the
order in which particles (or replicas, or worker threads) are processed can
not change any result, and the numba and numpy backends consume identical
draws: six uniforms per thinning step (exponential clock, four for two
Box-Muller pairs, one acceptance test).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _accel
from ._accel import njit
from .errors import ValidationError
from .potential import Potential, make_potential

__all__ = [
    "SimConfig",
    "LineageStream",
    "ReplicaResult",
    "EnsembleReport",
    "EstimationError",
    "advance_particle",
    "run_replica",
    "run_ensemble",
    "estimate_growth",
    "martingale_check",
    "empirical_moments",
]

_MASK = (1 << 64) - 1
_GAMMA_I = 0x9E3779B97F4A7C15
_M1_I = 0xBF58476D1CE4E5B9
_M2_I = 0x94D049BB133111EB
_CHILD_A_I = 0xD1B54A32D192ED03
_CHILD_B_I = 0x8CB92BA72F3D8DD7
_SALT_I = 0x632BE59BD9B4E019

GAMMA = np.uint64(_GAMMA_I)
M1 = np.uint64(_M1_I)
M2 = np.uint64(_M2_I)
CHILD_A = np.uint64(_CHILD_A_I)
CHILD_B = np.uint64(_CHILD_B_I)
S30 = np.uint64(30)
S27 = np.uint64(27)
S31 = np.uint64(31)
S11 = np.uint64(11)
ONE = np.uint64(1)
DRAWS_PER_STEP = 6
TWO_M53 = 2.0**-53
TWO_PI = 2.0 * math.pi


class EstimationError(ValueError):
    """An estimator's preconditions do not hold for the given report."""


# --- counter-based random numbers -------------------------------------------

def _mix64_int(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * _M1_I) & _MASK
    z = ((z ^ (z >> 27)) * _M2_I) & _MASK
    return z ^ (z >> 31)


def root_key(seed: int) -> int:
    return _mix64_int((int(seed) + _SALT_I) & _MASK)


@njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> S30)) * M1
    z = (z ^ (z >> S27)) * M2
    return z ^ (z >> S31)


@njit(cache=True, inline="always")
def _uniform(key, c):
    # open interval (0, 1)
    z = _mix64(key + (c + ONE) * GAMMA)
    return (float(z >> S11) + 0.5) * TWO_M53


def _mix64_np(z):
    z = (z ^ (z >> S30)) * M1
    z = (z ^ (z >> S27)) * M2
    return z ^ (z >> S31)


def _uniform_np(key, c):
    z = _mix64_np(key + (c + ONE) * GAMMA)
    return ((z >> S11).astype(np.float64) + 0.5) * TWO_M53


class LineageStream:
    """Per-particle random stream: a 64-bit key plus a draw counter."""

    def __init__(self, seed: int = 0, key: int | None = None):
        self.key = root_key(seed) if key is None else int(key) & _MASK
        self.counter = 0

    def uniform(self, size: int | None = None):
        n = 1 if size is None else int(size)
        c = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        out = _uniform_np(np.full(n, self.key, dtype=np.uint64), c)
        self.counter += n
        return float(out[0]) if size is None else out

    def split(self) -> tuple["LineageStream", "LineageStream"]:
        k = np.array([self.key], dtype=np.uint64)
        a = int(_mix64_np(k ^ CHILD_A)[0])
        b = int(_mix64_np(k + CHILD_B)[0])
        return LineageStream(key=a), LineageStream(key=b)


# --- field and score evaluation (scalar, compiled) --------------------------

@njit(cache=True)
def _v_scalar(kind, prm, xs, vs, coord):
    if kind == 0:  # bump
        s = (coord - prm[0]) / prm[1]
        if abs(s) >= 1.0:
            return 0.0
        return prm[2] * math.exp(1.0 - 1.0 / (1.0 - s * s))
    if kind == 2:  # smoothed indicator
        a, h, eps = prm[0], prm[1], prm[2]
        t = (a + 0.5 * eps - abs(coord)) / eps
        if t <= 0.0:
            return 0.0
        if t >= 1.0:
            return h
        ea = math.exp(-1.0 / t)
        eb = math.exp(-1.0 / (1.0 - t))
        return h * (ea / (ea + eb))
    if kind == 1:  # table
        if coord < xs[0] or coord > xs[-1]:
            return 0.0
        return np.interp(coord, xs, vs)
    return prm[0]  # constant


@njit(cache=True)
def _psi_scalar(dim, coord, tx, tv, amp, kappa):
    if dim == 3:
        if coord <= tx[-1]:
            return np.interp(coord, tx, tv)
        return amp[0] * math.exp(-kappa * coord) / coord
    if coord > tx[-1]:
        return amp[1] * math.exp(-kappa * (coord - tx[-1]))
    if coord < tx[0]:
        return amp[0] * math.exp(-kappa * (tx[0] - coord))
    return np.interp(coord, tx, tv)


@njit(cache=True, inline="always")
def _coord(dim, pos):
    if dim == 3:
        return math.sqrt(pos[0] * pos[0] + pos[1] * pos[1] + pos[2] * pos[2])
    return pos[0]


@njit(cache=True)
def _step(pos, dim, key, ctr, rate, kind, prm, xs, vs, vmax, t_rem):
    """One thinning proposal. Moves ``pos`` in place.

    Returns (dt_used, reached, branched, new_counter): ``reached`` means the
    clock ran past ``t_rem`` and the particle now sits at the end of the window.
    """
    u = _uniform(key, ctr)
    tau = -math.log(u) / rate if rate > 0.0 else math.inf
    reached = tau >= t_rem
    dt = t_rem if reached else tau
    sd = math.sqrt(dt)
    u1 = _uniform(key, ctr + ONE)
    u2 = _uniform(key, ctr + np.uint64(2))
    rad = math.sqrt(-2.0 * math.log(u1))
    pos[0] += sd * (rad * math.cos(TWO_PI * u2))
    if dim == 3:
        pos[1] += sd * (rad * math.sin(TWO_PI * u2))
        u3 = _uniform(key, ctr + np.uint64(3))
        u4 = _uniform(key, ctr + np.uint64(4))
        pos[2] += sd * (math.sqrt(-2.0 * math.log(u3)) * math.cos(TWO_PI * u4))
    branched = False
    if not reached:
        ua = _uniform(key, ctr + np.uint64(5))
        branched = ua * vmax < _v_scalar(kind, prm, xs, vs, _coord(dim, pos))
    return dt, reached, branched, ctr + np.uint64(DRAWS_PER_STEP)


@njit(cache=True)
def _exit_time(dim, c, key, ctr, lo, hi):
    """Time until an exterior particle first reaches the support boundary (inf if never).

    dim=3: from radius c > hi the sphere is hit with probability hi/c, and
    given a hit the time has the law d^2/Z^2 with d = c - hi, Z standard
    normal. dim=1: the nearer edge is hit surely, same law for the time.
    """
    if dim == 3:
        d = c - hi
        hit = _uniform(key, ctr) * c < hi
    else:
        d = c - hi if c > hi else lo - c
        hit = True
    nxt = ctr + np.uint64(DRAWS_PER_STEP)
    if not hit:
        return math.inf, nxt
    u1 = _uniform(key, ctr + ONE)
    u2 = _uniform(key, ctr + np.uint64(2))
    z = math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2)
    if z == 0.0:
        return math.inf, nxt
    return (d * d) / (z * z), nxt


@njit(cache=True, nogil=True)
def _replica_nb(key0, x0, dim, rate, kind, prm, xs, vs, vmax, times,
                uc, ur2, has_psi, tx, tv, amp, kappa, sk, max_particles,
                counts, counts_u, scores):
    nt = times.shape[0]
    cap = 64
    P = np.empty((cap, 3))
    K = np.empty(cap, dtype=np.uint64)
    T = np.empty(cap)
    J = np.empty(cap, dtype=np.int64)
    P[0, :] = x0
    K[0] = key0
    T[0] = 0.0
    J[0] = 0
    top = 1
    total = 1
    branches = 0
    pos = np.empty(3)
    while top > 0:
        top -= 1
        pos[:] = P[top]
        key = K[top]
        t = T[top]
        j = J[top]
        ctr = np.uint64(0)
        while j < nt:
            if sk[0] > 0.0:
                c = _coord(dim, pos)
                if c > sk[2] or c < sk[1]:
                    tt, ctr = _exit_time(dim, c, key, ctr, sk[1], sk[2])
                    tt += t
                    while j < nt and times[j] <= tt:
                        counts[j] += 1
                        counts_u[j] += 1
                        j += 1
                    t = tt
                    if dim == 3:
                        pos[0] = sk[2]
                        pos[1] = 0.0
                        pos[2] = 0.0
                    else:
                        pos[0] = sk[2] if c > sk[2] else sk[1]
                    continue
            dt, reached, branched, ctr = _step(pos, dim, key, ctr, rate, kind, prm, xs, vs,
                                               vmax, times[j] - t)
            if reached:
                t = times[j]
                counts[j] += 1
                d0 = pos[0] - uc[0]
                d2 = d0 * d0
                if dim == 3:
                    d1 = pos[1] - uc[1]
                    d3 = pos[2] - uc[2]
                    d2 += d1 * d1 + d3 * d3
                if d2 <= ur2:
                    counts_u[j] += 1
                if has_psi:
                    scores[j] += _psi_scalar(dim, _coord(dim, pos), tx, tv, amp, kappa)
                j += 1
            else:
                t += dt
                if branched:
                    branches += 1
                    total += 1
                    if total > max_particles:
                        counts[:] = 0
                        counts_u[:] = 0
                        scores[:] = 0.0
                        return branches, True
                    if top == cap:
                        cap *= 2
                        P2 = np.empty((cap, 3))
                        P2[:top] = P[:top]
                        P = P2
                        K2 = np.empty(cap, dtype=np.uint64)
                        K2[:top] = K[:top]
                        K = K2
                        T2 = np.empty(cap)
                        T2[:top] = T[:top]
                        T = T2
                        J2 = np.empty(cap, dtype=np.int64)
                        J2[:top] = J[:top]
                        J = J2
                    P[top, :] = pos
                    K[top] = _mix64(key + CHILD_B)
                    T[top] = t
                    J[top] = j
                    top += 1
                    key = _mix64(key ^ CHILD_A)
                    ctr = np.uint64(0)
    return branches, False


@njit(cache=True, nogil=True)
def _block_nb(keys, x0, dim, rate, kind, prm, xs, vs, vmax, times, uc, ur2,
              has_psi, tx, tv, amp, kappa, sk, max_particles,
              counts, counts_u, scores, branches, truncated):
    for i in range(keys.shape[0]):
        b, tr = _replica_nb(keys[i], x0, dim, rate, kind, prm, xs, vs, vmax, times, uc, ur2,
                            has_psi, tx, tv, amp, kappa, sk, max_particles,
                            counts[i], counts_u[i], scores[i])
        branches[i] = b
        truncated[i] = tr


# --- numpy backend ----------------------------------------------------------

def _coord_np(dim, pos):
    if dim == 3:
        return np.sqrt(pos[:, 0] * pos[:, 0] + pos[:, 1] * pos[:, 1] + pos[:, 2] * pos[:, 2])
    return pos[:, 0].copy()


def _psi_np(dim, c, tx, tv, amp, kappa):
    out = np.interp(c, tx, tv)
    if dim == 3:
        far = c > tx[-1]
        out[far] = amp[0] * np.exp(-kappa * c[far]) / c[far]
        return out
    hi, lo = c > tx[-1], c < tx[0]
    out[hi] = amp[1] * np.exp(-kappa * (c[hi] - tx[-1]))
    out[lo] = amp[0] * np.exp(-kappa * (tx[0] - c[lo]))
    return out


def _step_np(pos, dim, key, ctr, rate, p: Potential, vmax, t_rem):
    u = _uniform_np(key, ctr)
    with np.errstate(divide="ignore"):
        tau = -np.log(u) / rate if rate > 0 else np.full(u.shape, np.inf)
    reached = tau >= t_rem
    dt = np.where(reached, t_rem, tau)
    sd = np.sqrt(dt)
    u1 = _uniform_np(key, ctr + ONE)
    u2 = _uniform_np(key, ctr + np.uint64(2))
    rad = np.sqrt(-2.0 * np.log(u1))
    pos[:, 0] += sd * (rad * np.cos(TWO_PI * u2))
    if dim == 3:
        pos[:, 1] += sd * (rad * np.sin(TWO_PI * u2))
        u3 = _uniform_np(key, ctr + np.uint64(3))
        u4 = _uniform_np(key, ctr + np.uint64(4))
        pos[:, 2] += sd * (np.sqrt(-2.0 * np.log(u3)) * np.cos(TWO_PI * u4))
    ua = _uniform_np(key, ctr + np.uint64(5))
    branched = ~reached & (ua * vmax < p.radial(_coord_np(dim, pos)))
    return dt, reached, branched, ctr + np.uint64(DRAWS_PER_STEP)


def _exit_np(dim, c, key, ctr, lo, hi):
    if dim == 3:
        d = c - hi
        hit = _uniform_np(key, ctr) * c < hi
    else:
        d = np.where(c > hi, c - hi, lo - c)
        hit = np.ones(c.size, dtype=bool)
    u1 = _uniform_np(key, ctr + ONE)
    u2 = _uniform_np(key, ctr + np.uint64(2))
    z = np.sqrt(-2.0 * np.log(u1)) * np.cos(TWO_PI * u2)
    with np.errstate(divide="ignore"):
        T = np.where(hit & (z != 0.0), (d * d) / (z * z), np.inf)
    return T, ctr + np.uint64(DRAWS_PER_STEP)


def _block_np(keys, x0, dim, rate, p, vmax, times, uc, ur2, psi, sk, max_particles,
              counts, counts_u, scores, branches, truncated):
    # every live particle takes exactly one action per sweep (exterior jump or
    # thinning step), in the same order as the compiled per-particle loop
    nt = times.size
    n = keys.size
    pos = np.tile(np.asarray(x0, dtype=float), (n, 1))
    key = keys.astype(np.uint64).copy()
    ctr = np.zeros(n, dtype=np.uint64)
    t = np.zeros(n)
    j = np.zeros(n, dtype=np.int64)
    rep = np.arange(n)
    total = np.ones(n, dtype=np.int64)
    while rep.size:
        act = np.ones(rep.size, dtype=bool)
        if sk[0] > 0:
            c = _coord_np(dim, pos)
            ext = (c > sk[2]) | (c < sk[1])
            if ext.any():
                e = np.nonzero(ext)[0]
                T, ctr[e] = _exit_np(dim, c[e], key[e], ctr[e], sk[1], sk[2])
                tt = t[e] + T
                jn = np.maximum(np.searchsorted(times, tt, side="right"), j[e])
                for k in range(nt):
                    sel = (j[e] <= k) & (k < jn)
                    if sel.any():
                        np.add.at(counts, (rep[e][sel], k), 1)
                        np.add.at(counts_u, (rep[e][sel], k), 1)
                j[e] = jn
                t[e] = tt
                if dim == 3:
                    pos[e] = (sk[2], 0.0, 0.0)
                else:
                    pos[e, 0] = np.where(c[e] > sk[2], sk[2], sk[1])
                act = ~ext
        i = np.nonzero(act)[0]
        pi = pos[i]
        dt, reached, branched, ctr[i] = _step_np(pi, dim, key[i], ctr[i], rate, p, vmax,
                                                 times[j[i]] - t[i])
        pos[i] = pi
        t[i] = np.where(reached, times[j[i]], t[i] + dt)
        if reached.any():
            r = i[reached]
            rr, jj, pp = rep[r], j[r], pos[r]
            np.add.at(counts, (rr, jj), 1)
            d = pp[:, :dim] - uc[:dim]
            inside = np.einsum("ij,ij->i", d, d) <= ur2
            np.add.at(counts_u, (rr[inside], jj[inside]), 1)
            if psi is not None:
                np.add.at(scores, (rr, jj), _psi_np(dim, _coord_np(dim, pp), *psi))
            j[r] += 1
        if branched.any():
            bi = i[branched]
            nb = np.bincount(rep[bi], minlength=n)
            branches += nb
            total += nb
            kb = key[bi]
            key[bi] = _mix64_np(kb ^ CHILD_A)
            ctr[bi] = 0
            pos = np.concatenate([pos, pos[bi]])
            key = np.concatenate([key, _mix64_np(kb + CHILD_B)])
            ctr = np.concatenate([ctr, np.zeros(kb.size, dtype=np.uint64)])
            t = np.concatenate([t, t[bi]])
            j = np.concatenate([j, j[bi]])
            rep = np.concatenate([rep, rep[bi]])
            truncated |= total > max_particles
        keep = (j < nt) & ~truncated[rep]
        pos, key, ctr, t, j, rep = pos[keep], key[keep], ctr[keep], t[keep], j[keep], rep[keep]
    counts[truncated] = 0
    counts_u[truncated] = 0
    scores[truncated] = 0.0


# --- configuration ----------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    """Simulation setup. ``count_region`` is ``(center, radius)`` or None for all space."""

    potential: Potential
    beta: float
    t_end: float
    checkpoints: tuple = ()
    replicas: int = 1000
    seed: int = 0
    x0: tuple | None = None
    count_region: tuple | None = None
    max_particles: int = 10**6
    fast_exterior: bool = True

    def __post_init__(self):
        dim = self.potential.dim
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise ValidationError(f"beta must be finite and >= 0, got {self.beta}")
        if not (np.isfinite(self.t_end) and self.t_end > 0):
            raise ValidationError(f"t_end must be positive, got {self.t_end}")
        cps = tuple(float(c) for c in self.checkpoints)
        if any(b <= a for a, b in zip(cps, cps[1:])):
            raise ValidationError("checkpoints must be strictly increasing")
        if cps and (cps[0] <= 0 or cps[-1] > self.t_end):
            raise ValidationError("checkpoints must lie in (0, t_end]")
        object.__setattr__(self, "checkpoints", cps)
        if int(self.replicas) < 1:
            raise ValidationError("replicas must be >= 1")
        if int(self.max_particles) < 1:
            raise ValidationError("max_particles must be >= 1")
        if int(self.seed) < 0:
            raise ValidationError("seed must be a nonnegative integer")
        x0 = (0.0,) * dim if self.x0 is None else tuple(float(c) for c in np.atleast_1d(self.x0))
        if len(x0) != dim or not all(np.isfinite(x0)):
            raise ValidationError(f"x0 must be a finite point of dimension {dim}")
        object.__setattr__(self, "x0", x0)
        if self.count_region is not None:
            center, radius = self.count_region
            center = tuple(float(c) for c in np.atleast_1d(center))
            if len(center) != dim or not float(radius) > 0:
                raise ValidationError("count_region must be (center of matching dim, radius > 0)")
            object.__setattr__(self, "count_region", (center, float(radius)))

    @property
    def dim(self) -> int:
        return self.potential.dim

    @property
    def times(self) -> np.ndarray:
        """Recording times: the checkpoints, with t_end appended if missing."""
        cps = list(self.checkpoints)
        if not cps or cps[-1] < self.t_end:
            cps.append(float(self.t_end))
        return np.asarray(cps)

    def to_dict(self) -> dict:
        region = None
        if self.count_region is not None:
            region = {"center": list(self.count_region[0]), "radius": self.count_region[1]}
        return {
            "potential": self.potential.to_dict(),
            "beta": float(self.beta),
            "t_end": float(self.t_end),
            "checkpoints": list(self.checkpoints),
            "replicas": int(self.replicas),
            "seed": int(self.seed),
            "x0": list(self.x0),
            "count_region": region,
            "max_particles": int(self.max_particles),
            "fast_exterior": bool(self.fast_exterior),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        known = {"potential", "beta", "t_end", "checkpoints", "replicas", "seed", "x0",
                 "count_region", "max_particles", "fast_exterior"}
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown config keys: {sorted(extra)}")
        if "potential" not in d or "beta" not in d or "t_end" not in d:
            raise ValidationError("config needs potential, beta and t_end")
        region = d.get("count_region")
        if isinstance(region, dict):
            region = (region["center"], region["radius"])
        return cls(potential=make_potential(d["potential"]), beta=float(d["beta"]),
                   t_end=float(d["t_end"]), checkpoints=tuple(d.get("checkpoints", ())),
                   replicas=int(d.get("replicas", 1000)), seed=int(d.get("seed", 0)),
                   x0=d.get("x0"), count_region=region,
                   max_particles=int(d.get("max_particles", 10**6)),
                   fast_exterior=bool(d.get("fast_exterior", True)))

    def hash(self) -> str:
        return _digest(self.to_dict())

    def model_hash(self) -> str:
        """Hash of everything except the replica count and seed; equal for mergeable runs."""
        d = self.to_dict()
        d.pop("replicas")
        d.pop("seed")
        return _digest(d)


def _digest(d) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


# --- running ----------------------------------------------------------------

@dataclass(frozen=True)
class ReplicaResult:
    times: np.ndarray
    counts: np.ndarray
    counts_u: np.ndarray
    scores: np.ndarray | None
    branches: int
    truncated: bool


def _psi_args(gs, dim):
    if gs is None:
        return False, np.zeros(2), np.zeros(2), np.zeros(2), 0.0
    if gs.grid.dim != dim:
        raise ValidationError("ground state and potential dimensions differ")
    tx, tv, amp, kappa = gs.score_table()
    amp = np.resize(np.asarray(amp, dtype=float), 2)
    return True, np.ascontiguousarray(tx), np.ascontiguousarray(tv), amp, float(kappa)


def _skip_args(cfg, has_psi):
    """Exterior fast-forward is exact only when nothing observes exterior positions."""
    p = cfg.potential
    if (not cfg.fast_exterior or has_psi or cfg.count_region is not None
            or p.shape == "constant"):
        return np.zeros(3)
    lo, hi = p.interval
    return np.array([1.0, -np.inf if p.dim == 3 else lo, hi])


def _run_keys(cfg: SimConfig, keys: np.ndarray, gs=None, workers: int = 1):
    p = cfg.potential
    dim = cfg.dim
    times = cfg.times
    m, nt = keys.size, times.size
    counts = np.zeros((m, nt), dtype=np.int64)
    counts_u = np.zeros((m, nt), dtype=np.int64)
    scores = np.zeros((m, nt))
    branches = np.zeros(m, dtype=np.int64)
    truncated = np.zeros(m, dtype=bool)
    x0 = np.zeros(3)
    x0[:dim] = cfg.x0
    uc = np.zeros(3)
    ur2 = np.inf
    if cfg.count_region is not None:
        uc[:dim] = cfg.count_region[0]
        ur2 = cfg.count_region[1] ** 2
    has_psi, tx, tv, amp, kappa = _psi_args(gs, dim)
    rate = float(cfg.beta * p.v_max)
    kind, prm, xs, vs = p.kernel_params()
    sk = _skip_args(cfg, has_psi)
    chunks = np.array_split(np.arange(m), max(1, min(int(workers), m)))

    def work(idx):
        sl = slice(idx[0], idx[-1] + 1) if idx.size else slice(0, 0)
        if idx.size == 0:
            return
        if _accel.get_backend() == "numba":
            _block_nb(keys[sl], x0, dim, rate, kind, prm, xs, vs, float(p.v_max), times, uc, ur2,
                      has_psi, tx, tv, amp, kappa, sk, int(cfg.max_particles),
                      counts[sl], counts_u[sl], scores[sl], branches[sl], truncated[sl])
        else:
            _block_np(keys[sl], x0, dim, rate, p, float(p.v_max), times, uc, ur2,
                      (tx, tv, amp, kappa) if has_psi else None, sk, int(cfg.max_particles),
                      counts[sl], counts_u[sl], scores[sl], branches[sl], truncated[sl])

    if len(chunks) == 1:
        work(chunks[0])
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            list(pool.map(work, chunks))
    return times, counts, counts_u, (scores if has_psi else None), branches, truncated


def _keys_for(seeds) -> np.ndarray:
    return np.array([root_key(s) for s in seeds], dtype=np.uint64)


def advance_particle(pos, rng: LineageStream, beta: float, potential: Potential,
                     t_remaining: float):
    """One exact thinning proposal from ``pos``.

    Returns ``(new_pos, branched, dt_used)``. The stream's counter advances by
    six draws. With beta = 0 the particle diffuses straight to the end of the
    window.
    """
    dim = potential.dim
    p = np.zeros(3)
    p[:dim] = np.atleast_1d(np.asarray(pos, dtype=float))
    rate = float(beta * potential.v_max)
    vmax = float(potential.v_max)
    if _accel.get_backend() == "numba":
        kind, prm, xs, vs = potential.kernel_params()
        dt, _, branched, _ = _step(p, dim, np.uint64(rng.key), np.uint64(rng.counter), rate,
                                   kind, prm, xs, vs, vmax, float(t_remaining))
    else:
        P = p[None, :]
        dt, _, br, _ = _step_np(P, dim, np.array([rng.key], dtype=np.uint64),
                                np.array([rng.counter], dtype=np.uint64), rate, potential,
                                vmax, np.array([float(t_remaining)]))
        p, dt, branched = P[0], float(dt[0]), bool(br[0])
    rng.counter += DRAWS_PER_STEP
    new = p[:dim].copy()
    return (float(new[0]) if dim == 1 else new), bool(branched), float(dt)


def run_replica(config: SimConfig, seed: int, ground_state=None) -> ReplicaResult:
    """Simulate one replica. Deterministic in (config, seed); independent of backend."""
    times, c, cu, s, b, tr = _run_keys(config, _keys_for([seed]), ground_state)
    return ReplicaResult(times, c[0], cu[0], None if s is None else s[0], int(b[0]), bool(tr[0]))


def run_ensemble(config: SimConfig, ground_state=None, workers: int = 1) -> "EnsembleReport":
    """Replicas with seeds ``seed + i``; the worker count never changes the result."""
    seeds = int(config.seed) + np.arange(int(config.replicas), dtype=np.int64)
    times, c, cu, s, b, tr = _run_keys(config, _keys_for(seeds), ground_state, workers)
    lam0 = psi0 = None
    if ground_state is not None:
        lam0 = float(ground_state.lambda0)
        psi0 = float(ground_state(np.asarray([config.x0]))[0]) if config.dim == 3 \
            else float(ground_state(np.asarray(config.x0))[0])
    return EnsembleReport(times, c, cu, s, b, tr, seeds, config.model_hash(), float(config.beta),
                          lam0, psi0)


# --- reports ----------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleReport:
    """Per-replica counts at the recording times.

    Rows are replicas. Merging concatenates rows, so pooled moments are exact.
    Truncated replicas (count above ``max_particles``) keep zero rows and are
    flagged in ``truncated``.
    """

    times: np.ndarray
    counts: np.ndarray
    counts_u: np.ndarray
    scores: np.ndarray | None
    branches: np.ndarray
    truncated: np.ndarray
    seeds: np.ndarray
    config_hash: str
    beta: float = float("nan")
    lambda0: float | None = None
    psi_x0: float | None = None
    merge_count: int = 1
    meta: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_counts(cls, times, counts, **kw) -> "EnsembleReport":
        counts = np.atleast_2d(np.asarray(counts))
        m = counts.shape[0]
        return cls(np.asarray(times, dtype=float), counts, counts.copy(), kw.pop("scores", None),
                   np.zeros(m, dtype=np.int64), np.zeros(m, dtype=bool),
                   np.arange(m), kw.pop("config_hash", "synthetic"), **kw)

    @property
    def replicas(self) -> int:
        return int(self.counts.shape[0])

    @property
    def n_truncated(self) -> int:
        return int(self.truncated.sum())

    def valid(self, region: bool = False) -> np.ndarray:
        if self.n_truncated:
            raise EstimationError(f"{self.n_truncated} replicas hit max_particles; "
                                  "raise the cap or shorten t_end")
        return (self.counts_u if region else self.counts).astype(float)

    def moments(self, kmax: int = 4, region: bool = False) -> np.ndarray:
        """Raw moments E n_t^k, k = 1..kmax, one column per recording time."""
        x = self.valid(region)
        return np.stack([np.mean(x**k, axis=0) for k in range(1, kmax + 1)])

    def merge(self, other: "EnsembleReport") -> "EnsembleReport":
        if self.config_hash != other.config_hash or not np.array_equal(self.times, other.times):
            raise ValidationError("reports come from different configurations")
        if np.intersect1d(self.seeds, other.seeds).size:
            raise ValidationError("reports share seeds; merged statistics would double count")
        cat = np.concatenate
        scores = None
        if self.scores is not None and other.scores is not None:
            scores = cat([self.scores, other.scores])
        return replace(self, counts=cat([self.counts, other.counts]),
                       counts_u=cat([self.counts_u, other.counts_u]), scores=scores,
                       branches=cat([self.branches, other.branches]),
                       truncated=cat([self.truncated, other.truncated]),
                       seeds=cat([self.seeds, other.seeds]),
                       merge_count=self.merge_count + other.merge_count)

    def summary(self) -> dict:
        out = {
            "model_hash": self.config_hash,
            "replicas": self.replicas,
            "seeds": [int(self.seeds[0]), int(self.seeds[-1])] if self.replicas else [],
            "truncated": self.n_truncated,
            "merge_count": self.merge_count,
            "times": self.times.tolist(),
            "total_branch_events": int(self.branches.sum()),
        }
        if not self.n_truncated:
            out["raw_moments"] = self.moments().tolist()
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "replica_id", "n_t", "n_t_U", "psi_score"])
            for i in range(self.replicas):
                for j, t in enumerate(self.times):
                    score = "" if self.scores is None else repr(float(self.scores[i, j]))
                    w.writerow([repr(float(t)), int(self.seeds[i]), int(self.counts[i, j]),
                                int(self.counts_u[i, j]), score])


# --- estimators -------------------------------------------------------------

def _window(report, window):
    t = report.times
    if window is None:
        return np.ones(t.size, dtype=bool)
    lo, hi = window
    return (t >= lo) & (t <= hi)


def _slope(t, means):
    return np.polyfit(t, np.log(means), 1)[0]


def estimate_growth(report: EnsembleReport, window=None, n_boot: int = 1000,
                    level: float = 0.95, seed: int = 0):
    """Least-squares slope of log mean count against t, with a replica bootstrap CI."""
    sel = _window(report, window)
    if sel.sum() < 4:
        raise EstimationError("need at least 4 recording times in the window")
    x = report.valid()[:, sel]
    t = report.times[sel]
    means = x.mean(axis=0)
    if np.any(means <= 0):
        raise EstimationError("nonpositive mean count in the window")
    lam = float(_slope(t, means))
    rng = np.random.default_rng(seed)
    m = x.shape[0]
    boots = np.empty(n_boot)
    for b in range(n_boot):
        boots[b] = _slope(t, x[rng.integers(0, m, m)].mean(axis=0))
    a = 0.5 * (1.0 - level)
    lo, hi = np.quantile(boots, [a, 1.0 - a])
    return lam, (float(lo), float(hi))


@dataclass(frozen=True)
class MartingaleCheck:
    times: np.ndarray
    means: np.ndarray
    se: np.ndarray
    initial: float
    z_initial: np.ndarray
    z_pairs: np.ndarray
    flatness: float


def martingale_check(report: EnsembleReport, gs=None) -> MartingaleCheck:
    """Flatness of E[e^{-lambda0 t} sum_i psi(X_i(t))] across recording times.

    Pairwise z-scores use per-replica differences, since the times share replicas.
    """
    if not report.beta > 0:
        raise ValidationError("beta = 0 has no growth rate; the martingale check needs beta > 0")
    if report.scores is None:
        raise ValidationError("report carries no psi scores; rerun with a ground state")
    lam = report.lambda0 if gs is None else gs.lambda0
    if lam is None or not lam > 0:
        raise ValidationError("martingale check needs a supercritical ground state")
    report.valid()
    w = report.scores * np.exp(-lam * report.times)[None, :]
    m = w.shape[0]
    means = w.mean(axis=0)
    se = w.std(axis=0, ddof=1) / np.sqrt(m)
    init = float(report.psi_x0)
    z0 = np.abs(means - init) / se
    nt = means.size
    zp = np.zeros((nt, nt))
    for i in range(nt):
        for j in range(i + 1, nt):
            d = w[:, i] - w[:, j]
            s = d.std(ddof=1) / np.sqrt(m)
            zp[i, j] = zp[j, i] = abs(d.mean()) / s if s > 0 else 0.0
    return MartingaleCheck(report.times, means, se, init, z0, zp, float(zp.max()))


@dataclass(frozen=True)
class MomentEstimate:
    times: np.ndarray
    moments: np.ndarray      # (4, nt)
    se: np.ndarray           # (4, nt)
    ci: np.ndarray           # (4, nt, 2)
    scaling: str


def empirical_moments(report: EnsembleReport, scaling: str = "none", lambda0: float | None = None,
                      n_boot: int = 200, level: float = 0.95, seed: int = 0,
                      region: bool = False) -> MomentEstimate:
    """Raw moments 1..4 per recording time, optionally of e^{-lambda0 t} n_t."""
    x = report.valid(region)
    if scaling == "exp":
        lam = report.lambda0 if lambda0 is None else lambda0
        if lam is None:
            raise ValidationError("exp scaling needs lambda0")
        x = x * np.exp(-lam * report.times)[None, :]
    elif scaling != "none":
        raise ValidationError(f"scaling must be 'none' or 'exp', got {scaling!r}")
    m = x.shape[0]
    pw = np.stack([x**k for k in range(1, 5)])          # (4, m, nt)
    mom = pw.mean(axis=1)
    se = pw.std(axis=1, ddof=1) / np.sqrt(m) if m > 1 else np.zeros_like(mom)
    rng = np.random.default_rng(seed)
    boots = np.empty((n_boot,) + mom.shape)
    for b in range(n_boot):
        boots[b] = pw[:, rng.integers(0, m, m)].mean(axis=1)
    a = 0.5 * (1.0 - level)
    ci = np.moveaxis(np.quantile(boots, [a, 1.0 - a], axis=0), 0, -1)
    return MomentEstimate(report.times, mom, se, ci, scaling)
