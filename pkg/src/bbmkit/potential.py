"""Branching fields v: continuous, nonnegative, compactly supported.

Three shapes are supported. In dim=3 every shape is radial, so the
evaluation depends only on |x|.

* ``bump``: h * exp(1 - 1/(1 - (r/a)^2)) for r < a, zero otherwise.
* ``table``: piecewise-linear through (xs, vs), clamped to zero outside
  [xs[0], xs[-1]]. In dim=3 the abscissae are radii.
* ``indicator_smoothed``: h on |x| <= a - eps/2, zero beyond a + eps/2,
  joined by a C-infinity step that is odd-symmetric about a, so the sharp
  indicator of radius a is recovered with O(eps^2) error.

A fourth kind, ``constant``, is not a valid branching field (it has no
compact support). It exists only so tests can drive the simulator against
the Yule-process closed forms and is never produced by :func:`make_potential`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

__all__ = ["Potential", "PotentialError", "make_potential", "eval_v", "constant_field"]

KIND_BUMP = 0
KIND_TABLE = 1
KIND_INDICATOR = 2
KIND_CONSTANT = 3

_SHAPES = {"bump": KIND_BUMP, "table": KIND_TABLE, "indicator_smoothed": KIND_INDICATOR}


class PotentialError(ValidationError):
    """Raised for shape descriptions that violate the admissibility rules."""


def _smooth_step(t):
    # 0 for t <= 0, 1 for t >= 1, C-infinity in between, S(t) + S(1 - t) = 1
    t = np.asarray(t, dtype=float)
    out = np.where(t >= 1.0, 1.0, 0.0)
    mid = (t > 0.0) & (t < 1.0)
    if np.any(mid):
        tm = t[mid]
        a = np.exp(-1.0 / tm)
        b = np.exp(-1.0 / (1.0 - tm))
        out[mid] = a / (a + b)
    return out


@dataclass(frozen=True)
class Potential:
    """A validated branching field. Immutable; safe to share between workers."""

    dim: int
    shape: str
    params: dict
    v_max: float
    support_radius: float
    xs: np.ndarray = field(default=None, repr=False, compare=False)
    vs: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def kind(self) -> int:
        if self.shape == "constant":
            return KIND_CONSTANT
        return _SHAPES[self.shape]

    @property
    def interval(self) -> tuple[float, float]:
        """Closed interval (dim=1) or radial range (dim=3) containing supp v."""
        p = self.params
        if self.shape == "bump":
            if self.dim == 1:
                return (p["center"] - p["radius"], p["center"] + p["radius"])
            return (0.0, p["radius"])
        if self.shape == "indicator_smoothed":
            outer = p["radius"] + 0.5 * p["eps"]
            return (-outer, outer) if self.dim == 1 else (0.0, outer)
        if self.shape == "table":
            if self.dim == 1:
                return (float(self.xs[0]), float(self.xs[-1]))
            return (0.0, float(self.xs[-1]))
        raise PotentialError("constant field has no bounded support")

    def breakpoints(self) -> np.ndarray:
        """Points where v loses smoothness; quadrature panels should not straddle them."""
        lo, hi = self.interval
        pts = [lo, hi]
        if self.shape == "indicator_smoothed":
            a, eps = self.params["radius"], self.params["eps"]
            inner = [a - 0.5 * eps, a + 0.5 * eps]
            pts += inner if self.dim == 3 else inner + [-x for x in inner]
        elif self.shape == "table":
            pts += list(self.xs)
        pts = np.unique(np.clip(np.asarray(pts, dtype=float), lo, hi))
        return pts

    def radial(self, r) -> np.ndarray:
        """Profile as a function of the coordinate used by the kernels (|x| in dim=3)."""
        r = np.asarray(r, dtype=float)
        p = self.params
        if self.shape == "bump":
            a, h = p["radius"], p["height"]
            s = (r - p.get("center", 0.0)) / a if self.dim == 1 else r / a
            out = np.zeros_like(s)
            inside = np.abs(s) < 1.0
            out[inside] = h * np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
            return out
        if self.shape == "indicator_smoothed":
            a, h, eps = p["radius"], p["height"], p["eps"]
            return h * _smooth_step((a + 0.5 * eps - np.abs(r)) / eps)
        if self.shape == "table":
            return np.interp(r, self.xs, self.vs, left=0.0, right=0.0)
        if self.shape == "constant":
            return np.full_like(r, p["value"])
        raise PotentialError(f"unknown shape {self.shape!r}")

    def __call__(self, x) -> np.ndarray:
        """Evaluate v at points. dim=3 accepts (..., 3) arrays; dim=1 accepts scalars/arrays."""
        x = np.asarray(x, dtype=float)
        if self.dim == 3:
            if x.shape[-1:] != (3,):
                raise ValueError("dim=3 potential expects points with a trailing axis of length 3")
            return self.radial(np.linalg.norm(x, axis=-1))
        return self.radial(x)

    def kernel_params(self):
        """Flat arrays describing v for the compiled simulator kernels."""
        p = self.params
        if self.shape == "bump":
            prm = [p.get("center", 0.0), p["radius"], p["height"]]
        elif self.shape == "indicator_smoothed":
            prm = [p["radius"], p["height"], p["eps"]]
        elif self.shape == "constant":
            prm = [p["value"]]
        else:
            prm = [0.0]
        xs = self.xs if self.xs is not None else np.zeros(1)
        vs = self.vs if self.vs is not None else np.zeros(1)
        return (self.kind, np.asarray(prm, dtype=float),
                np.ascontiguousarray(xs, dtype=float), np.ascontiguousarray(vs, dtype=float))

    def to_dict(self) -> dict:
        d = {"dim": self.dim, "shape": self.shape}
        if self.shape == "table":
            d["xs"] = [float(x) for x in self.xs]
            d["vs"] = [float(v) for v in self.vs]
        else:
            d.update({k: float(v) for k, v in self.params.items()})
        return d

    def scaled(self, s: float) -> "Potential":
        """The field x -> v(x / s)."""
        d = self.to_dict()
        if self.shape == "table":
            d["xs"] = [s * x for x in d["xs"]]
        else:
            for key in ("radius", "center", "eps"):
                if key in d:
                    d[key] = s * d[key]
        return make_potential(d)


def _positive(d, key, default=None):
    val = d.get(key, default)
    if val is None:
        raise PotentialError(f"missing parameter {key!r}")
    val = float(val)
    if not np.isfinite(val) or val <= 0:
        raise PotentialError(f"{key} must be positive, got {val}")
    return val


def make_potential(spec) -> Potential:
    """Build a validated :class:`Potential` from a dict or JSON string.

    >>> make_potential({"dim": 3, "shape": "bump", "radius": 1.0, "height": 1.0}).v_max
    1.0
    """
    if isinstance(spec, str):
        spec = json.loads(spec)
    spec = dict(spec)
    dim = int(spec.get("dim", 3))
    if dim not in (1, 3):
        raise PotentialError(f"dim must be 1 or 3, got {dim}")
    shape = spec.get("shape")
    if shape not in _SHAPES:
        raise PotentialError(f"shape must be one of {sorted(_SHAPES)}, got {shape!r}")

    if shape == "bump":
        a = _positive(spec, "radius")
        h = _positive(spec, "height")
        c = float(spec.get("center", 0.0))
        if dim == 3 and c != 0.0:
            raise PotentialError("dim=3 shapes are radial; center must be 0")
        return Potential(dim, shape, {"center": c, "radius": a, "height": h},
                         v_max=h, support_radius=abs(c) + a)

    if shape == "indicator_smoothed":
        a = _positive(spec, "radius")
        h = _positive(spec, "height")
        eps = _positive(spec, "eps", spec.get("width"))
        if eps >= 2 * a:
            raise PotentialError("smoothing width must be smaller than the diameter 2*radius")
        return Potential(dim, shape, {"radius": a, "height": h, "eps": eps},
                         v_max=h, support_radius=a + 0.5 * eps)

    xs = np.asarray(spec.get("xs", []), dtype=float)
    vs = np.asarray(spec.get("vs", []), dtype=float)
    if xs.ndim != 1 or xs.size < 2 or xs.shape != vs.shape:
        raise PotentialError("table needs matching 1-D xs and vs with at least two entries")
    if not np.all(np.isfinite(xs)) or not np.all(np.isfinite(vs)):
        raise PotentialError("table entries must be finite")
    if np.any(np.diff(xs) <= 0):
        raise PotentialError("table abscissae must be strictly increasing")
    if np.any(vs < 0):
        raise PotentialError("table values must be nonnegative")
    if vs.max() <= 0:
        raise PotentialError("table field is identically zero (empty support)")
    if dim == 3:
        if xs[0] < 0:
            raise PotentialError("dim=3 table abscissae are radii and must be >= 0")
        if vs[-1] != 0 or (xs[0] > 0 and vs[0] != 0):
            raise PotentialError("table endpoint values must be 0 for continuity")
        support = float(xs[-1])
    else:
        if vs[0] != 0 or vs[-1] != 0:
            raise PotentialError("table endpoint values must be 0 for continuity")
        support = float(max(abs(xs[0]), abs(xs[-1])))
    xs.setflags(write=False)
    vs.setflags(write=False)
    return Potential(dim, shape, {}, v_max=float(vs.max()), support_radius=support, xs=xs, vs=vs)


def constant_field(value: float, dim: int = 3) -> Potential:
    """Spatially constant rate. Test-only: it violates compact support on purpose."""
    return Potential(dim, "constant", {"value": float(value)}, v_max=float(value),
                     support_radius=np.inf)


def eval_v(p: Potential, x) -> np.ndarray:
    return p(x)
