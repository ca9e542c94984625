"""Composite Gauss-Legendre panels over the support of a branching field."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .potential import Potential

__all__ = ["QuadGrid", "build_grid", "panel_grid", "extend_grid", "lagrange_matrix"]

MIN_NODES = 16
DEFAULT_ORDER = 16


@dataclass(frozen=True)
class QuadGrid:
    """Quadrature nodes and weights.

    In dim=3 the nodes are radii and the weights carry the 4*pi*r^2 shell
    factor, so ``sum(w * f(r))`` approximates the volume integral of a radial f.
    """

    dim: int
    edges: np.ndarray          # panel endpoints, length P + 1
    nodes: np.ndarray
    weights: np.ndarray
    raw_weights: np.ndarray    # 1-D Gauss weights, no shell factor
    panel_of: np.ndarray       # panel index of each node
    starts: np.ndarray         # first node index of each panel, length P + 1

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def n_panels(self) -> int:
        return self.edges.size - 1

    def panel_nodes(self, p: int) -> slice:
        return slice(self.starts[p], self.starts[p + 1])

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


def _gauss(order: int, a: float, b: float):
    t, w = np.polynomial.legendre.leggauss(order)
    half = 0.5 * (b - a)
    return a + half * (t + 1.0), half * w


def panel_grid(dim: int, edges, orders) -> QuadGrid:
    edges = np.asarray(edges, dtype=float)
    orders = np.broadcast_to(np.asarray(orders, dtype=int), (edges.size - 1,))
    xs, ws, owner = [], [], []
    for p, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        x, w = _gauss(int(orders[p]), a, b)
        xs.append(x)
        ws.append(w)
        owner.append(np.full(x.size, p))
    nodes = np.concatenate(xs)
    raw = np.concatenate(ws)
    weights = raw * 4.0 * np.pi * nodes**2 if dim == 3 else raw.copy()
    starts = np.concatenate([[0], np.cumsum(orders)])
    return QuadGrid(dim, edges, nodes, weights, raw, np.concatenate(owner), starts)


def _allocate(lengths, n_panels):
    # at least one panel per segment, the rest proportional to length
    k = len(lengths)
    alloc = np.ones(k, dtype=int)
    for _ in range(n_panels - k):
        alloc[np.argmax(lengths / alloc)] += 1
    return alloc


def build_grid(p: Potential, n_nodes: int, order: int = DEFAULT_ORDER) -> QuadGrid:
    """Panels covering supp v, split at the field's breakpoints.

    ``n_nodes`` is honoured exactly; nodes are shared as evenly as possible
    between ``max(n_nodes // order, #segments)`` panels.
    """
    n_nodes = int(n_nodes)
    if n_nodes < MIN_NODES:
        raise ValidationError(f"n_nodes must be >= {MIN_NODES}, got {n_nodes}")
    bp = p.breakpoints()
    lengths = np.diff(bp)
    keep = lengths > 1e-14 * (bp[-1] - bp[0])
    bp = np.concatenate([bp[:1], bp[1:][keep]])
    lengths = np.diff(bp)
    n_panels = max(n_nodes // order, lengths.size)
    if n_panels * 4 > n_nodes:
        raise ValidationError(f"{n_nodes} nodes cannot cover {lengths.size} smooth segments")
    alloc = _allocate(lengths, n_panels)
    edges = [bp[0]]
    for seg, m in enumerate(alloc):
        edges.extend(np.linspace(bp[seg], bp[seg + 1], m + 1)[1:])
    base, extra = divmod(n_nodes, n_panels)
    orders = np.full(n_panels, base)
    orders[:extra] += 1
    return panel_grid(p.dim, np.asarray(edges), orders)


def extend_grid(grid: QuadGrid, reach: float, panel_width: float = 0.5,
                order: int = DEFAULT_ORDER) -> QuadGrid:
    """Append exterior panels out to distance ``reach`` beyond the grid.

    Used when a source function does not vanish outside supp v.
    """
    lo, hi = grid.edges[0], grid.edges[-1]
    m = max(1, int(np.ceil(reach / panel_width)))
    right = np.linspace(hi, hi + reach, m + 1)[1:]
    edges = [grid.edges, right]
    orders = [np.diff(grid.starts), np.full(m, order)]
    if grid.dim == 1:
        left = np.linspace(lo - reach, lo, m + 1)[:-1]
        edges.insert(0, left)
        orders.insert(0, np.full(m, order))
    return panel_grid(grid.dim, np.concatenate(edges), np.concatenate(orders))


def lagrange_matrix(nodes, x) -> np.ndarray:
    """L[i, j] = l_j(x_i), Lagrange basis on ``nodes`` via the barycentric formula."""
    nodes = np.asarray(nodes, dtype=float)
    x = np.asarray(x, dtype=float)
    # barycentric weights are scale invariant; work on [-1, 1] to avoid underflow
    c, half = 0.5 * (nodes.max() + nodes.min()), 0.5 * (nodes.max() - nodes.min())
    nodes = (nodes - c) / half
    x = (x - c) / half
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    bw = 1.0 / np.prod(diff, axis=1)
    d = x[:, None] - nodes[None, :]
    exact = d == 0.0
    d[exact] = 1.0
    terms = bw[None, :] / d
    L = terms / terms.sum(axis=1, keepdims=True)
    rows = np.any(exact, axis=1)
    if np.any(rows):
        L[rows] = exact[rows].astype(float)
    return L
