"""Nodal numbers, bump decompositions and the degenerate sets of the flow.

The sign-change count of a grid function drops every node whose magnitude is
at most a noise gate ``eps_node`` and counts sign alternations among the rest.
Bumps are the sign-definite slices between consecutive crossings, with each
crossing placed by linear interpolation between the two above-threshold nodes
that straddle it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid
from .system import BlockStructure

EPS_NODE_REL = 1e-8
EPS_NODE_FLOOR = 1e-12


def default_eps_node(u: np.ndarray) -> float:
    """Noise gate relative to the sup norm of one component."""
    top = float(np.abs(u).max()) if np.size(u) else 0.0
    return max(EPS_NODE_REL * top, EPS_NODE_FLOOR)


def _gate(u, eps_node):
    return default_eps_node(u) if eps_node is None else float(eps_node)


def nodal_number(u: np.ndarray, eps_node: float | None = None) -> int:
    """Number of sign alternations among the nodes with ``|u| > eps_node``."""
    eps_node = _gate(u, eps_node)
    if eps_node <= 0:
        raise ValueError("eps_node must be positive")
    s = np.sign(u[np.abs(u) > eps_node])
    return int(np.count_nonzero(s[1:] != s[:-1]))


@dataclass
class Bump:
    q: int                 # 1-based
    a: float               # support [a, b] in r
    b: float
    sign: int
    l4_norm: float
    nodes: slice           # node range of the slice (before sign clipping)


@dataclass
class BumpSet:
    """Bumps of every component: ``bumps[j]`` lists the bumps of ``u_j``."""

    bumps: list[list[Bump]] = field(default_factory=list)

    def l4_norms(self) -> list[list[float]]:
        return [[b.l4_norm for b in comp] for comp in self.bumps]

    def min_norm(self) -> float:
        vals = [b.l4_norm for comp in self.bumps for b in comp]
        return min(vals) if vals else 0.0

    def to_record(self) -> list[list[dict]]:
        return [[{"q": b.q, "a": b.a, "b": b.b, "sign": b.sign, "l4": b.l4_norm}
                 for b in comp] for comp in self.bumps]


@dataclass
class NodalSignature:
    counts: tuple[int, ...]
    threshold: tuple[float, ...]

    def to_record(self) -> dict:
        return {"counts": list(self.counts), "eps_node": list(self.threshold)}


def crossings(grid: Grid, u: np.ndarray, eps_node: float | None = None):
    """Interpolated crossing radii and the node index where each new bump starts."""
    eps_node = _gate(u, eps_node)
    idx = np.flatnonzero(np.abs(u) > eps_node)
    if idx.size < 2:
        return [], []
    s = np.sign(u[idx])
    flips = np.flatnonzero(s[1:] != s[:-1])
    radii, starts = [], []
    r = grid.nodes
    for k in flips:
        i1, i2 = idx[k], idx[k + 1]
        u1, u2 = u[i1], u[i2]
        rc = r[i1] - u1 * (r[i2] - r[i1]) / (u2 - u1)
        radii.append(float(rc))
        # nodes strictly beyond the crossing start the next bump
        starts.append(int(np.searchsorted(r, rc, side="right")))
    return radii, starts


def bump_decomposition(grid: Grid, u: np.ndarray, eps_node: float | None = None) -> list[Bump]:
    """Bumps of one component, innermost first."""
    eps_node = _gate(u, eps_node)
    above = np.flatnonzero(np.abs(u) > eps_node)
    if above.size == 0:
        return []
    radii, starts = crossings(grid, u, eps_node)
    edges_r = [grid.domain.r_inner] + radii + [grid.domain.r_outer]
    edges_i = [0] + starts + [grid.m]
    first = int(np.sign(u[above[0]]))
    out = []
    w4 = grid.mass * u ** 4
    for q in range(len(edges_r) - 1):
        sign = first * (-1) ** q
        sl = slice(edges_i[q], edges_i[q + 1])
        keep = np.sign(u[sl]) == sign
        l4 = float(np.sum(w4[sl][keep])) ** 0.25
        out.append(Bump(q + 1, edges_r[q], edges_r[q + 1], sign, l4, sl))
    return out


def bump_values(u: np.ndarray, bump: Bump) -> np.ndarray:
    """The bump as a full-length grid function (clipped to its sign)."""
    out = np.zeros_like(u)
    seg = u[bump.nodes]
    out[bump.nodes] = np.where(np.sign(seg) == bump.sign, seg, 0.0)
    return out


def bump_set(grid: Grid, U: np.ndarray, eps_node: float | None = None) -> BumpSet:
    return BumpSet([bump_decomposition(grid, u, eps_node) for u in U])


def signature(U: np.ndarray, eps_node: float | None = None) -> NodalSignature:
    gates = [_gate(u, eps_node) for u in U]
    return NodalSignature(tuple(nodal_number(u, g) for u, g in zip(U, gates)), tuple(gates))


def in_prescribed_D(U: np.ndarray, blocks: BlockStructure, eps_node: float | None = None) -> bool:
    """True iff every component has exactly its block's prescribed nodal number."""
    target = blocks.component_prescription()
    if len(U) != target.size:
        raise ValueError("state and block structure disagree on N")
    if not np.all(np.abs(U).max(axis=1) > 0):
        return False
    counts = signature(U, eps_node).counts
    return tuple(int(c) for c in target) == counts


@dataclass(frozen=True)
class Degeneracy:
    kind: str              # "ok", "small_bump", "node_drop" or "excess_nodes"
    component: int | None = None   # 0-based
    bump: int | None = None        # 1-based

    @property
    def ok(self) -> bool:
        return self.kind == "ok"


def degeneracy_check(grid: Grid, U: np.ndarray, blocks: BlockStructure, eps: float,
                     eps_node: float | None = None) -> Degeneracy:
    """First way in which ``U`` sits in the degenerate set at level ``eps``.

    A nodal count below the prescription is membership in the node-drop set;
    a bump with L4 norm below ``eps`` is membership in the small-bump set.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    target = blocks.component_prescription()
    for j, u in enumerate(U):
        if not np.any(u):
            if target[j] > 0:
                return Degeneracy("node_drop", j)
            return Degeneracy("small_bump", j, 1)
        n = nodal_number(u, _gate(u, eps_node))
        if n < target[j]:
            return Degeneracy("node_drop", j)
        if n > target[j]:
            return Degeneracy("excess_nodes", j)
    for j, u in enumerate(U):
        for b in bump_decomposition(grid, u, eps_node):
            if b.l4_norm < eps:
                return Degeneracy("small_bump", j, b.q)
    return Degeneracy("ok")


def arriving_time(trajectory, blocks: BlockStructure, eps: float,
                  eps_node: float | None = None, persist: int = 2):
    """First sample time at which the trajectory enters the degenerate set at ``eps/2``.

    A node drop has to persist for ``persist`` consecutive samples before it
    counts; the reported time is the first sample of that run.  Returns None
    if the trajectory never degenerates.
    """
    grid = trajectory.grid
    pending = None
    streak = 0
    for s in trajectory.samples:
        d = degeneracy_check(grid, s.state, blocks, eps / 2, eps_node)
        if d.kind == "small_bump":
            return pending if pending is not None else s.t
        if d.kind == "node_drop":
            if pending is None:
                pending = s.t
            streak += 1
            if streak >= persist:
                return pending
        else:
            pending, streak = None, 0
    return None


def calibrate_rho(grid: Grid, lam: float, mu: float, max_k: int = 40):
    """Bump size below which the L4 norm of an isolated bump cannot grow.

    For ``W = v^2`` the growth of ``int v^4`` is controlled by
    ``4 mu int W^3 <= C |W|_2 (3 int |grad W|^2 + 4 lam int W^2)``.  ``C`` is
    estimated by a brute-force scan over squared quartic bubbles of every
    width and position on the grid, and ``rho`` is the largest power of two
    with ``1 - C rho^2 > 0``.  Returns ``(rho, C)``.
    """
    r = grid.nodes
    a0, b0 = grid.domain.r_inner, grid.domain.r_outer
    C = 0.0
    widths = np.unique(np.geomspace(4 * grid.h, b0 - a0, 24))
    for width in widths:
        for a in np.linspace(a0, b0 - width, 12):
            b = a + width
            v = np.where((r > a) & (r < b), ((r - a) * (b - r)) ** 2, 0.0)
            if not np.any(v):
                continue
            W = v * v
            cubic = 4.0 * mu * np.sum(grid.mass * W ** 3)
            l2 = np.sqrt(np.sum(grid.mass * W * W))
            coercive = 3.0 * np.sum(W * grid.stiffness(W)) + 4.0 * lam * l2 ** 2
            C = max(C, cubic / (l2 * coercive))
    for k in range(max_k + 1):
        rho = 2.0 ** (-k)
        if 1.0 - C * rho ** 2 > 0:
            return rho, C
    raise RuntimeError("could not calibrate rho")
