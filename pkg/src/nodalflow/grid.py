"""Radial finite-volume grid for balls and annuli in dimension 1, 2 or 3.

Nodes sit at ``r_i = r_inner + i*h`` for ``i = 1..m`` with
``h = (r_outer - r_inner)/(m + 1)``.  Dirichlet values at ``r_outer`` (and at
``r_inner`` for an annulus) are implicit zeros.  At the centre of a ball the
radial flux vanishes and the region ``[0, r_{3/2}]`` is lumped into the first
node, which keeps the scheme second order without touching ``r = 0``.

The Laplacian is stored in conservative form ``L = -W^{-1} K`` where ``K`` is
the symmetric stiffness matrix and ``W`` the diagonal control-volume mass, so
``<Lu, v>_W = <u, Lv>_W`` holds to round-off.  The angular constant of the
sphere is dropped from every integral.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MIN_POINTS = 16


@dataclass(frozen=True)
class RadialDomain:
    dim: int
    r_inner: float
    r_outer: float
    m: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if not (self.r_inner >= 0.0):
            raise ValueError(f"r_inner must be >= 0, got {self.r_inner}")
        if not (self.r_outer > self.r_inner):
            raise ValueError("r_outer must exceed r_inner")
        if int(self.m) != self.m or self.m < MIN_POINTS:
            raise ValueError(f"need at least {MIN_POINTS} interior points, got {self.m}")

    @property
    def is_ball(self) -> bool:
        return self.r_inner == 0.0


@dataclass(frozen=True, eq=False)
class Grid:
    """Mesh, weights and the tridiagonal radial Laplacian for one domain.

    ``mass`` holds the control-volume weights used by every inner product on
    grid functions with zero Dirichlet data.  ``quad_weights`` is a separate
    rule for integrating arbitrary nodal samples whose boundary values are not
    known (end values extrapolated linearly), see :func:`integrate`.
    """

    domain: RadialDomain
    h: float
    nodes: np.ndarray
    mass: np.ndarray
    quad_weights: np.ndarray
    # stiffness K: diagonal and the upper off-diagonal (K[i, i+1])
    stiff_diag: np.ndarray
    stiff_off: np.ndarray
    # L = -W^{-1} K as three diagonals
    lap_lower: np.ndarray = field(repr=False)
    lap_diag: np.ndarray = field(repr=False)
    lap_upper: np.ndarray = field(repr=False)

    @property
    def m(self) -> int:
        return self.nodes.size

    @property
    def dim(self) -> int:
        return self.domain.dim

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        """Apply the discrete radial Laplacian along the last axis."""
        out = self.lap_diag * u
        out[..., :-1] += self.lap_upper * u[..., 1:]
        out[..., 1:] += self.lap_lower * u[..., :-1]
        return out

    def stiffness(self, u: np.ndarray) -> np.ndarray:
        """Apply K (so that ``u.K.u`` is the discrete Dirichlet integral)."""
        out = self.stiff_diag * u
        out[..., :-1] += self.stiff_off * u[..., 1:]
        out[..., 1:] += self.stiff_off * u[..., :-1]
        return out

    def dense_laplacian(self) -> np.ndarray:
        m = self.m
        L = np.diag(self.lap_diag)
        L[np.arange(m - 1), np.arange(1, m)] = self.lap_upper
        L[np.arange(1, m), np.arange(m - 1)] = self.lap_lower
        return L

    def boundary_radii(self) -> list[float]:
        """Radii carrying an implicit Dirichlet zero."""
        if self.domain.is_ball:
            return [self.domain.r_outer]
        return [self.domain.r_inner, self.domain.r_outer]

    def same_as(self, other: "Grid") -> bool:
        return self is other or (self.domain == other.domain)


def build_grid(domain: RadialDomain) -> Grid:
    n = domain.dim
    a, b, m = float(domain.r_inner), float(domain.r_outer), int(domain.m)
    h = (b - a) / (m + 1)
    i = np.arange(1, m + 1, dtype=float)
    nodes = a + i * h
    faces = a + (np.arange(0, m + 1) + 0.5) * h  # r_{i+1/2}, i = 0..m

    flux = faces ** (n - 1) / h  # coefficient on each face
    lo_face = faces[:-1] ** n
    hi_face = faces[1:] ** n
    if domain.is_ball:
        # centre region lumped into node 1, no flux through r = 0
        lo_face = lo_face.copy()
        lo_face[0] = 0.0
    mass = (hi_face - lo_face) / n

    stiff_diag = flux[:-1] + flux[1:]
    if domain.is_ball:
        stiff_diag[0] = flux[1]
    stiff_off = -flux[1:-1]

    lap_diag = -stiff_diag / mass
    lap_upper = -stiff_off / mass[:-1]
    lap_lower = -stiff_off / mass[1:]

    quad = _endpoint_weights(m, h) * nodes ** (n - 1)
    exact = (b ** n - a ** n) / n
    quad = quad * (exact / math.fsum(quad))

    return Grid(domain=domain, h=h, nodes=nodes, mass=mass, quad_weights=quad,
                stiff_diag=stiff_diag, stiff_off=stiff_off,
                lap_lower=lap_lower, lap_diag=lap_diag, lap_upper=lap_upper)


def _endpoint_weights(m: int, h: float) -> np.ndarray:
    # trapezoid on [a, b] with g(a), g(b) extrapolated linearly from the
    # two nearest nodes: exact for linear integrands
    c = np.full(m, h)
    c[0] += 1.0 * h
    c[1] -= 0.5 * h
    c[-1] += 1.0 * h
    c[-2] -= 0.5 * h
    return c


def integrate(grid: Grid, values) -> float:
    """Integrate nodal samples ``f(r_i)`` against ``r^{n-1} dr``.

    Summation is exactly rounded, so the result does not depend on the order
    of the nodes.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != grid.nodes.shape:
        raise ValueError(f"expected {grid.m} values, got shape {values.shape}")
    return math.fsum(grid.quad_weights * values)


def inner(grid: Grid, u: np.ndarray, v: np.ndarray) -> float:
    """Mass-weighted L2 inner product of grid functions with zero boundary data."""
    return float(np.sum(grid.mass * u * v))
