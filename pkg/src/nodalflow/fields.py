"""Energy, residual and norms of vector grid functions.

A state is an ``(N, m)`` array: row ``j`` holds ``u_j`` at the interior
nodes of a :class:`~nodalflow.grid.Grid`; Dirichlet values are implicit
zeros and never stored.

The Dirichlet integral is ``u.K.u`` with the grid's stiffness matrix, so the
energy is built from the same operator as the residual and
``dJ(U)[V] = -<residual(U), V>`` holds exactly at the discrete level.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .grid import Grid
from .system import SystemParams


def zero_state(grid: Grid, n_comp: int) -> np.ndarray:
    return np.zeros((n_comp, grid.m))


def as_state(grid: Grid, state) -> np.ndarray:
    U = np.asarray(state, dtype=float)
    if U.ndim == 1:
        U = U[None, :]
    if U.ndim != 2 or U.shape[1] != grid.m:
        raise ValueError(f"state must have shape (N, {grid.m}), got {U.shape}")
    return U


def quadratic_part(grid: Grid, params: SystemParams, U: np.ndarray) -> float:
    """``1/2 sum_j (|grad u_j|^2 + lam_j |u_j|^2)``."""
    grad = np.sum(U * grid.stiffness(U))
    mass = np.sum(params.lam * np.sum(grid.mass * U * U, axis=1))
    return 0.5 * float(grad + mass)


def quartic_part(grid: Grid, params: SystemParams, U: np.ndarray) -> float:
    """``1/4 sum_{i,j} beta_ij u_i^2 u_j^2`` integrated, diagonal included."""
    sq = U * U
    return 0.25 * float(np.sum(grid.mass * sq * (params.coupling @ sq)))


def energy(grid: Grid, params: SystemParams, U: np.ndarray) -> float:
    return quadratic_part(grid, params, U) - quartic_part(grid, params, U)


def nonlinearity(params: SystemParams, U: np.ndarray) -> np.ndarray:
    """``mu_j u_j^3 + sum_{i != j} beta_ij u_j u_i^2`` for every component."""
    return U * (params.coupling @ (U * U))


def residual(grid: Grid, params: SystemParams, U: np.ndarray) -> np.ndarray:
    """Right-hand side of the flow; zero exactly at equilibria."""
    return grid.laplacian(U) - params.lam[:, None] * U + nonlinearity(params, U)


def residual_l2(grid: Grid, params: SystemParams, U: np.ndarray) -> float:
    R = residual(grid, params, U)
    return float(np.sqrt(np.sum(grid.mass * R * R)))


def l2_inner(grid: Grid, U: np.ndarray, V: np.ndarray) -> float:
    return float(np.sum(grid.mass * U * V))


@dataclass
class Norms:
    l2: np.ndarray
    l4: np.ndarray
    h1: np.ndarray
    linf: np.ndarray

    @property
    def l2_total(self) -> float:
        return float(np.sqrt(np.sum(self.l2 ** 2)))

    @property
    def l4_total(self) -> float:
        return float(np.sum(self.l4 ** 4) ** 0.25)

    @property
    def h1_total(self) -> float:
        return float(np.sqrt(np.sum(self.h1 ** 2)))

    @property
    def linf_total(self) -> float:
        return float(self.linf.max()) if self.linf.size else 0.0


def norms(grid: Grid, U: np.ndarray) -> Norms:
    sq = U * U
    l2sq = np.sum(grid.mass * sq, axis=1)
    l4 = np.sum(grid.mass * sq * sq, axis=1) ** 0.25
    grad = np.sum(U * grid.stiffness(U), axis=1)
    return Norms(l2=np.sqrt(l2sq), l4=l4, h1=np.sqrt(grad + l2sq),
                 linf=np.abs(U).max(axis=1) if U.size else np.zeros(0))


def h1_norm(grid: Grid, U: np.ndarray) -> float:
    return float(np.sqrt(np.sum(U * grid.stiffness(U)) + np.sum(grid.mass * U * U)))


def h1_distance(grid: Grid, U: np.ndarray, V: np.ndarray) -> float:
    return h1_norm(grid, U - V)


# -- profile CSV ---------------------------------------------------------------

def profile_rows(grid: Grid, U: np.ndarray):
    """Rows ``(r, u_1, ..., u_N)`` including the Dirichlet boundary rows."""
    zeros = [0.0] * U.shape[0]
    if not grid.domain.is_ball:
        yield [grid.domain.r_inner] + zeros
    for i, r in enumerate(grid.nodes):
        yield [float(r)] + [float(x) for x in U[:, i]]
    yield [grid.domain.r_outer] + zeros


def write_profile(path, grid: Grid, U: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r"] + [f"u{j + 1}" for j in range(U.shape[0])])
        for row in profile_rows(grid, U):
            w.writerow([f"{x:.17g}" for x in row])


def read_profile(path, grid: Grid) -> np.ndarray:
    """Read a profile CSV written for ``grid``; the radii must match the mesh."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0].strip() != "r":
        raise ValueError(f"{path}: missing 'r,u1,...' header")
    data = np.array([[float(x) for x in row] for row in rows[1:] if row], dtype=float)
    r = data[:, 0]
    interior = (r > grid.domain.r_inner) & (r < grid.domain.r_outer)
    if grid.domain.is_ball:
        interior = r < grid.domain.r_outer
    rr, vals = r[interior], data[interior, 1:]
    if rr.size != grid.m or np.abs(rr - grid.nodes).max() > 1e-12 * max(1.0, grid.domain.r_outer):
        raise ValueError(f"{path}: profile radii do not match the grid ({rr.size} vs {grid.m} nodes)")
    return np.ascontiguousarray(vals.T)
