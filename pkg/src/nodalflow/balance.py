"""Bump-wise balancing: put every bump on its own Nehari identity.

A nodal or multi-component equilibrium has one unstable direction per bump
(roughly, growing or shrinking that bump alone).  Two-sided edge tracking only
controls the direction normal to the basin boundary, so the remaining ones are
removed by rescaling the bumps individually: the factors ``t`` solve
``dJ(U_t)[V_k] = 0`` for every bump ``V_k`` of ``U_t = U + sum_l (t_l - 1) V_l``.
At an equilibrium ``t = 1`` solves this exactly, so balancing never moves a
converged state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import root

from . import fields
from .grid import Grid
from .nodal import bump_decomposition
from .system import SystemParams

SOLVED_TOL = 1e-10


@dataclass
class Unit:
    component: int
    mask: np.ndarray       # nodes of the bump, already clipped to its sign


def bump_units(grid: Grid, U: np.ndarray, eps_node=None) -> list[Unit]:
    units = []
    for j, u in enumerate(U):
        for b in bump_decomposition(grid, u, eps_node):
            mask = np.zeros(u.size, dtype=bool)
            mask[b.nodes] = np.sign(u[b.nodes]) == b.sign
            if mask.any():
                units.append(Unit(j, mask))
    return units


def unit_states(U: np.ndarray, units: list[Unit]) -> np.ndarray:
    V = np.zeros((len(units),) + U.shape)
    for k, un in enumerate(units):
        V[k, un.component, un.mask] = U[un.component, un.mask]
    return V


def scale_units(U: np.ndarray, units: list[Unit], factors) -> np.ndarray:
    out = U.copy()
    for un, t in zip(units, factors):
        out[un.component, un.mask] *= t
    return out


def balance_factors(grid: Grid, params: SystemParams, U: np.ndarray, eps_node=None):
    """``(units, t)`` with positive factors balancing every bump, or None.

    The unknowns are ``log t``, which excludes the trivial roots ``t_k = 0``
    and sign flips.  Convergence is judged on the equations themselves.
    """
    units = bump_units(grid, U, eps_node)
    if not units:
        return None
    V = unit_states(U, units)
    lin = np.array([float(np.sum(v * grid.stiffness(v))) + params.lam[un.component]
                    * fields.l2_inner(grid, v, v) for v, un in zip(V, units)])
    quart = np.array([params.mu[un.component] * float(np.sum(grid.mass * v[un.component] ** 4))
                      for v, un in zip(V, units)])
    if np.any(lin <= 0) or np.any(quart <= 0):
        return None

    def G(y):
        t = np.exp(y)
        R = fields.residual(grid, params, U + np.tensordot(t - 1.0, V, axes=1))
        return -np.einsum("kjm,jm->k", V, grid.mass * R) / (t * lin)

    def solved(y):
        return bool(np.all(np.isfinite(y)) and np.abs(y).max() < 50
                    and np.abs(G(y)).max() <= SOLVED_TOL)

    with np.errstate(all="ignore"):
        for y0 in (np.zeros(len(units)), 0.5 * np.log(lin / quart)):
            y = root(G, y0, method="hybr", options={"xtol": 1e-13}).x
            if solved(y):
                return units, np.exp(y)
    return None


def balance_bumps(grid: Grid, params: SystemParams, U: np.ndarray, eps_node=None):
    """``U`` with every bump rescaled onto its own Nehari identity, or None."""
    res = balance_factors(grid, params, U, eps_node)
    if res is None:
        return None
    units, t = res
    return scale_units(U, units, t)


def nehari_scale(grid: Grid, params: SystemParams, U: np.ndarray):
    """``s U`` on the Nehari identity of the whole state, or None."""
    quad = 2.0 * fields.quadratic_part(grid, params, U)
    quart = 4.0 * fields.quartic_part(grid, params, U)
    if quart <= 0:
        return None
    return U * np.sqrt(quad / quart)


@dataclass
class BalancedRun:
    terminal: str             # "stationary", "degenerate" or "horizon"
    state: np.ndarray
    t: float
    steps: int
    step_energy_max_rise: float   # over flow steps, relative to 1 + |J|
    energy_min: float
    balance_jumps: list           # J(after balancing) - J(before), per step
    failures: int                 # steps where no balanced point was found
    points: list                  # (t, J, residual_l2, signature, bump_l4)
    degeneracy: object = None
    arriving_time: float | None = None


def balanced_flow(grid: Grid, params: SystemParams, U0: np.ndarray, policy, blocks,
                  eps: float, stop_residual: float, t_max: float | None = None,
                  check_every: int = 20, degenerate_persist: int = 3,
                  max_failures: int = 50, monitor=None) -> BalancedRun:
    """Flow steps, each followed by a full bump balancing.

    This is the descent of the energy restricted to states whose bumps are
    all balanced; near a nodal or multi-component equilibrium it removes the
    per-bump unstable directions that edge tracking cannot hold.
    """
    from .flow import reaction_cap, step
    from .nodal import bump_set, degeneracy_check, signature

    t_end = policy.t_max if t_max is None else t_max
    U = np.array(U0, dtype=float)
    J = fields.energy(grid, params, U)
    dt = policy.dt0
    t = 0.0
    steps = since = fails = consecutive = streak = 0
    rise, emin = -np.inf, J
    jumps, points = [], []
    first_bad = None

    def run(terminal, deg=None):
        return BalancedRun(terminal, U, t, steps, float(rise), float(emin), jumps, fails,
                           points, deg, first_bad)

    while True:
        if t >= t_end:
            return run("horizon")
        h = min(dt, t_end - t, reaction_cap(params, U, policy.react_cfl))
        V = step(grid, params, U, h)
        JV = fields.energy(grid, params, V)
        if not np.isfinite(JV) or JV > J + policy.energy_slack * (1 + abs(J)):
            dt *= 0.5
            since = 0
            if dt < policy.dt_min:
                from .flow import StiffnessError
                raise StiffnessError(f"balanced flow: dt below dt_min at t={t:.6g}")
            continue
        rise = max(rise, (JV - J) / (1 + abs(J)))
        t += h
        steps += 1
        since += 1
        if since >= 10 and dt < policy.dt_max:
            dt = min(2 * dt, policy.dt_max)
            since = 0
        B = balance_bumps(grid, params, V)
        if B is None:
            fails += 1
            consecutive += 1
            U, J = V, JV
        else:
            consecutive = 0
            U = B
            J = fields.energy(grid, params, U)
            jumps.append(J - JV)
        emin = min(emin, J)
        if consecutive >= max_failures:
            d = degeneracy_check(grid, U, blocks, eps)
            return run("degenerate", d if not d.ok else None)
        if steps % check_every == 0:
            res = fields.residual_l2(grid, params, U)
            sig = signature(U).counts
            l4 = bump_set(grid, U).l4_norms()
            points.append((t, J, res, sig, l4))
            if monitor is not None:
                import json
                monitor.write(json.dumps({"t": t, "J": J, "residual_l2": res,
                                          "signature": list(sig), "bump_l4": l4}) + "\n")
            d = degeneracy_check(grid, U, blocks, eps)
            if not d.ok and d.kind != "excess_nodes":
                streak += 1
                first_bad = t if first_bad is None else first_bad
                if streak >= degenerate_persist:
                    return run("degenerate", d)
            else:
                streak, first_bad = 0, None
                if d.ok and res < stop_residual:
                    return run("stationary")
