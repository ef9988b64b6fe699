"""Semi-implicit integration of the parabolic system.

Each step solves, for every component,

    (I - dt (L - lam_j)) u_j^+ = u_j + dt (mu_j u_j^3 + sum_{i != j} beta_ij u_j u_i^2)

with the diffusion implicit and the cubic terms explicit.  Multiplying by the
mass matrix gives the symmetric positive definite band system
``(W + dt (K + lam_j W)) u^+ = W (u + dt g)``, factored once per step size.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from . import fields
from .grid import Grid
from .nodal import bump_set, signature
from .system import SystemParams


class Fate(str, enum.Enum):
    DECAYED = "Decayed"
    BLOWUP = "BlowUp"
    STATIONARY = "Stationary"
    HORIZON = "HorizonReached"


class StiffnessError(RuntimeError):
    """Step size fell below ``dt_min`` while trying to keep the energy monotone."""


@dataclass(frozen=True)
class FlowPolicy:
    dt0: float = 1e-5
    dt_min: float = 1e-9
    dt_max: float = 1e-2
    t_max: float = 1e3
    blow_threshold: float = 1e4
    zero_threshold: float = 1e-6
    stat_tol: float = 1e-9
    sample_every: int = 20
    adaptive: bool = True
    # J < -neg_energy_tol rules out decay (J is non-increasing and J(0) = 0)
    neg_energy_tol: float = 1e-6
    # stop as Decayed once the sup-norm contraction bound applies
    decay_certificate: bool = True
    keep_states: bool = True
    energy_slack: float = 1e-12
    # cap dt * max_j sum_i |beta_ij| u_i^2 at this value (0 disables); keeps
    # the explicit cubic resolved so fates do not depend on the step history
    react_cfl: float = 0.1

    def __post_init__(self):
        if not (0 < self.dt_min <= self.dt0 <= self.dt_max):
            raise ValueError("need 0 < dt_min <= dt0 <= dt_max")
        if self.blow_threshold <= 0 or self.zero_threshold <= 0 or self.stat_tol <= 0:
            raise ValueError("thresholds must be positive")
        if self.t_max <= 0 or self.sample_every < 1:
            raise ValueError("t_max must be positive and sample_every >= 1")

    @classmethod
    def default_for(cls, grid: Grid, **overrides) -> "FlowPolicy":
        """Desk-scale defaults: ``dt0 = 1e-3 h^2`` clipped to ``[1e-9, 1e-2]``."""
        dt0 = min(max(1e-3 * grid.h ** 2, 1e-9), 1e-2)
        kw = dict(dt0=dt0, dt_min=min(1e-9, dt0), dt_max=1e-2)
        kw.update(overrides)
        return cls(**kw)

    def with_(self, **kw) -> "FlowPolicy":
        return replace(self, **kw)


@dataclass
class Sample:
    t: float
    state: np.ndarray | None
    energy: float
    residual_l2: float
    l2: float
    h1: float
    linf: float
    signature: tuple
    bump_l4: list
    dissipation: float = 0.0     # sum of dt*|dU/dt|^2 since the previous sample

    def to_record(self) -> dict:
        return {"t": self.t, "J": self.energy, "residual_l2": self.residual_l2,
                "signature": list(self.signature), "bump_l4": self.bump_l4,
                "h1": self.h1}


@dataclass
class Trajectory:
    grid: Grid
    samples: list[Sample] = field(default_factory=list)
    fate: Fate | None = None
    fate_reason: str = ""
    steps: int = 0
    rejected: int = 0

    @property
    def final(self) -> Sample:
        return self.samples[-1]

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    @property
    def energies(self) -> np.ndarray:
        return np.array([s.energy for s in self.samples])


@lru_cache(maxsize=256)
def _factor(grid: Grid, dt: float, lam: float):
    ab = np.zeros((2, grid.m))
    ab[0, 1:] = dt * grid.stiff_off
    ab[1] = grid.mass + dt * (grid.stiff_diag + lam * grid.mass)
    return cholesky_banded(ab, lower=False)


def step(grid: Grid, params: SystemParams, U: np.ndarray, dt: float) -> np.ndarray:
    """One semi-implicit step; components are updated from the old level only."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    rhs = grid.mass * (U + dt * fields.nonlinearity(params, U))
    out = np.empty_like(U)
    for j in range(U.shape[0]):
        out[j] = cho_solve_banded((_factor(grid, float(dt), float(params.lam[j])), False),
                                  rhs[j], check_finite=False)
    return out


def reaction_cap(params: SystemParams, U: np.ndarray, cfl: float) -> float:
    """Largest step keeping ``dt * max_j sum_i |beta_ij| u_i^2 <= cfl``."""
    if cfl <= 0:
        return np.inf
    rate = float((np.abs(params.coupling) @ (U * U)).max())
    return cfl / rate if rate > 0 else np.inf


def _linear_regime(params: SystemParams, linf: np.ndarray, dt: float) -> bool:
    # sup-norm contraction of the scheme: every component shrinks once the
    # focusing part of the cubic term is dominated by lambda
    sq = linf ** 2
    pos = np.clip(params.coupling, 0.0, None) @ sq
    neg = np.clip(-params.coupling, 0.0, None) @ sq
    return bool(np.all(pos < params.lam) and np.all(dt * neg <= 2.0))


def _sample(grid, params, U, t, J, res, keep, dissipation=0.0):
    nm = fields.norms(grid, U)
    sig = signature(U)
    return Sample(t=t, state=U.copy() if keep else None, energy=J, residual_l2=res,
                  l2=nm.l2_total, h1=nm.h1_total, linf=nm.linf_total,
                  signature=sig.counts, bump_l4=bump_set(grid, U).l4_norms(),
                  dissipation=dissipation)


def _fate_of(params, policy, J, h1, linf_comp, res, dt):
    if not (math.isfinite(J) and math.isfinite(h1) and np.all(np.isfinite(linf_comp))):
        return Fate.BLOWUP, "nonfinite"
    if h1 < policy.zero_threshold:
        return Fate.DECAYED, "h1_below_threshold"
    if policy.decay_certificate and _linear_regime(params, linf_comp, dt):
        return Fate.DECAYED, "linear_regime"
    if linf_comp.max() > policy.blow_threshold:
        return Fate.BLOWUP, "linf_above_threshold"
    if J < -policy.neg_energy_tol:
        return Fate.BLOWUP, "negative_energy"
    if res < policy.stat_tol:
        return Fate.STATIONARY, "residual_below_tol"
    return None, ""


def integrate(grid: Grid, params: SystemParams, U0, policy: FlowPolicy, blocks=None,
              monitor=None) -> Trajectory:
    """Integrate from ``U0`` until a fate triggers or ``t_max`` is reached.

    ``monitor`` is an optional text stream receiving one JSON line per sample.
    ``blocks`` is accepted for interface symmetry; the fate rules do not depend
    on it.
    """
    U = fields.as_state(grid, U0).copy()
    traj = Trajectory(grid=grid)
    dt = policy.dt0
    t = 0.0
    J = fields.energy(grid, params, U)
    res = fields.residual_l2(grid, params, U)

    def record(dissipation):
        s = _sample(grid, params, U, t, J, res, policy.keep_states, dissipation)
        traj.samples.append(s)
        if monitor is not None:
            monitor.write(json.dumps(s.to_record()) + "\n")

    nm = fields.norms(grid, U)
    fate, why = _fate_of(params, policy, J, nm.h1_total, nm.linf, res, dt)
    record(0.0)
    if fate is not None:
        traj.fate, traj.fate_reason = fate, why
        return traj

    accepted = since_change = 0
    diss = 0.0
    while True:
        if t >= policy.t_max * (1 - 1e-12):
            if traj.samples[-1].t != t:
                record(diss)
            traj.fate, traj.fate_reason = Fate.HORIZON, "t_max"
            return traj
        h = min(dt, policy.t_max - t, reaction_cap(params, U, policy.react_cfl))
        Un = step(grid, params, U, h)
        if not np.all(np.isfinite(Un)):
            traj.fate, traj.fate_reason = Fate.BLOWUP, "nonfinite"
            return traj
        Jn = fields.energy(grid, params, Un)
        if policy.adaptive and not Jn <= J + policy.energy_slack * (1 + abs(J)):
            traj.rejected += 1
            dt *= 0.5
            since_change = 0
            if dt < policy.dt_min:
                raise StiffnessError(
                    f"dt fell below dt_min={policy.dt_min:g} at t={t:.6g} "
                    f"(J={J:.6g}, |U|_inf={np.abs(U).max():.6g}, rejected={traj.rejected})")
            continue
        delta = (Un - U) / h
        diss += h * float(np.sum(grid.mass * delta * delta))
        U, J, t = Un, Jn, t + h
        accepted += 1
        since_change += 1
        traj.steps = accepted
        if policy.adaptive and since_change >= 10 and dt < policy.dt_max:
            dt = min(2 * dt, policy.dt_max)
            since_change = 0
        res = fields.residual_l2(grid, params, U)
        nm_h1 = fields.h1_norm(grid, U)
        linf = np.abs(U).max(axis=1)
        fate, why = _fate_of(params, policy, J, nm_h1, linf, res, dt)
        if fate is not None or accepted % policy.sample_every == 0:
            record(diss)
            diss = 0.0
        if fate is not None:
            traj.fate, traj.fate_reason = fate, why
            return traj


def dissipation_check(trajectory: Trajectory) -> float:
    """Worst relative mismatch between the energy drop and ``int |dU/dt|^2`` over sample intervals."""
    s = trajectory.samples
    worst = 0.0   # no interval (a run that starts stationary) reports 0
    for a, b in zip(s[:-1], s[1:]):
        drop = b.energy - a.energy
        diss = b.dissipation
        # intervals whose dissipation is at round-off level carry no information
        if diss <= 1e-12 * (1.0 + abs(a.energy)):
            continue
        worst = max(worst, abs(drop + diss) / max(abs(diss), 1e-300))
    return worst


def boundedness_monitor(trajectory: Trajectory) -> dict:
    l2 = [s.l2 for s in trajectory.samples]
    h1 = [s.h1 for s in trajectory.samples]
    return {"l2_max": float(max(l2)), "h1_max": float(max(h1)),
            "t_l2_max": trajectory.samples[int(np.argmax(l2))].t,
            "t_h1_max": trajectory.samples[int(np.argmax(h1))].t}
