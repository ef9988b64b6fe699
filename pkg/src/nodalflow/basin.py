"""Fate classification, ray bisection onto the basin boundary, and edge tracking.

The basin of the zero state is open and flow invariant, so its boundary is
invariant too; in floating point that invariance is shadowed by two
trajectories ``lo`` (decays) and ``hi`` (does not), advanced with identical
steps and re-bisected whenever they drift apart.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from . import fields
from .flow import Fate, FlowPolicy, StiffnessError, integrate, reaction_cap, step
from .grid import Grid
from .nodal import degeneracy_check, signature, bump_set
from .system import BlockStructure, SystemParams, sigma, validate


class Verdict(str, enum.Enum):
    DECAYED = "Decayed"
    NOT_DECAYED = "NotDecayed"
    AMBIGUOUS = "Ambiguous"


class NoBracketError(RuntimeError):
    """The ray never changes fate within the probe budget."""


class ProbeBudgetError(RuntimeError):
    """Re-bisection used up its probe budget."""


@dataclass
class ProbeResult:
    verdict: Verdict
    fate: Fate
    reason: str
    t_end: float


def classify_fate(grid: Grid, params: SystemParams, state, policy: FlowPolicy) -> ProbeResult:
    """Integrate ``state`` standalone and map the flow fate onto the basin of zero."""
    pol = policy if not policy.keep_states else policy.with_(keep_states=False)
    try:
        traj = integrate(grid, params, state, pol)
    except StiffnessError:
        # a step-size collapse only happens on the way up
        return ProbeResult(Verdict.NOT_DECAYED, Fate.BLOWUP, "stiffness", float("nan"))
    fate = traj.fate
    if fate is Fate.DECAYED:
        v = Verdict.DECAYED
    elif fate is Fate.HORIZON:
        v = Verdict.AMBIGUOUS
    else:
        # BlowUp, or Stationary at h1 >= zero_threshold (a decayed state exits first)
        v = Verdict.NOT_DECAYED
    return ProbeResult(v, fate, traj.fate_reason, traj.final.t)


def _decays(res: ProbeResult) -> bool:
    # for bracketing, an undecided probe counts as not decayed
    return res.verdict is Verdict.DECAYED


@dataclass
class RayResult:
    s_star: float
    s_lo: float
    s_hi: float
    probes: int
    log: list = field(default_factory=list)


def ray_bisect(grid: Grid, params: SystemParams, direction, policy: FlowPolicy,
               tol_s: float = 1e-10, max_probes: int = 60, log=None) -> RayResult:
    """Locate the crossing of the ray ``{s * direction}`` with the basin boundary.

    The bracket is searched by doubling or halving from ``s = 1`` (at most
    ``max_probes`` probes), then bisected until ``s_hi - s_lo <= tol_s * s_lo``.
    ``log`` is an optional text stream receiving one JSON line per probe.
    """
    d = fields.as_state(grid, direction)
    dmax = float(np.abs(d).max())
    if not np.isfinite(dmax) or dmax == 0.0:
        raise NoBracketError("direction is zero")
    entries = []

    def probe(s):
        res = classify_fate(grid, params, s * d, policy)
        entry = {"s": s, "verdict": res.verdict.value, "fate": res.fate.value,
                 "reason": res.reason, "t_end": res.t_end}
        entries.append(entry)
        if log is not None:
            log.write(json.dumps(entry) + "\n")
        return _decays(res)

    s = 1.0
    n = 0
    first = probe(s)
    n += 1
    if first:
        s_lo, s_hi = s, None
        while s_hi is None:
            if n >= max_probes or s * dmax > policy.blow_threshold:
                raise NoBracketError(f"no fate change along the ray up to s={s:.6g}")
            s *= 2.0
            n += 1
            if probe(s):
                s_lo = s
            else:
                s_hi = s
    else:
        s_lo, s_hi = None, s
        while s_lo is None:
            if n >= max_probes:
                raise NoBracketError(f"no decaying point along the ray down to s={s:.6g}")
            s *= 0.5
            n += 1
            if probe(s):
                s_lo = s
            else:
                s_hi = s
    while s_hi - s_lo > tol_s * s_lo:
        mid = 0.5 * (s_lo + s_hi)
        if mid in (s_lo, s_hi):
            break
        n += 1
        if probe(mid):
            s_lo = mid
        else:
            s_hi = mid
    return RayResult(0.5 * (s_lo + s_hi), s_lo, s_hi, n, entries)


@dataclass
class EdgeBracket:
    lo: np.ndarray
    hi: np.ndarray
    t: float = 0.0

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def width(self, grid: Grid) -> float:
        return fields.h1_distance(grid, self.lo, self.hi)

    def rel_width(self, grid: Grid) -> float:
        scale = fields.h1_norm(grid, self.mid)
        return self.width(grid) / scale if scale > 0 else float("inf")


def bracket_from_ray(direction, ray: RayResult) -> EdgeBracket:
    d = np.asarray(direction, dtype=float)
    return EdgeBracket(lo=ray.s_lo * d, hi=ray.s_hi * d, t=0.0)


@dataclass
class EdgePoint:
    t: float
    energy: float
    residual_l2: float
    h1: float
    l2: float
    signature: tuple
    bump_l4: list
    state: np.ndarray | None = None


@dataclass
class EdgeResult:
    terminal: str                 # "stationary", "degenerate" or "horizon"
    state: np.ndarray             # final midpoint
    bracket: EdgeBracket
    points: list[EdgePoint]
    # per accepted flow step: (J before, J after) of the midpoint
    step_energy_max_rise: float
    energy_min: float
    rebisections: int
    probes: int
    jumps: list = field(default_factory=list)   # midpoint energy change at each re-bisection
    degeneracy: object = None
    arriving_time: float | None = None
    spot_check_failures: int = 0
    h1_max: float = 0.0
    steps: int = 0


@dataclass(frozen=True)
class EdgeSettings:
    bracket_tol: float = 1e-9     # relative H1 width after re-bisection
    sep_threshold: float = 1e-6   # relative H1 width that triggers re-bisection
    max_probes: int = 80
    spot_check_every: int = 10
    degenerate_persist: int = 3
    check_every: int = 20         # steps between degeneracy / residual checks
    keep_every: int = 0           # keep midpoint states every k-th check (0: never)
    max_steps: int = 2_000_000


def probe_policy(policy: FlowPolicy) -> FlowPolicy:
    """Shortened horizon for bracketing probes; they start at ``dt_max``
    (the reaction cap still limits the first steps)."""
    return policy.with_(t_max=policy.t_max / 10.0, keep_states=False, dt0=policy.dt_max)


def _segment_rebisect(grid, params, lo, hi, probe_pol, tol, budget):
    """Bisect on ``(1 - tau) lo + tau hi`` until the relative width is at most ``tol``.

    Returns None when the probes show that the segment no longer straddles
    the boundary (every probe on one side and the far end agreeing).
    """
    a, b = 0.0, 1.0
    used = 0
    diff = hi - lo
    scale = fields.h1_norm(grid, 0.5 * (lo + hi))
    full = fields.h1_norm(grid, diff)
    while (b - a) * full > tol * scale:
        if used >= budget:
            raise ProbeBudgetError(f"re-bisection exhausted {budget} probes")
        tau = 0.5 * (a + b)
        used += 1
        if _decays(classify_fate(grid, params, lo + tau * diff, probe_pol)):
            a = tau
        else:
            b = tau
    if a == 0.0 and not _decays(classify_fate(grid, params, lo, probe_pol)):
        return None, None, used + 1
    if b == 1.0 and _decays(classify_fate(grid, params, hi, probe_pol)):
        return None, None, used + 1
    return lo + a * diff, lo + b * diff, used


def ray_rebracket(grid, params, U, probe_pol, tol, budget, delta0=1e-3):
    """Tight bracket around the basin boundary on the ray through ``U``, near ``s = 1``."""
    used = 0

    def dec(s):
        nonlocal used
        if used >= budget:
            raise ProbeBudgetError(f"ray re-bracketing exhausted {budget} probes")
        used += 1
        return _decays(classify_fate(grid, params, s * U, probe_pol))

    delta = delta0
    if dec(1.0):
        lo = 1.0
        while True:
            hi = 1.0 + delta
            if not dec(hi):
                break
            lo = hi
            delta *= 4.0
    else:
        hi = 1.0
        while True:
            lo = 1.0 / (1.0 + delta)
            if dec(lo):
                break
            hi = lo
            delta *= 4.0
    while hi - lo > tol * lo:
        mid = 0.5 * (lo + hi)
        if dec(mid):
            lo = mid
        else:
            hi = mid
    return lo * U, hi * U, used


def edge_track(grid: Grid, params: SystemParams, bracket: EdgeBracket, policy: FlowPolicy,
               blocks: BlockStructure, eps: float, settings: EdgeSettings = EdgeSettings(),
               stop_residual: float | None = None,
               t_max: float | None = None, log=None) -> EdgeResult:
    """Shadow the flow on the basin boundary starting from ``bracket``.

    Terminates ``stationary`` once the midpoint residual drops below
    ``stop_residual`` (default ``policy.stat_tol``), ``degenerate`` once the
    midpoint sits in the degenerate set at level ``eps`` for
    ``settings.degenerate_persist`` consecutive checks, and ``horizon`` at
    ``t_max``.  Midpoint energy changes caused by re-bisection are reported
    in ``jumps``; ``step_energy_max_rise`` covers flow steps only.
    """
    stop = policy.stat_tol if stop_residual is None else stop_residual
    t_end = policy.t_max if t_max is None else t_max
    probe_pol = probe_policy(policy)
    lo, hi, t = bracket.lo.copy(), bracket.hi.copy(), bracket.t
    # same step schedule as the probes, so the shadows evolve under the
    # dynamics whose fates define the bracket
    dt = probe_pol.dt0
    energy = lambda V: fields.energy(grid, params, V)  # noqa: E731
    J_lo, J_hi, J_mid = energy(lo), energy(hi), energy(0.5 * (lo + hi))
    points: list[EdgePoint] = []
    rise = -np.inf
    emin = J_mid
    h1_max = fields.h1_norm(grid, 0.5 * (lo + hi))
    rebis = probes = spot_fail = 0
    jumps = []
    streak = 0
    first_degenerate = None
    checks = since_change = steps = 0

    def note(state, keep):
        nm = fields.norms(grid, state)
        pt = EdgePoint(t=t, energy=energy(state),
                       residual_l2=fields.residual_l2(grid, params, state),
                       h1=nm.h1_total, l2=nm.l2_total, signature=signature(state).counts,
                       bump_l4=bump_set(grid, state).l4_norms(),
                       state=state.copy() if keep else None)
        points.append(pt)
        if log is not None:
            log.write(json.dumps({"t": pt.t, "J": pt.energy, "residual_l2": pt.residual_l2,
                                  "signature": list(pt.signature), "bump_l4": pt.bump_l4,
                                  "h1": pt.h1, "rebisections": rebis}) + "\n")
        return pt

    def finish(terminal, degeneracy=None):
        return EdgeResult(terminal=terminal, state=0.5 * (lo + hi),
                          bracket=EdgeBracket(lo, hi, t), points=points,
                          step_energy_max_rise=float(rise), energy_min=float(emin),
                          rebisections=rebis, probes=probes, jumps=jumps,
                          degeneracy=degeneracy, arriving_time=first_degenerate,
                          spot_check_failures=spot_fail, h1_max=float(h1_max), steps=steps)

    note(0.5 * (lo + hi), settings.keep_every > 0)
    while True:
        if t >= t_end or steps >= settings.max_steps:
            return finish("horizon")
        h = min(dt, t_end - t, reaction_cap(params, hi, policy.react_cfl),
                reaction_cap(params, lo, policy.react_cfl))
        lo_n = step(grid, params, lo, h)
        hi_n = step(grid, params, hi, h)
        mid_n = 0.5 * (lo_n + hi_n)
        Jl, Jh, Jm = energy(lo_n), energy(hi_n), energy(mid_n)
        slack = policy.energy_slack
        ok = (Jl <= J_lo + slack * (1 + abs(J_lo)) and Jh <= J_hi + slack * (1 + abs(J_hi))
              and Jm <= J_mid + slack * (1 + abs(J_mid)))
        if not ok or not np.all(np.isfinite(mid_n)):
            dt *= 0.5
            since_change = 0
            if dt < policy.dt_min:
                raise StiffnessError(f"edge tracking: dt below dt_min at t={t:.6g}")
            continue
        rise = max(rise, (Jm - J_mid) / (1 + abs(J_mid)))
        lo, hi, t = lo_n, hi_n, t + h
        J_lo, J_hi, J_mid = Jl, Jh, Jm
        emin = min(emin, Jm)
        steps += 1
        since_change += 1
        if since_change >= 10 and dt < policy.dt_max:
            dt = min(2 * dt, policy.dt_max)
            since_change = 0

        moved = False
        if EdgeBracket(lo, hi, t).rel_width(grid) > settings.sep_threshold:
            rebis += 1
            nlo, nhi, used = _segment_rebisect(grid, params, lo, hi, probe_pol,
                                               settings.bracket_tol, settings.max_probes)
            probes += used
            if nlo is None:
                # bracket lost: rebuild it on the ray through the midpoint
                nlo, nhi, used = ray_rebracket(grid, params, 0.5 * (lo + hi), probe_pol,
                                               settings.bracket_tol, settings.max_probes)
                probes += used
            lo, hi = nlo, nhi
            moved = True
            if settings.spot_check_every and rebis % settings.spot_check_every == 0:
                probes += 2
                if (not _decays(classify_fate(grid, params, lo, probe_pol))
                        or _decays(classify_fate(grid, params, hi, probe_pol))):
                    spot_fail += 1
        if moved:
            old = J_mid
            J_lo, J_hi, J_mid = energy(lo), energy(hi), energy(0.5 * (lo + hi))
            jumps.append(J_mid - old)
            emin = min(emin, J_mid)

        if steps % settings.check_every == 0:
            checks += 1
            mid = 0.5 * (lo + hi)
            keep = settings.keep_every > 0 and checks % settings.keep_every == 0
            pt = note(mid, keep)
            h1_max = max(h1_max, pt.h1)
            d = degeneracy_check(grid, mid, blocks, eps)
            if d.ok and pt.residual_l2 < stop:
                return finish("stationary")
            if d.kind in ("small_bump", "node_drop"):
                streak += 1
                if first_degenerate is None:
                    first_degenerate = t
                if streak >= settings.degenerate_persist:
                    return finish("degenerate", d)
            else:
                streak = 0
                first_degenerate = None


def fixed_point_decay_test(grid: Grid, params: SystemParams, blocks: BlockStructure,
                           direction, policy: FlowPolicy, window: float = 1.0,
                           dt: float | None = None):
    """Decay rate of ``log |u_1|_4`` from a sigma-fixed start under the in-block repulsion.

    Returns ``None`` when the gate does not apply (hypothesis (D) fails or the
    direction is not sigma-fixed).  The start is placed at the basin boundary
    of the decoupled problem (no coupling between components): for a
    sigma-fixed ray of the coupled system under (D) the whole ray decays, so
    the coupled boundary is never crossed.  The flow is then integrated over
    ``[0, window]`` and the least-squares slope returned.
    """
    d = fields.as_state(grid, direction)
    rep = validate(params, blocks)
    if not rep.holds_D or not np.array_equal(sigma(blocks, d), d):
        return None
    decoupled = SystemParams(params.lam, np.diag(params.mu))
    s = ray_bisect(grid, decoupled, d, probe_policy(policy), tol_s=1e-8).s_star
    h = dt if dt is not None else min(policy.dt_max, 1e-3)
    n_steps = int(round(window / h))
    if n_steps < 10:
        raise ValueError("fit window too short")
    U = s * d
    ts, logs = [], []
    for k in range(n_steps + 1):
        l4 = float(np.sum(grid.mass * U[0] ** 4)) ** 0.25
        if l4 <= 0 or not np.isfinite(l4):
            break
        ts.append(k * h)
        logs.append(np.log(l4))
        U = step(grid, params, U, h)
    if len(ts) < 10:
        raise ValueError("fit window too short")
    slope = float(np.polyfit(np.array(ts), np.array(logs), 1)[0])
    return slope
