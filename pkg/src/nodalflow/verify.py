"""Property suite: checks of the discretization and the flow with measured margins.

Every check returns a :class:`PropertyResult` whose ``margin`` is the
threshold minus the measured value, so a non-negative margin is a pass.
Checks that do not apply to the given system (for example equivariance when
the coupling is not block invariant) report ``ok = None``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fields
from .flow import FlowPolicy, StiffnessError, dissipation_check, integrate, step
from .grid import Grid, RadialDomain, build_grid, inner, integrate as quad
from .nodal import bump_decomposition, calibrate_rho
from .seeds import bubble
from .system import BlockStructure, SystemParams, sigma, validate


@dataclass
class PropertyResult:
    name: str
    ok: bool | None
    measured: float
    threshold: float
    detail: dict = field(default_factory=dict)
    lower_bound: bool = False     # the threshold is a floor, not a ceiling

    @property
    def margin(self) -> float:
        d = self.threshold - self.measured
        return -d if self.lower_bound else d

    def line(self) -> str:
        status = {True: "PASS", False: "FAIL", None: "N/A "}[self.ok]
        return (f"{status} {self.name:<28} measured={self.measured:.3e} "
                f"threshold={self.threshold:.1e} margin={self.margin:+.3e}")

    def to_record(self) -> dict:
        return {"name": self.name, "ok": self.ok, "measured": self.measured,
                "threshold": self.threshold, "margin": self.margin, "detail": self.detail}


def smooth_random_state(grid: Grid, n_comp: int, rng, kmax: int = 3, amplitude=(0.5, 4.0)):
    """Low Dirichlet modes with coefficients ``N(0,1)/k^2``, sup norm drawn from ``amplitude``.

    On a ball the modes are ``cos((k - 1/2) pi r / R)``, even through the
    centre; on an annulus ``sin(k pi (r - a)/(b - a))``.
    """
    dom = grid.domain
    r = grid.nodes
    U = np.zeros((n_comp, grid.m))
    for j in range(n_comp):
        for k in range(1, kmax + 1):
            if dom.is_ball:
                mode = np.cos((k - 0.5) * np.pi * r / dom.r_outer)
            else:
                mode = np.sin(k * np.pi * (r - dom.r_inner) / (dom.r_outer - dom.r_inner))
            U[j] += rng.normal() / k ** 2 * mode
        U[j] *= rng.uniform(*amplitude) / np.abs(U[j]).max()
    return U


# -- operators ------------------------------------------------------------------------

def _laplacian_error(domain: RadialDomain) -> float:
    g = build_grid(domain)
    r, a, b, d = g.nodes, domain.r_inner, domain.r_outer, domain.dim
    if domain.is_ball:
        k = np.pi / (2 * b)
        f, fp, fpp = np.cos(k * r), -k * np.sin(k * r), -k * k * np.cos(k * r)
    else:
        k = np.pi / (b - a)
        f, fp, fpp = np.sin(k * (r - a)), k * np.cos(k * (r - a)), -k * k * np.sin(k * (r - a))
    e = g.laplacian(f) - (fpp + (d - 1) / r * fp)
    return float(np.sqrt(np.sum(g.mass * e * e)))


def check_laplacian_order(domain: RadialDomain, threshold: float = 3.5) -> PropertyResult:
    """Error ratio of the Laplacian on a smooth Dirichlet function under h-halving."""
    m = domain.m
    e1 = _laplacian_error(domain)
    e2 = _laplacian_error(RadialDomain(domain.dim, domain.r_inner, domain.r_outer, 2 * m + 1))
    ratio = e1 / e2
    return PropertyResult("laplacian_order", bool(ratio >= threshold), ratio, threshold,
                          {"error_h": e1, "error_h2": e2}, lower_bound=True)


def check_self_adjoint(grid: Grid, rng, pairs: int = 20, threshold: float = 1e-12) -> PropertyResult:
    worst = 0.0
    for _ in range(pairs):
        u, v = rng.normal(size=(2, grid.m))
        a = inner(grid, grid.laplacian(u), v)
        b = inner(grid, u, grid.laplacian(v))
        scale = math.sqrt(inner(grid, grid.laplacian(u), grid.laplacian(u))
                          * inner(grid, v, v))
        worst = max(worst, abs(a - b) / scale)
    return PropertyResult("laplacian_self_adjoint", bool(worst <= threshold), worst, threshold)


def check_quadrature(domain: RadialDomain, threshold: float = 1e-10) -> PropertyResult:
    """Quadrature exactness on ``r^k`` for the linear part and second-order convergence beyond."""
    g = build_grid(domain)
    a, b, n = domain.r_inner, domain.r_outer, domain.dim
    lin = quad(g, np.ones(g.m))
    exact_lin = (b ** n - a ** n) / n
    err_lin = abs(lin - exact_lin) / exact_lin

    def err(dom):
        gg = build_grid(dom)
        val = quad(gg, np.exp(gg.nodes))
        # int_a^b e^r r^{n-1} dr in closed form
        poly = {1: lambda t: np.exp(t), 2: lambda t: np.exp(t) * (t - 1),
                3: lambda t: np.exp(t) * (t * t - 2 * t + 2)}[n]
        exact = poly(b) - poly(a)
        return abs(val - exact)

    e1 = err(domain)
    e2 = err(RadialDomain(n, a, b, 2 * domain.m + 1))
    ratio = e1 / e2 if e2 > 0 else float("inf")
    ok = err_lin <= threshold and ratio >= 3.5
    return PropertyResult("quadrature", bool(ok), err_lin, threshold,
                          {"constant_rel_error": err_lin, "exp_ratio": ratio})


def check_gradient(grid: Grid, params: SystemParams, rng, pairs: int = 100,
                   threshold: float = 1e-5, amplitude=(0.5, 2.0)) -> PropertyResult:
    """Central finite differences of the energy against ``-<residual, V>``."""
    worst = 0.0
    n = params.n_comp
    for _ in range(pairs):
        U = smooth_random_state(grid, n, rng, kmax=4, amplitude=amplitude)
        V = smooth_random_state(grid, n, rng, kmax=4, amplitude=(1.0, 1.0))
        eps = 1e-5
        fd = (fields.energy(grid, params, U + eps * V)
              - fields.energy(grid, params, U - eps * V)) / (2 * eps)
        an = -fields.l2_inner(grid, fields.residual(grid, params, U), V)
        worst = max(worst, abs(fd - an) / max(abs(an), 1e-300))
    return PropertyResult("gradient_consistency", bool(worst <= threshold), worst, threshold)


# -- flow -----------------------------------------------------------------------------

@dataclass
class DissipationMeasurement:
    worst: float
    worst_half: float
    fates: list
    dt: float


def rayleigh_quotient(grid: Grid, params: SystemParams, V: np.ndarray) -> float:
    """``(V.K.V + sum_j lam_j |v_j|^2) / |V|^2`` in the mass inner product."""
    top = np.sum(V * grid.stiffness(V)) + np.sum(params.lam[:, None] * grid.mass * V * V)
    return float(top / np.sum(grid.mass * V * V))


def measure_dissipation(grid: Grid, params: SystemParams, trajectories: int = 20,
                        rng_seed: int = 0, dt: float | None = None, t_max: float = 0.05,
                        max_steps: int = 4000) -> DissipationMeasurement:
    """Worst relative mismatch of ``J(t1) - J(t0)`` against ``int |dU/dt|^2`` at ``dt`` and ``dt/2``.

    Steps are fixed.  The mismatch of the semi-implicit scheme is about
    ``dt * q / 2``, where ``q`` is the Rayleigh quotient of ``dU/dt`` plus the
    rate of the explicit cubic term; the reference step is
    ``min(h^2, 1e-3 / q0)`` with ``q0`` the largest such rate over the initial
    data (from :func:`smooth_random_state`), the cubic rate counted three
    times for its growth along blow-up runs.
    """
    rng = np.random.default_rng(rng_seed)
    states = [smooth_random_state(grid, params.n_comp, rng) for _ in range(trajectories)]
    if dt is None:
        q0 = max(rayleigh_quotient(grid, params, fields.residual(grid, params, U))
                 + 3.0 * float((np.abs(params.coupling) @ (U * U)).max()) for U in states)
        dt = min(grid.h ** 2, 1e-3 / q0)
    t_max = min(t_max, max_steps * dt)
    out = []
    fates = []
    for h in (dt, dt / 2):
        worst = 0.0
        every = max(1, int(round(t_max / 20 / h)))
        pol = FlowPolicy(dt0=h, dt_min=h, dt_max=h, t_max=t_max, adaptive=False,
                         decay_certificate=False, keep_states=False, sample_every=every,
                         zero_threshold=1e-12)
        for U in states:
            tr = integrate(grid, params, U, pol)
            if h == dt:
                fates.append(tr.fate.value)
            if len(tr.samples) >= 3:
                worst = max(worst, dissipation_check(tr))
        out.append(worst)
    return DissipationMeasurement(out[0], out[1], fates, dt)


def check_dissipation(grid, params, trajectories=20, rng_seed=0, threshold=1e-3):
    m = measure_dissipation(grid, params, trajectories, rng_seed)
    ok = m.worst <= threshold and m.worst_half <= threshold / 2
    return PropertyResult("dissipation_identity", bool(ok), m.worst, threshold,
                          {"worst_half_dt": m.worst_half, "dt": m.dt,
                           "ratio": m.worst / m.worst_half if m.worst_half else None})


def check_energy_monotone(grid, params, policy: FlowPolicy, rng, runs: int = 5) -> PropertyResult:
    """Adaptive integration under ``policy``; rejected steps are counted, a stiffness stop fails."""
    rejected = 0
    worst = 0.0
    stiff = []
    for k in range(runs):
        U = smooth_random_state(grid, params.n_comp, rng, amplitude=(0.5, 2.0))
        try:
            tr = integrate(grid, params, U, policy.with_(t_max=min(policy.t_max, 1.0),
                                                           keep_states=False))
        except StiffnessError as exc:
            stiff.append(str(exc))
            continue
        rejected += tr.rejected
        E = tr.energies
        if E.size > 1:
            rise = np.max((E[1:] - E[:-1]) / (1 + np.abs(E[:-1])))
            worst = max(worst, float(rise))
    ok = not stiff and worst <= 1e-12
    return PropertyResult("energy_monotone", bool(ok), max(worst, 0.0), 1e-12,
                          {"rejected_steps": rejected, "stiffness_failures": stiff})


def nodal_increases(trajectory) -> list:
    """``(t, component, before, after)`` for every increase of a nodal count between samples."""
    out = []
    s = trajectory.samples
    for a, b in zip(s[:-1], s[1:]):
        for j, (x, y) in enumerate(zip(a.signature, b.signature)):
            if y > x:
                out.append((b.t, j, x, y))
    return out


def nodal_seed(grid: Grid, n_comp: int, rng) -> np.ndarray:
    """Random state with sign changes: up to five low modes, unit-order amplitude."""
    return smooth_random_state(grid, n_comp, rng, kmax=5, amplitude=(0.5, 6.0))


def check_nodal_monotone(grid, params, rng, seeds: int = 10, policy=None) -> PropertyResult:
    pol = (policy or FlowPolicy.default_for(grid)).with_(t_max=2.0, sample_every=5,
                                                          keep_states=False)
    bad = []
    for _ in range(seeds):
        tr = integrate(grid, params, nodal_seed(grid, params.n_comp, rng), pol)
        bad.extend(nodal_increases(tr))
    return PropertyResult("nodal_monotone", not bad, float(len(bad)), 0.0,
                          {"increases": bad[:10]})


def equivariance_gap(grid, params, blocks, U, t_end: float = 1.0, dt: float = 1e-3,
                     cap: float = 1e3) -> float:
    """``max_t |eta^t(sigma U) - sigma eta^t(U)|_2`` on a fixed step grid.

    Runs stop early once the state exceeds ``cap`` (a blow-up in progress).
    """
    A, B = sigma(blocks, U), U.copy()
    worst = 0.0
    for _ in range(int(round(t_end / dt))):
        A = step(grid, params, A, dt)
        B = step(grid, params, B, dt)
        if not (np.all(np.isfinite(A)) and np.abs(B).max() < cap):
            break
        D = A - sigma(blocks, B)
        worst = max(worst, float(np.sqrt(np.sum(grid.mass * D * D))))
    return worst


def check_equivariance(grid, params, blocks, rng, samples: int = 10, threshold: float = 1e-12):
    rep = validate(params, blocks)
    if not (rep.holds_A and rep.holds_C):
        return PropertyResult("equivariance", None, 0.0, threshold,
                              {"reason": "coupling or lambda not block invariant"})
    worst = 0.0
    for _ in range(samples):
        U = smooth_random_state(grid, params.n_comp, rng, amplitude=(0.2, 1.0))
        worst = max(worst, equivariance_gap(grid, params, blocks, U))
    return PropertyResult("equivariance", bool(worst <= threshold), worst, threshold)


def small_bump_run(grid, params, rho, rng, policy=None) -> dict:
    """One constructed run: a large positive bump and a small negative one in ``u_1``.

    Returns the largest L4 norm of the small (outer) bump over the samples in
    which ``u_1`` still has its sign change, together with the start value.
    """
    dom = grid.domain
    a, b = dom.r_inner, dom.r_outer
    c = a + (b - a) * rng.uniform(0.35, 0.65)
    U = np.zeros((params.n_comp, grid.m))
    big = rng.uniform(0.5, 4.0) * bubble(grid, a, c)
    small = bubble(grid, c, b)
    target = rho * rng.uniform(0.2, 0.95)
    U[0] = big - target * small
    for j in range(1, params.n_comp):
        lo, hi = sorted(rng.uniform(a, b, 2))
        if hi - lo < 8 * grid.h:
            lo, hi = a, b
        U[j] = rng.uniform(0.2, 2.0) * bubble(grid, lo, hi)
    pol = (policy or FlowPolicy.default_for(grid)).with_(t_max=1.0, sample_every=5)
    tr = integrate(grid, params, U, pol)
    worst = 0.0
    for s in tr.samples:
        bumps = bump_decomposition(grid, s.state[0])
        if len(bumps) < 2:
            break
        worst = max(worst, bumps[-1].l4_norm)
    return {"start": target, "max": worst, "fate": tr.fate.value}


def check_bump_invariance(grid, params, rng, runs: int = 10) -> PropertyResult:
    if np.any(params.offdiag > 0):
        return PropertyResult("bump_invariance", None, 0.0, 0.0,
                              {"reason": "requires non-positive coupling"})
    rho, C = calibrate_rho(grid, float(params.lam.min()), float(params.mu.max()))
    worst = 0.0
    for _ in range(runs):
        worst = max(worst, small_bump_run(grid, params, rho, rng)["max"])
    return PropertyResult("bump_invariance", bool(worst < rho), worst, rho,
                          {"rho": rho, "C": C})


def run_suite(grid: Grid, params: SystemParams, blocks: BlockStructure, policy: FlowPolicy,
              rng_seed: int = 0, scale: float = 1.0) -> list[PropertyResult]:
    """The full suite on one configuration; ``scale`` shrinks the sample counts."""
    rng = np.random.default_rng(rng_seed)
    n = lambda k: max(1, int(round(k * scale)))  # noqa: E731
    dom = grid.domain
    return [
        check_quadrature(dom),
        check_laplacian_order(dom),
        check_self_adjoint(grid, rng, n(20)),
        check_gradient(grid, params, rng, n(100)),
        check_dissipation(grid, params, n(20), rng_seed),
        check_energy_monotone(grid, params, policy, rng, n(5)),
        check_nodal_monotone(grid, params, rng, n(10), policy),
        check_equivariance(grid, params, blocks, rng, n(10)),
        check_bump_invariance(grid, params, rng, n(10)),
    ]
