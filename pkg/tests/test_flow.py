import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nodalflow import fields
from nodalflow.flow import (Fate, FlowPolicy, boundedness_monitor, dissipation_check, integrate,
                            reaction_cap, step)
from nodalflow.grid import RadialDomain, build_grid
from nodalflow.search import newton_polish
from nodalflow.seeds import bubble
from nodalflow.system import BlockStructure, SystemParams, sigma
from nodalflow.verify import smooth_random_state

SCALAR = SystemParams.uniform(1, 1.0, 1.0, 0.0)


@pytest.fixture(scope="module")
def g():
    return build_grid(RadialDomain(1, 0.0, 1.0, 200))


@pytest.fixture(scope="module")
def ground(g):
    # positive solution from a Newton solve seeded by the cosine shape
    U0 = 2.2 * np.cos(np.pi * g.nodes / 2)[None, :]
    nr = newton_polish(g, SCALAR, U0, 1e-10)
    assert nr.converged and nr.residual_l2 < 1e-10
    return nr.state


def test_zero_is_fixed(g):
    Z = np.zeros((2, g.m))
    assert not np.any(step(g, SystemParams.uniform(2, 1.0, 1.0, -1.0), Z, 0.5))


def test_linear_step_scales_eigenvector(g):
    lam = 1.5
    p = SystemParams(np.array([lam]), np.zeros((1, 1)))
    W = np.sqrt(g.mass)
    L = g.dense_laplacian()
    S = W[:, None] * L / W[None, :]
    vals, vecs = np.linalg.eigh((S + S.T) / 2)
    k = -vals[-1]
    v = vecs[:, -1] / W
    # the top discrete mode approximates cos(pi r / 2)
    assert k == pytest.approx(np.pi ** 2 / 4, rel=1e-4)
    dt = 1e-2
    out = step(g, p, v[None, :], dt)[0]
    np.testing.assert_allclose(out, v / (1 + dt * (k + lam)), rtol=1e-10, atol=1e-12)


def test_equilibrium_drift(g, ground):
    assert fields.residual_l2(g, SCALAR, ground) < 1e-10
    after = step(g, SCALAR, ground, 1e-3)
    assert np.max(np.abs(after - ground)) <= 1e-12


def test_fates(g, ground):
    pol = FlowPolicy.default_for(g)
    b = bubble(g, 0.0, 1.0)[None, :]
    assert integrate(g, SCALAR, 0.01 * b, pol).fate is Fate.DECAYED
    assert integrate(g, SCALAR, 100 * b, pol).fate is Fate.BLOWUP
    tr = integrate(g, SCALAR, ground, pol)
    assert tr.fate is Fate.STATIONARY and len(tr.samples) == 1
    assert dissipation_check(tr) == 0.0


def test_horizon(g):
    pol = FlowPolicy.default_for(g, t_max=0.01, decay_certificate=False, zero_threshold=1e-30)
    tr = integrate(g, SCALAR, bubble(g, 0.0, 1.0)[None, :], pol)
    assert tr.fate is Fate.HORIZON and tr.final.t == pytest.approx(0.01, rel=1e-12)


def test_decay_rate_linear(g):
    # log-fit of the small-amplitude decay against the first Dirichlet rate
    pol = FlowPolicy(dt0=1e-3, dt_min=1e-3, dt_max=1e-3, t_max=1.0, adaptive=False,
                     decay_certificate=False, zero_threshold=1e-30, sample_every=50)
    u = 1e-3 * np.cos(np.pi * g.nodes / 2)[None, :]
    tr = integrate(g, SCALAR, u, pol)
    t = tr.times
    logs = np.log([s.l2 for s in tr.samples])
    slope = np.polyfit(t, logs, 1)[0]
    assert slope == pytest.approx(-(1 + np.pi ** 2 / 4), rel=2e-2)


@settings(max_examples=12, deadline=None)
@given(seed=st.integers(0, 2 ** 31), beta=st.sampled_from([-2.0, -1.0, -0.3, 0.3]))
def test_energy_monotone(seed, beta):
    grid = build_grid(RadialDomain(2, 0.0, 1.0, 80))
    p = SystemParams.uniform(2, 1.0, 1.0, beta)
    U = smooth_random_state(grid, 2, np.random.default_rng(seed))
    tr = integrate(grid, p, U, FlowPolicy.default_for(grid, t_max=1.0, sample_every=1,
                                                       keep_states=False))
    E = tr.energies
    assert np.all(E[1:] <= E[:-1] + 1e-12 * (1 + np.abs(E[:-1])))


def test_dissipation_first_order_linear(g):
    p = SystemParams(np.ones(1), np.zeros((1, 1)))
    U = smooth_random_state(g, 1, np.random.default_rng(5))
    worst = []
    for dt in (1e-4, 5e-5):
        pol = FlowPolicy(dt0=dt, dt_min=dt, dt_max=dt, t_max=0.02, adaptive=False,
                         decay_certificate=False, sample_every=20, keep_states=False,
                         zero_threshold=1e-30)
        worst.append(dissipation_check(integrate(g, p, U, pol)))
    assert worst[0] < 1e-2
    assert worst[0] / worst[1] == pytest.approx(2.0, rel=0.1)


def test_equivariant_integration():
    grid = build_grid(RadialDomain(1, 0.0, 1.0, 60))
    blocks = BlockStructure(2, (0,))
    p = SystemParams.uniform(2, 1.0, 1.0, -1.5)
    U = smooth_random_state(grid, 2, np.random.default_rng(3), amplitude=(0.5, 1.0))
    pol = FlowPolicy.default_for(grid, t_max=0.5)
    a = integrate(grid, p, sigma(blocks, U), pol)
    b = integrate(grid, p, U, pol)
    assert len(a.samples) == len(b.samples)
    for x, y in zip(a.samples, b.samples):
        assert x.t == y.t
        assert np.max(np.abs(x.state - sigma(blocks, y.state))) <= 1e-12


def test_boundedness_monitor(g):
    pol = FlowPolicy.default_for(g)
    tr = integrate(g, SCALAR, 0.5 * bubble(g, 0.0, 1.0)[None, :], pol)
    assert tr.fate is Fate.DECAYED
    mon = boundedness_monitor(tr)
    assert mon["t_l2_max"] == 0.0 and mon["t_h1_max"] == 0.0
    up = integrate(g, SCALAR, 30 * bubble(g, 0.0, 1.0)[None, :], pol.with_(sample_every=1))
    assert boundedness_monitor(up)["t_h1_max"] == up.final.t


def test_monitor_stream(g):
    buf = io.StringIO()
    integrate(g, SCALAR, 0.5 * bubble(g, 0.0, 1.0)[None, :], FlowPolicy.default_for(g),
              monitor=buf)
    rows = [json.loads(line) for line in buf.getvalue().splitlines()]
    assert rows and {"t", "J", "residual_l2", "signature"} <= set(rows[0])


def test_reaction_cap():
    p = SystemParams.uniform(2, 1.0, 1.0, -2.0)
    U = np.ones((2, 5))
    assert reaction_cap(p, U, 0.1) == pytest.approx(0.1 / 3.0)
    assert reaction_cap(p, U, 0.0) == np.inf


def test_policy_validation():
    with pytest.raises(ValueError):
        FlowPolicy(dt0=1.0, dt_min=1e-9, dt_max=1e-2)
    with pytest.raises(ValueError):
        FlowPolicy(t_max=-1.0)
