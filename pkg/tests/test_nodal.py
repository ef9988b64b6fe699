import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nodalflow.flow import Sample, Trajectory
from nodalflow.grid import RadialDomain, build_grid
from nodalflow.nodal import (arriving_time, bump_decomposition, bump_values, calibrate_rho,
                             degeneracy_check, in_prescribed_D, nodal_number)
from nodalflow.system import BlockStructure


@pytest.fixture(scope="module")
def g():
    return build_grid(RadialDomain(1, 0.0, 1.0, 200))


def test_nodal_number_examples(g):
    assert nodal_number(np.abs(np.sin(np.pi * g.nodes)) + 0.1) == 0
    assert nodal_number(np.array([1.0, -1.0]), 1e-3) == 1
    assert nodal_number(np.sin(3 * np.pi * g.nodes), 1e-3) == 2


def test_gate_hides_noise(g):
    u = np.sin(np.pi * g.nodes) + 1e-14 * np.random.default_rng(0).normal(size=g.m)
    u[-1] = -1e-14
    assert nodal_number(u) == 0


@settings(max_examples=40, deadline=None)
@given(k=st.integers(1, 8), amp=st.floats(1e-3, 1e3))
def test_sine_count(k, amp):
    grid = build_grid(RadialDomain(1, 0.0, 1.0, 400))
    assert nodal_number(amp * np.sin(k * np.pi * grid.nodes)) == k - 1


def test_bumps(g):
    u = np.sin(np.pi * g.nodes)
    (b,) = bump_decomposition(g, u)
    assert b.l4_norm == pytest.approx(np.sum(g.mass * u ** 4) ** 0.25, rel=1e-14)
    v = np.sin(2 * np.pi * g.nodes)
    bumps = bump_decomposition(g, v)
    assert len(bumps) == 2 and bumps[0].sign == 1 and bumps[1].sign == -1
    # the weights r^0 make both halves mirror images, up to the lumped centre cell
    assert bumps[0].l4_norm == pytest.approx(bumps[1].l4_norm, rel=1e-2)
    assert sum(b.l4_norm ** 4 for b in bumps) == pytest.approx(np.sum(g.mass * v ** 4), rel=1e-10)
    assert bumps[0].b == pytest.approx(0.5, abs=1e-6)
    np.testing.assert_array_equal(bump_values(v, bumps[0]) + bump_values(v, bumps[1]), v)


def test_symmetric_bumps_on_annulus():
    grid = build_grid(RadialDomain(1, 1.0, 2.0, 199))
    v = np.sin(2 * np.pi * (grid.nodes - 1.0))
    a, b = bump_decomposition(grid, v)
    assert a.l4_norm == pytest.approx(b.l4_norm, rel=1e-6)


def test_in_prescribed_D(g):
    assert in_prescribed_D(np.abs(np.sin(np.pi * g.nodes))[None, :], BlockStructure(1, (0,)))
    assert in_prescribed_D(np.sin(2 * np.pi * g.nodes)[None, :], BlockStructure(1, (1,)))
    assert not in_prescribed_D(np.zeros((1, g.m)), BlockStructure(1, (1,)))


def test_degeneracy_kinds(g):
    blocks = BlockStructure(1, (1,))
    u = 3 * np.sin(2 * np.pi * g.nodes)
    assert degeneracy_check(g, u[None, :], blocks, 0.1).ok
    first, second = bump_decomposition(g, u)
    dropped = u - bump_values(u, second)
    assert degeneracy_check(g, dropped[None, :], blocks, 0.1).kind == "node_drop"
    eps = 0.5
    small = bump_values(u, first) + bump_values(u, second) * (eps / 2) / second.l4_norm
    d = degeneracy_check(g, small[None, :], blocks, eps)
    assert (d.kind, d.component, d.bump) == ("small_bump", 0, 2)
    with pytest.raises(ValueError):
        degeneracy_check(g, u[None, :], blocks, 0.0)


def _traj(g, states):
    samples = [Sample(t=float(k), energy=0.0, residual_l2=0.0, h1=0.0, l2=0.0, linf=0.0,
                      signature=(0,), bump_l4=[], state=s) for k, s in enumerate(states)]
    return Trajectory(grid=g, samples=samples)


def test_arriving_time(g):
    blocks = BlockStructure(1, (1,))
    good = 3 * np.sin(2 * np.pi * g.nodes)[None, :]
    assert arriving_time(_traj(g, [good, good]), blocks, 0.1) is None
    tiny = 1e-3 * good
    assert arriving_time(_traj(g, [tiny, good]), blocks, 0.1) == 0.0


def test_calibrate_rho(g):
    rho, C = calibrate_rho(g, 1.0, 1.0)
    assert 0 < rho <= 1 and 1 - C * rho ** 2 > 0
    assert 1 - C * (2 * rho) ** 2 <= 0 or rho == 1.0
