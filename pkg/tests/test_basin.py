import numpy as np
import pytest

from nodalflow import fields
from nodalflow.basin import (NoBracketError, Verdict, bracket_from_ray, classify_fate,
                             edge_track, fixed_point_decay_test, probe_policy, ray_bisect)
from nodalflow.flow import FlowPolicy
from nodalflow.grid import RadialDomain, build_grid
from nodalflow.seeds import bubble
from nodalflow.system import BlockStructure, SystemParams

SCALAR = SystemParams.uniform(1, 1.0, 1.0, 0.0)


@pytest.fixture(scope="module")
def g():
    return build_grid(RadialDomain(1, 0.0, 1.0, 200))


@pytest.fixture(scope="module")
def pol(g):
    return probe_policy(FlowPolicy.default_for(g))


@pytest.fixture(scope="module")
def direction(g):
    b = bubble(g, 0.0, 1.0)[None, :]
    return b / fields.h1_norm(g, b)


def test_classify(g, pol, direction):
    assert classify_fate(g, SCALAR, np.zeros((1, g.m)), pol).verdict is Verdict.DECAYED
    assert classify_fate(g, SCALAR, 0.01 * direction, pol).verdict is Verdict.DECAYED
    assert classify_fate(g, SCALAR, 100 * direction, pol).verdict is Verdict.NOT_DECAYED


def test_ray_bisect(g, pol, direction):
    tol = 1e-10
    a = ray_bisect(g, SCALAR, direction, pol, tol_s=tol)
    b = ray_bisect(g, SCALAR, direction, pol, tol_s=tol)
    assert a.s_star == b.s_star
    assert a.s_hi - a.s_lo <= tol * a.s_lo
    assert classify_fate(g, SCALAR, a.s_star * (1 - 10 * tol) * direction, pol).verdict \
        is Verdict.DECAYED
    assert classify_fate(g, SCALAR, a.s_star * (1 + 10 * tol) * direction, pol).verdict \
        is Verdict.NOT_DECAYED
    c = ray_bisect(g, SCALAR, 3.0 * direction, pol, tol_s=tol)
    assert 3.0 * c.s_star == pytest.approx(a.s_star, rel=5 * tol)


def test_zero_direction(g, pol):
    with pytest.raises(NoBracketError):
        ray_bisect(g, SCALAR, np.zeros((1, g.m)), pol)


def test_edge_track_converges(g, direction):
    policy = FlowPolicy.default_for(g)
    ray = ray_bisect(g, SCALAR, direction, probe_policy(policy), tol_s=1e-10)
    res = edge_track(g, SCALAR, bracket_from_ray(direction, ray), policy,
                     BlockStructure(1, (0,)), 0.1, stop_residual=1e-6)
    assert res.terminal == "stationary"
    assert fields.residual_l2(g, SCALAR, res.state) < 1e-6
    assert res.step_energy_max_rise <= 1e-12
    assert res.energy_min >= -1e-9


def test_symmetric_bracket_degenerates(g):
    # sigma-fixed data with in-block repulsion: both components lose their bump
    params = SystemParams.uniform(2, 1.0, 1.0, -1.5)
    b = bubble(g, 0.0, 1.0)
    d = np.array([b, b])
    d /= fields.h1_norm(g, d)
    decoupled = SystemParams(params.lam, np.diag(params.mu))
    policy = FlowPolicy.default_for(g)
    ray = ray_bisect(g, decoupled, d, probe_policy(policy), tol_s=1e-8)
    res = edge_track(g, params, bracket_from_ray(d, ray), policy, BlockStructure(2, (0,)), 0.1,
                     t_max=50.0)
    assert res.terminal == "degenerate"


def test_fixed_point_decay(g):
    blocks = BlockStructure(2, (0,))
    b = bubble(g, 0.0, 1.0)
    sym = np.array([b, b])
    pol = FlowPolicy.default_for(g)
    s1 = fixed_point_decay_test(g, SystemParams.uniform(2, 1.0, 1.0, -1.0), blocks, sym, pol)
    s2 = fixed_point_decay_test(g, SystemParams.uniform(2, 1.0, 1.0, -2.0), blocks, sym, pol)
    assert s2 < s1 < 0
    other = np.array([b, bubble(g, 0.0, 0.5)])
    assert fixed_point_decay_test(g, SystemParams.uniform(2, 1.0, 1.0, -1.0), blocks, other,
                                  pol) is None
    # (D) fails: gate not applicable
    assert fixed_point_decay_test(g, SystemParams.uniform(2, 1.0, 1.0, -0.5), blocks, sym,
                                  pol) is None
