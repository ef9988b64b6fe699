import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nodalflow import fields
from nodalflow.grid import RadialDomain, build_grid
from nodalflow.system import BlockStructure, SystemParams, sigma

EXAMPLE4 = np.array([[1, -1, -0.5, -0.5], [-1, 1, -0.5, -0.5],
                     [-0.5, -0.5, 2, -2], [-0.5, -0.5, -2, 2]], dtype=float)


@pytest.fixture(scope="module")
def g1():
    return build_grid(RadialDomain(1, 0.0, 1.0, 400))


def test_zero_state(g1):
    p = SystemParams.uniform(2, 1.0, 1.0, -1.0)
    Z = fields.zero_state(g1, 2)
    assert fields.energy(g1, p, Z) == 0.0
    assert not np.any(fields.residual(g1, p, Z))
    n = fields.norms(g1, Z)
    assert n.l2_total == n.l4_total == n.h1_total == n.linf_total == 0.0


def test_energy_of_cosine(g1):
    p = SystemParams(np.ones(1), np.zeros((1, 1)))
    U = np.cos(np.pi * g1.nodes / 2)[None, :]
    assert fields.energy(g1, p, U) == pytest.approx(math.pi ** 2 / 16 + 0.25, abs=1e-4)


def test_residual_of_eigenfunction():
    g = build_grid(RadialDomain(1, 0.0, 1.0, 200))
    p = SystemParams(np.array([2.0]), np.zeros((1, 1)))
    u = np.cos(np.pi * g.nodes / 2)
    expected = -(np.pi ** 2 / 4 + 2.0) * u
    assert np.max(np.abs(fields.residual(g, p, u[None, :])[0] - expected)) < 1e-3


def test_energy_sigma_invariant():
    g = build_grid(RadialDomain(2, 0.0, 1.0, 80))
    p = SystemParams(np.array([1.0, 1, 2, 2]), EXAMPLE4)
    blocks = BlockStructure(2, (0, 1))
    U = np.random.default_rng(2).normal(size=(4, g.m))
    assert fields.energy(g, p, sigma(blocks, U)) == pytest.approx(fields.energy(g, p, U),
                                                                   rel=1e-13)
    a, b = fields.norms(g, U), fields.norms(g, sigma(blocks, U))
    assert a.l4_total == pytest.approx(b.l4_total, rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31), dim=st.sampled_from([1, 2, 3]),
       beta=st.floats(-3.0, 0.5))
def test_directional_derivative(seed, dim, beta):
    g = build_grid(RadialDomain(dim, 0.0, 1.0, 60))
    p = SystemParams.uniform(2, 1.0, 1.0, beta)
    rng = np.random.default_rng(seed)
    r = g.nodes
    U = rng.normal(size=(2, 1)) * np.cos(np.pi * r / 2) + 0.3 * rng.normal(size=(2, 1)) * np.cos(
        1.5 * np.pi * r)
    V = rng.normal(size=(2, 1)) * np.cos(np.pi * r / 2) * (1 + r)
    eps = 1e-5
    fd = (fields.energy(g, p, U + eps * V) - fields.energy(g, p, U - eps * V)) / (2 * eps)
    an = -fields.l2_inner(g, fields.residual(g, p, U), V)
    assert abs(fd - an) <= 1e-6 * max(1.0, abs(an))


def test_profile_round_trip(tmp_path):
    for dom in (RadialDomain(3, 0.0, 2.0, 33), RadialDomain(1, 1.0, 2.0, 20)):
        g = build_grid(dom)
        U = np.random.default_rng(0).normal(size=(2, g.m))
        path = tmp_path / "p.csv"
        fields.write_profile(path, g, U)
        back = fields.read_profile(path, g)
        assert np.array_equal(back, U)
        lines = path.read_text().splitlines()
        assert lines[0] == "r,u1,u2"
        assert len(lines) == 1 + g.m + (1 if dom.is_ball else 2)


def test_profile_grid_mismatch(tmp_path):
    g = build_grid(RadialDomain(1, 0.0, 1.0, 40))
    path = tmp_path / "p.csv"
    fields.write_profile(path, g, np.ones((1, g.m)))
    with pytest.raises(ValueError):
        fields.read_profile(path, build_grid(RadialDomain(1, 0.0, 1.0, 41)))


def test_as_state_shape():
    g = build_grid(RadialDomain(1, 0.0, 1.0, 20))
    assert fields.as_state(g, np.ones(g.m)).shape == (1, g.m)
    with pytest.raises(ValueError):
        fields.as_state(g, np.ones(g.m + 1))
