import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nodalflow.system import BlockStructure, SystemParams, sigma, symmetry_group, validate

EXAMPLE4 = np.array([[1, -1, -0.5, -0.5], [-1, 1, -0.5, -0.5],
                     [-0.5, -0.5, 2, -2], [-0.5, -0.5, -2, 2]], dtype=float)


def test_example_matrix_satisfies_all():
    rep = validate(SystemParams(np.array([1.0, 1, 2, 2]), EXAMPLE4), BlockStructure(2, (0, 1)))
    assert rep.holds_A and rep.holds_B and rep.holds_C and rep.holds_D
    assert rep.passes()
    assert all(v is None or v >= 0 for v in rep.margins.values())


def test_uniform_D_margin():
    blocks = BlockStructure(2, (1,))
    bad = validate(SystemParams.uniform(2, 1.0, 1.0, -0.5), blocks)
    assert not bad.holds_D and bad.margins["D"] == pytest.approx(-0.5)
    edge = validate(SystemParams.uniform(2, 1.0, 1.0, -1.0), blocks)
    assert edge.holds_D and edge.margins["D"] == 0.0


def test_scalar_D_not_applicable():
    # trivial group: (D) is reported n/a and does not block a scalar run
    rep = validate(SystemParams(np.ones(1), np.ones((1, 1))), BlockStructure(1, (0,)))
    assert rep.margins["D"] is None and rep.holds_D


def test_uniform_beta_bound():
    rep = validate(SystemParams.uniform(2, 1.0, 1.0, -1.5), BlockStructure(2, (1,)))
    assert rep.holds_uniform_bound and rep.margins["uniform_bound"] == pytest.approx(0.5)
    rep3 = validate(SystemParams.uniform(3, 1.0, 1.0, -0.4), BlockStructure(3, (0,)))
    assert not rep3.holds_uniform_bound


def test_asymmetric_block_fails_C():
    B = EXAMPLE4.copy()
    B[2, 0] = B[0, 2] = -0.7
    rep = validate(SystemParams(np.array([1.0, 1, 2, 2]), B), BlockStructure(2, (0, 1)))
    assert not rep.holds_C


def test_params_reject_asymmetric():
    with pytest.raises(ValueError):
        SystemParams(np.ones(2), np.array([[1.0, -1.0], [-0.5, 1.0]]))


def test_sigma_examples():
    U = np.arange(6.0)[:, None] * np.ones((6, 3))
    assert np.array_equal(sigma(BlockStructure(2, (0,)), U[:2]), U[[1, 0]])
    out = sigma(BlockStructure(3, (0, 0)), U)
    assert np.array_equal(out[:, 0], [1, 2, 0, 4, 5, 3])


@settings(max_examples=30, deadline=None)
@given(p=st.sampled_from([2, 3, 5]), nb=st.integers(1, 3), seed=st.integers(0, 10 ** 6))
def test_sigma_order_p(p, nb, seed):
    blocks = BlockStructure(p, (0,) * nb)
    U = np.random.default_rng(seed).normal(size=(p * nb, 7))
    V = U
    for _ in range(p):
        V = sigma(blocks, V)
    assert np.array_equal(V, U)


def test_group_sizes():
    assert len(symmetry_group(BlockStructure(1, (0,)))) == 2
    g = symmetry_group(BlockStructure(2, (1,)))
    assert len(g) == 8
    U = np.random.default_rng(0).normal(size=(2, 5))
    assert any(np.array_equal(T(U), U) for T in g)
    assert len({T(U).tobytes() for T in g}) == 8


def test_non_prime_p_rejected():
    with pytest.raises(ValueError):
        BlockStructure(4, (0,))
