import numpy as np

from nodalflow.grid import RadialDomain, build_grid
from nodalflow.system import BlockStructure, SystemParams
from nodalflow.verify import (PropertyResult, check_bump_invariance, check_equivariance,
                              check_laplacian_order, check_quadrature, smooth_random_state)


def test_margin_direction():
    ceiling = PropertyResult("x", True, 0.2, 1.0)
    floor = PropertyResult("y", True, 4.0, 3.5, lower_bound=True)
    assert ceiling.margin == 0.8 and floor.margin == 0.5
    assert "PASS" in floor.line() and floor.to_record()["margin"] == 0.5


def test_smooth_state_respects_boundary():
    rng = np.random.default_rng(0)
    for dom in (RadialDomain(1, 0.0, 2.0, 100), RadialDomain(3, 1.0, 2.0, 100)):
        g = build_grid(dom)
        U = smooth_random_state(g, 3, rng)
        peaks = np.abs(U).max(axis=1)
        assert np.all((peaks >= 0.5) & (peaks <= 4.0))
        assert np.all(np.abs(U[:, -1]) < 0.1 * peaks)


def test_operator_checks_pass_everywhere():
    for dim in (1, 2, 3):
        for a in (0.0, 0.5):
            dom = RadialDomain(dim, a, a + 1.0, 200)
            assert check_laplacian_order(dom).ok
            assert check_quadrature(dom).ok


def test_not_applicable_gates():
    g = build_grid(RadialDomain(1, 0.0, 1.0, 60))
    rng = np.random.default_rng(1)
    lam_split = SystemParams(np.array([1.0, 2.0]), np.array([[1.0, -1.5], [-1.5, 1.0]]))
    assert check_equivariance(g, lam_split, BlockStructure(2, (0,)), rng).ok is None
    attractive = SystemParams.uniform(2, 1.0, 1.0, 0.5)
    assert check_bump_invariance(g, attractive, rng).ok is None
