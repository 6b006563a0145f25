import numpy as np
import pytest

from svinclusion import matrixcore as mc
from svinclusion._validation import InfeasibleScaleError, InvalidArgumentError
from svinclusion.builder import (
    BoundaryData,
    BuildConfig,
    build,
    coverage_report,
    RefineParams,
    init_map,
    realize_laminates,
    refine_cell,
    rescale_problem,
)
from svinclusion.mesh import Domain, PwAffineMap, kuhn_simplices
from svinclusion.polytope import PolyBatch


def mean_gradient(u):
    vol = u.cell_volumes
    return np.einsum("c,cai->ai", vol, u.grads) / vol.sum()


def test_rescale_zero_and_affine():
    g = rescale_problem(BoundaryData.zero(2, 2), 1.0)
    assert np.allclose(g.gradient, 0)
    v = rescale_problem(BoundaryData.affine(np.eye(2)), 2.0)
    assert np.allclose(v.gradient, 0.5 * np.eye(2)) and v.lipschitz == pytest.approx(0.5)


def test_rescale_bound_chain():
    g = BoundaryData.affine(np.array([[1.0, 1.0], [0.0, 0.0]]))  # operator norm sqrt(2)
    with pytest.raises(InfeasibleScaleError):
        rescale_problem(g, 1.4)
    rescale_problem(g, 1.5)
    with pytest.raises(InfeasibleScaleError):
        rescale_problem(g, 1.5, delta=0.1)


def test_kuhn_grid_tiles_box():
    dom = Domain.unit_cube(3, 4)
    sims = kuhn_simplices(dom)
    assert len(sims) == 6 * 64
    vol = np.abs(np.linalg.det(sims[:, 1:] - sims[:, :1])) / 6
    assert vol.sum() == pytest.approx(1.0)


def test_init_map_zero_and_affine():
    dom = Domain.unit_cube(2, 4)
    u0 = init_map(dom, BoundaryData.zero(2, 2))
    assert np.all(u0.grads == 0)
    G = np.array([[0.3, -0.1], [0.2, 0.4]])
    ua = init_map(dom, BoundaryData.affine(G, [1.0, 2.0]))
    assert np.allclose(ua.simplex_grads, G)
    assert np.allclose(ua(np.array([[0.3, 0.7]])), G @ [0.3, 0.7] + [1, 2])


def test_init_map_interpolation_error():
    dom = Domain.unit_cube(2, 16)
    g = BoundaryData(lambda x: np.stack([np.sin(x[:, 0]) / 2, 0 * x[:, 0]], axis=1), 2)
    u = init_map(dom, g)
    cen = u.simplices.mean(axis=1)
    dg = np.zeros((len(cen), 2, 2))
    dg[:, 0, 0] = np.cos(cen[:, 0]) / 2
    assert np.abs(u.simplex_grads - dg).max() <= (1 / 16) * 0.5


def test_refine_cell_noop_in_e():
    dom = Domain.unit_cube(2, 1)
    u = init_map(dom, BoundaryData.affine(np.eye(2)))
    assert refine_cell(u, 0, 0.0) is u


def test_refine_cell_first_split_zero():
    dom = Domain.unit_cube(2, 1)
    u = init_map(dom, BoundaryData.zero(2, 2))
    v = refine_cell(u, 0, 0.0, cutoff_fraction=0.1)
    s = mc.singular_values(v.grads)
    split_pair = np.all(np.abs(s - [0.0, 1.0]) <= 1e-9, axis=1)
    vol = v.cell_volumes
    assert vol[split_pair].sum() / vol.sum() >= 1 - 2 * 0.1
    assert np.abs(mean_gradient(v)).max() <= 1e-8
    assert s[:, -1].max() <= 1 + 1e-9
    b = u.domain.on_boundary(v.simplices.reshape(-1, 2))
    assert np.abs(v.vertex_values().reshape(-1, 2)[b]).max() <= 1e-14


def test_refine_cell_full_laminate_3d_rectangular():
    dom = Domain.unit_cube(3, 1)
    G = np.array([[0.2, 0.0, 0.1], [0.0, -0.3, 0.0]])
    u = init_map(dom, BoundaryData.affine(G))
    v = refine_cell(u, 0, 0.05, levels=None, seed=3)
    assert np.allclose(mean_gradient(v), G, atol=1e-8)
    assert mc.singular_values(v.grads)[:, -1].max() <= 1 + 1e-9
    assert v.cell_volumes.sum() == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("n", [2, 3])
def test_cell_budget_overshoot_is_bounded(n):
    dom = Domain.unit_cube(n, 2)
    u = init_map(dom, BoundaryData.affine(np.diag([0.3, 0.1, 0.0][:n])[:2]))
    rng = np.random.default_rng(0)
    for cap in (4, 40, 400, 4000):
        params = [RefineParams(0.02, 0.005, 0.1, cap)] * u.n_cells
        cells, grads, *_ = realize_laminates(u.cells, u.grads, u.offsets, params, rng)
        assert len(grads) <= 4 * cap * u.n_cells
        assert mc.singular_values(grads)[:, -1].max() <= 1 + 1e-9


def test_coverage_report_trivial_cases():
    dom = Domain.unit_cube(2, 2)
    rep = coverage_report(init_map(dom, BoundaryData.affine(np.eye(2))), 1.0, 0.05)
    assert rep.coverage == 1.0
    rep0 = coverage_report(init_map(dom, BoundaryData.zero(2, 2)), 1.0, 0.05)
    assert rep0.coverage == 0.0 and rep0.mean_dist == pytest.approx(np.sqrt(2))


def test_small_build_invariants():
    dom = Domain.unit_cube(2, 4)
    g = BoundaryData.affine(np.array([[0.3, 0.1], [0.0, 0.2]]), [0.5, -1.0])
    means = []
    for depth in (1, 2, 3):
        cfg = BuildConfig(c=1.5, max_depth=depth, coverage_target=1.0, max_cells=6000, seed=7)
        u, rep = build(dom, g, cfg)
        assert rep.max_lambda <= 1.5 * (1 + 1e-9)
        assert rep.trace_error <= 1e-12
        assert np.allclose(mean_gradient(u), g.gradient, atol=1e-8)
        means.append(rep.mean_dist)
    assert means[0] >= means[1] >= means[2]


def test_build_deterministic():
    dom = Domain.unit_cube(2, 2)
    cfg = BuildConfig(max_depth=2, max_cells=5000, seed=11)
    u1, _ = build(dom, BoundaryData.zero(2, 2), cfg)
    u2, _ = build(dom, BoundaryData.zero(2, 2), cfg)
    assert np.array_equal(u1.simplices, u2.simplices) and np.array_equal(u1.grads, u2.grads)


def test_build_rejects_infeasible():
    with pytest.raises(InfeasibleScaleError):
        build(Domain.unit_cube(2, 2), BoundaryData.affine(np.eye(2)), BuildConfig(c=0.5))


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        BuildConfig(cutoff_fraction=0.6)
    with pytest.raises(InvalidArgumentError):
        BuildConfig(delta_schedule=[0.5]).schedule(2)


def test_locate_and_evaluate():
    dom = Domain.unit_cube(2, 3)
    G = np.array([[1.0, 2.0], [0.0, -1.0]])
    u = init_map(dom, BoundaryData(lambda x: x @ G.T, 2))
    pts = np.random.default_rng(0).uniform(size=(100, 2))
    assert np.allclose(u(pts), pts @ G.T)
    assert isinstance(u, PwAffineMap) and isinstance(u.cells, PolyBatch)
