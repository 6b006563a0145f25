import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import ConvexHull, HalfspaceIntersection

from svinclusion.polytope import PolyBatch, simplex_volumes


def oracle_clip_volume(lower, upper, g, c):
    """Volume of box ∩ {g.x + c <= 0} via scipy's halfspace intersection."""
    n = len(lower)
    A = np.vstack([-np.eye(n), np.eye(n), g[None]])
    b = np.concatenate([lower, -np.asarray(upper), [c]])
    hs = np.hstack([A, b[:, None]])
    # interior point by linear programming
    from scipy.optimize import linprog

    norm = np.linalg.norm(A, axis=1)
    res = linprog(np.r_[np.zeros(n), -1], A_ub=np.hstack([A, norm[:, None]]), b_ub=-b,
                  bounds=[(None, None)] * n + [(0, None)])
    if res.status != 0 or res.x[-1] <= 1e-9:
        return 0.0
    pts = HalfspaceIntersection(hs, res.x[:n]).intersections
    return ConvexHull(pts).volume


def test_box_and_simplex_volumes():
    box = PolyBatch.box([0, 0, 0], [1, 2, 3])
    assert box.volumes()[0] == pytest.approx(6)
    sims = np.array([[[0, 0], [1, 0], [0, 1]], [[0, 0], [2, 0], [0, 2]]], float)
    pb = PolyBatch.from_simplices(sims)
    assert np.allclose(pb.volumes(), [0.5, 2.0])
    assert np.allclose(simplex_volumes(sims), [0.5, 2.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 3), st.integers(0, 2**31 - 1))
def test_clip_matches_halfspace_oracle(n, seed):
    r = np.random.default_rng(seed)
    g = r.standard_normal(n)
    c = r.uniform(-1, 1) * np.linalg.norm(g)
    box = PolyBatch.box(np.zeros(n), np.ones(n))
    out, keep = box.clip(g[None], np.array([c]))
    want = oracle_clip_volume(np.zeros(n), np.ones(n), g, c)
    got = out.volumes()[0] if len(keep) else 0.0
    assert got == pytest.approx(want, abs=1e-9)


def test_clip_two_sides_partition(rng):
    pb = PolyBatch.from_simplices(np.array([[[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]], float))
    for _ in range(20):
        g = rng.standard_normal(3)
        c = rng.uniform(-0.3, 0.3)
        a, ka = pb.clip(g[None], np.array([c]))
        b, kb = pb.clip(-g[None], np.array([-c]))
        total = (a.volumes().sum() if len(ka) else 0) + (b.volumes().sum() if len(kb) else 0)
        assert total == pytest.approx(1 / 6, abs=1e-12)


def test_triangulation_covers_cell(rng):
    pts = rng.uniform(size=(30, 3))
    pb = PolyBatch.from_points(pts)
    sims, owner = pb.simplices()
    assert np.all(owner == 0)
    assert simplex_volumes(sims).sum() == pytest.approx(ConvexHull(pts).volume, rel=1e-10)


def test_surface_and_inradius():
    box = PolyBatch.box([0, 0], [1, 1])
    assert box.surface_areas()[0] == pytest.approx(4)
    assert box.inradius_estimate()[0] == pytest.approx(0.5)


def test_take_concat_roundtrip():
    sims = np.array([[[0, 0], [1, 0], [0, 1]], [[1, 1], [2, 1], [1, 2]]], float)
    pb = PolyBatch.from_simplices(sims)
    both = PolyBatch.concat([pb.take([1]), PolyBatch.box([0, 0], [1, 1])])
    assert len(both) == 2
    assert np.allclose(both.volumes(), [0.5, 1.0])
    assert np.allclose(pb.take(slice(0, 1)).centroids(), [[1 / 3, 1 / 3]])
