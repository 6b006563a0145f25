import numpy as np
import pytest

from svinclusion import dsolution as ds
from svinclusion import energy as en
from svinclusion._validation import InvalidArgumentError, OutOfDomainError
from svinclusion.builder import BoundaryData, init_map
from svinclusion.mesh import Domain

H_SEQ = 0.02 * 0.5 ** np.arange(6)


def kink_map(jump=np.array([1.0, -2.0])):
    """u with Du = 0 for x1 < 1/2 and Du = jump (x) e1 beyond: a single plane interface."""
    a = np.outer(jump, [1.0, 0.0])

    def du(x):
        return np.where((x[:, 0] >= 0.5)[:, None, None], a, 0.0)

    return ds.AnalyticMap("kink", 2, 2, lambda x: np.maximum(x[:, :1] - 0.5, 0) * jump, du,
                          lambda x: np.zeros((len(x), 2, 2, 2)), (0.0, 0.0), (1.0, 1.0))


def test_quotient_of_affine_is_zero():
    x = np.random.default_rng(0).uniform(0.1, 0.8, (20, 2))
    assert np.all(ds.difference_quotient(ds.affine_map(), x, 0.05) == 0)


def test_quotient_of_quadratic_is_exact_hessian():
    u = ds.quadratic_map()
    x = np.random.default_rng(1).uniform(0.1, 0.8, (50, 2))
    for h in (0.1, 0.01, 1e-3):
        assert np.allclose(ds.difference_quotient(u, x, h), u.hessian(x), atol=1e-10)


def test_quotient_across_interface_scales_like_one_over_h():
    u = kink_map()
    for h in (0.01, 0.001):
        X = ds.difference_quotient(u, np.array([[0.5 - h / 2, 0.5]]), h)
        assert np.abs(X).max() == pytest.approx(2.0 / h)


def test_quotient_errors():
    with pytest.raises(OutOfDomainError):
        ds.difference_quotient(ds.affine_map(), np.array([[0.99, 0.5]]), 0.05)
    with pytest.raises(InvalidArgumentError):
        ds.difference_quotient(ds.affine_map(), np.array([[0.5, 0.5]]), 0.0)


def test_test_function():
    phi = ds.TestFunction(2.0)
    assert phi(np.zeros((2, 2, 2))) == 1.0
    assert phi(np.full((2, 2, 2), 5.0)) == 0.0


def test_young_measure_of_quadratic():
    u = ds.quadratic_map()
    eym = ds.empirical_young(u, H_SEQ, grid=6)
    assert np.all(eym.escaped == 0)
    assert np.allclose(eym.total_mass(), 1.0)
    assert np.all(ds.strong_compatibility(u, eym) <= 1e-9)


def test_escaped_mass_tracks_interface_neighbourhood():
    u = kink_map()
    eym = ds.empirical_young(u, H_SEQ, cap=50.0, grid=16, window=8, region=([0.2, 0.2], [0.8, 0.8]))
    assert np.allclose(eym.total_mass(), 1.0)
    esc = eym.escaped.mean(axis=1)
    # base points within h of x1 = 1/2 escape: a fraction h / 0.6 of the region
    assert np.allclose(esc, H_SEQ / 0.6, atol=2 / 128)
    assert np.all(np.diff(esc) <= 0) and esc[-1] < esc[0]
    far = ds.empirical_young(u, H_SEQ, cap=50.0, grid=4, region=([0.6, 0.2], [0.9, 0.8]))
    assert np.all(far.escaped == 0) and np.all(far.samples == 0)


def test_trig_sample_error_is_first_order():
    u = ds.trig_map()
    err = ds.strong_compatibility(u, ds.empirical_young(u, H_SEQ, grid=8))
    ratios = err[1:] / err[:-1]
    assert np.all((ratios >= 0.4) & (ratios <= 0.6))


def test_d_residual_affine_and_trig():
    rep = ds.d_residual(ds.affine_map(), en.sq_norm(), ds.TestFunction(10.0), H_SEQ)
    assert np.all(rep.d_residual == 0) and np.all(rep.error_l1 == 0)
    trig = ds.d_residual(ds.trig_map(), en.sq_norm(), ds.TestFunction(10.0), H_SEQ)
    assert ds.decreasing_trend(trig.d_residual)
    assert trig.d_residual[-1] <= 0.1 * trig.d_residual[0]
    assert len(trig.rows()) == 3 * len(H_SEQ)


def test_error_tensor():
    x = np.random.default_rng(2).uniform(0.2, 0.7, (30, 2))
    assert np.all(ds.error_tensor(ds.affine_map(), en.sq_norm(), x, 0.01) == 0)
    u = ds.trig_map()
    x = x[np.abs(x[:, 0] - x[:, 1]) > 0.05]
    norms = [np.abs(ds.error_tensor(u, en.h2(), x, h)).max() for h in (0.02, 0.01)]
    assert norms[1] / norms[0] == pytest.approx(0.5, abs=0.05)


def test_taylor_identity_on_level_set_map():
    # |Du|^2 = 1 everywhere for u = (cos x1, sin x1)
    u = ds.AnalyticMap(
        "circle", 2, 2, lambda x: np.stack([np.cos(x[:, 0]), np.sin(x[:, 0])], 1),
        lambda x: np.stack([np.stack([-np.sin(x[:, 0]), 0 * x[:, 0]], 1),
                            np.stack([np.cos(x[:, 0]), 0 * x[:, 0]], 1)], 1),
        lambda x: np.zeros((len(x), 2, 2, 2)), (0.0, 0.0), (1.0, 1.0))
    x = np.random.default_rng(3).uniform(0.1, 0.8, (40, 2))
    chk = ds.taylor_identity_check(u, en.sq_norm(), x, 0.05)
    assert np.all(chk.precondition_ok) and chk.defect.max() <= 1e-8
    aff = ds.taylor_identity_check(ds.affine_map(), en.sq_norm(), x, 0.05)
    assert np.all(aff.defect == 0)


def test_taylor_identity_reports_increment_when_not_level():
    u = ds.quadratic_map()
    x = np.array([[0.3, 0.4]])
    chk = ds.taylor_identity_check(u, en.sq_norm(), x, 0.05)
    inc = np.abs(en.H(en.sq_norm(), u.gradient(x + 0.05 * np.eye(2))) - en.H(en.sq_norm(), u.gradient(x))) / 0.05
    assert np.allclose(chk.defect[0], inc)


def test_hj_residuals_closed_forms():
    dom = Domain.unit_cube(2, 1)
    c, eps = 2.0, 0.1
    exact = ds.hj_residuals(init_map(dom, BoundaryData.affine(c * np.eye(2))), en.sq_norm(), c)
    assert np.allclose([exact.level, exact.projection, exact.det], 0)
    off = ds.hj_residuals(init_map(dom, BoundaryData.affine(np.diag([c * (1 - eps), c]))), en.sq_norm(), c)
    assert off.det[0] == pytest.approx(c**4 * abs((1 - eps) ** 2 - 1))


def test_decreasing_trend():
    assert ds.decreasing_trend([1, 0.5, 0.52, 0.1])
    assert not ds.decreasing_trend([1, 2, 0.1])
    assert not ds.decreasing_trend([1, 1, 1])
    assert ds.decreasing_trend([0, 0, 0])
