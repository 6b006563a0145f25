"""End-to-end acceptance checks, one test per criterion, at the stated tolerances."""

import time

import numpy as np
import pytest

from svinclusion import cli
from svinclusion import dsolution as ds
from svinclusion import energy as en
from svinclusion import hulls
from svinclusion import matrixcore as mc
from svinclusion.builder import BoundaryData, BuildConfig, build, cell_distances
from svinclusion.mesh import Domain

H_SEQ = 0.02 * 0.5 ** np.arange(6)
PAIRS = [(1, 2), (2, 2), (2, 3), (3, 3), (2, 4)]


@pytest.fixture(scope="module")
def solutions():
    """The three construction runs shared by several criteria, with their wall time."""
    runs = {}
    t0 = time.perf_counter()
    runs["zero"] = build(Domain.unit_cube(2, 32), BoundaryData.zero(2, 2), BuildConfig(c=1.0, max_depth=6))
    g = BoundaryData.affine(np.diag([0.5, 0.3]), [0.1, -0.2])
    runs["affine"] = build(Domain.unit_cube(2, 32), g, BuildConfig(c=1.0, max_depth=6))
    runs["rect"] = build(Domain.unit_cube(3, 16), BoundaryData.zero(2, 3),
                         BuildConfig(c=1.0, max_depth=6, coverage_target=0.85))
    runs["seconds"] = time.perf_counter() - t0
    runs["affine_g"] = g
    return runs


def test_criterion_1_hull_characterisation(report_criterion):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    bad = 0
    for N, n in PAIRS:
        z = rng.standard_normal((10_000, N, n))
        top = np.sqrt(np.linalg.eigvalsh(np.swapaxes(z, 1, 2) @ z)[:, -1])
        q = z * (rng.uniform(0.0, 2.0, 10_000) / top)[:, None, None]
        oracle = np.sqrt(np.maximum(np.linalg.eigvalsh(np.swapaxes(q, 1, 2) @ q)[:, -1], 0.0)) <= 1.0 + 1e-9
        bad += int(np.sum(hulls.member(hulls.HullSetSpec("RcoE"), q, 1e-9) != oracle))
    dt = time.perf_counter() - t0
    ok = report_criterion(1, bad == 0 and dt < 5.0, f"{bad} disagreements over 5x10^4 matrices, {dt:.2f} s")
    assert ok


def test_criterion_2_laminate_splitter(report_criterion):
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst = {"bary": 0.0, "rank": 0.0, "leaf": 0.0}
    too_many = 0
    for delta in (0.0, 0.05, 0.2):
        for k, shape in enumerate(PAIRS):
            count = 2000
            qs = hulls.sample_ball(rng.uniform(0.0, 1.0 - delta, count), shape, rng)
            lams = hulls.rank_one_split(qs, delta)
            reps = hulls.validate_laminates(lams, qs)
            leaves = np.array([leaf.matrix for lam in lams for leaf in lam.leaves()])
            worst["leaf"] = max(worst["leaf"], float(np.abs(mc.singular_values(leaves) - (1 - delta)).max()))
            worst["bary"] = max(worst["bary"], max(r.barycenter_error for r in reps))
            worst["rank"] = max(worst["rank"], max(r.rank_one_defect for r in reps))
            too_many += sum(r.leaf_count > 2 ** min(shape) for r in reps)
    dt = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-10 and too_many == 0 and dt < 10.0
    report_criterion(2, ok, f"3x10^4 splits, barycenter {worst['bary']:.1e}, rank-one {worst['rank']:.1e}, "
                            f"leaf {worst['leaf']:.1e}, {dt:.2f} s")
    assert ok


def test_criterion_3_singular_value_problem(solutions, report_criterion):
    u0, r0 = solutions["zero"]
    ua, ra = solutions["affine"]
    ur, rr = solutions["rect"]
    # vertex values come from A x + b per cell, so an exact trace shows up as roundoff
    ok = (
        r0.coverage >= 0.9 and r0.trace_error <= 1e-12 and r0.max_lambda <= 1 + 1e-9
        and ra.coverage >= 0.9 and ra.trace_error <= 1e-12 and ra.max_lambda <= 1 + 1e-9
        and rr.coverage >= 0.85 and rr.trace_error <= 1e-12 and rr.max_lambda <= 1 + 1e-9
        and solutions["seconds"] < 300
    )
    report_criterion(3, ok, f"coverage zero {r0.coverage:.4f}, affine {ra.coverage:.4f}, 3x2 {rr.coverage:.4f}; "
                            f"trace {max(r0.trace_error, ra.trace_error, rr.trace_error):.1e}; "
                            f"max lambda {max(r0.max_lambda, ra.max_lambda, rr.max_lambda):.6f}; "
                            f"{solutions['seconds']:.0f} s")
    assert ok


def test_criterion_4_hamilton_jacobi(solutions, report_criterion):
    details, ok = [], True
    for key in ("zero", "affine", "rect"):
        u, _ = solutions[key]
        hj = ds.hj_residuals(u, en.sq_norm(), 1.0)
        frac = hj.fractions()["all"]
        dist, _ = cell_distances(u)
        covered = dist <= 0.05
        proj = float(hj.projection[covered].max()) if covered.any() else 0.0
        ok = ok and frac >= 0.9 and proj <= 1e-6
        details.append(f"{key} {frac:.4f} (projection on covered {proj:.1e})")
    report_criterion(4, ok, "; ".join(details))
    assert ok


def test_criterion_5_d_solution_residual(solutions, report_criterion):
    t0 = time.perf_counter()
    trig = ds.d_residual(ds.trig_map(), en.sq_norm(), ds.TestFunction(10.0), H_SEQ)
    ok_a = ds.decreasing_trend(trig.d_residual) and trig.d_residual[-1] <= 0.1 * trig.d_residual[0]
    u, _ = solutions["zero"]
    built = ds.d_residual(u, en.sq_norm(), ds.TestFunction(100.0), H_SEQ, region=([0.2, 0.2], [0.8, 0.8]))
    ratio = built.error_l1[0] / built.error_l1[-1]
    ok_b = ds.decreasing_trend(built.d_residual) and ratio >= 2.0
    dt = time.perf_counter() - t0
    ok = ok_a and ok_b and dt < 120
    report_criterion(5, ok, f"(a) ratio last/first {trig.d_residual[-1] / trig.d_residual[0]:.3f}; "
                            f"(b) residual {built.d_residual[0]:.3g} -> {built.d_residual[-1]:.3g}, "
                            f"error-tensor L1 drop {ratio:.2f}x; {dt:.1f} s")
    assert ok


def test_criterion_6_derivative_formulas(report_criterion):
    rng = np.random.default_rng(606)
    worst_fd, worst_sym, rank_bad = 0.0, 0.0, 0
    step = 1e-5
    for e in en.h_builtins(2).values():
        p = rng.standard_normal((1000, 2, 2))
        an = en.grad_H(e, p)
        fd = np.zeros_like(p)
        for a in range(2):
            for i in range(2):
                d = np.zeros((2, 2))
                d[a, i] = step
                fd[:, a, i] = (e(p + d) - e(p - d)) / (2 * step)
        rel = np.abs(an - fd).max(axis=(1, 2)) / np.maximum(np.abs(an).max(axis=(1, 2)), 1e-300)
        worst_fd = max(worst_fd, float(rel.max()))
        hess = en.hess_H(e, p).reshape(1000, 4, 4)
        worst_sym = max(worst_sym, float(np.abs(hess - np.swapaxes(hess, 1, 2)).max()))
        rank_bad += int(np.sum(mc.numerical_rank(an) != mc.numerical_rank(p)))
    ok = worst_fd <= 1e-6 and worst_sym <= 1e-6 and rank_bad == 0
    report_criterion(6, ok, f"grad_H vs FD {worst_fd:.1e} relative, hess_H symmetry {worst_sym:.1e}, "
                            f"{rank_bad} rank mismatches")
    assert ok


def test_criterion_7_strong_compatibility(report_criterion):
    quad = ds.quadratic_map()
    q_err = ds.strong_compatibility(quad, ds.empirical_young(quad, H_SEQ))
    trig = ds.trig_map()
    t_err = ds.strong_compatibility(trig, ds.empirical_young(trig, H_SEQ))
    ratios = t_err[1:] / t_err[:-1]
    # "exactly" up to floating-point roundoff of the forward differences
    ok = bool(np.all(q_err <= 1e-10)) and bool(np.all((ratios >= 0.4) & (ratios <= 0.6)))
    report_criterion(7, ok, f"quadratic max error {q_err.max():.1e}; trig ratios "
                            f"{', '.join(f'{r:.3f}' for r in ratios)}")
    assert ok


def test_criterion_8_determinism(tmp_path, report_criterion):
    args = ["solve", "--n", "2", "--N", "2", "--grid", "32", "--c", "1", "--g", "zero", "--eps", "0.05",
            "--seed", "0", "--pixels", "64"]
    codes = [cli.main(args + ["--out", str(tmp_path / name)]) for name in ("a", "b")]
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("mesh.csv", "coverage.csv", "sigma_min.ppm"))
    ok = same and codes == [0, 0]
    size = (tmp_path / "a" / "mesh.csv").stat().st_size
    report_criterion(8, ok, f"mesh.csv ({size / 1e6:.1f} MB), coverage.csv, sigma_min.ppm byte-identical: {same}")
    assert ok
