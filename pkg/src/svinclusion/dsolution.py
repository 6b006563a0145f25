"""Empirical diffuse hessians, D-solution residuals and Hamilton-Jacobi checks.

Hessian samples are forward difference quotients of the gradient field,
stored as arrays X[..., beta, i, j] = (D_j u_beta(x + h e_i) - D_j u_beta(x)) / h.
Samples whose Frobenius norm exceeds ``cap`` are not kept; their weight is
booked as escaped mass, the stand-in for the point at infinity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import energy as en
from . import matrixcore as mc
from ._validation import InvalidArgumentError, InvalidRegionError, OutOfDomainError, check_positive
from .mesh import PwAffineMap

DEFAULT_CAP = 1e6
QUAD_POINTS = 8


# ---------------------------------------------------------------- analytic maps


@dataclass(frozen=True)
class AnalyticMap:
    """A smooth map given with its first and second derivatives.

    ``mask`` optionally marks the points where probes are allowed (for the
    trigonometric map: away from the diagonal, where Du drops rank).
    """

    name: str
    N: int
    n: int
    value: Callable[[np.ndarray], np.ndarray]
    du: Callable[[np.ndarray], np.ndarray]
    d2u: Callable[[np.ndarray], np.ndarray]
    lower: tuple
    upper: tuple
    mask: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, pts) -> np.ndarray:
        return self.value(np.atleast_2d(np.asarray(pts, dtype=float)))

    def gradient(self, pts) -> np.ndarray:
        return self.du(np.atleast_2d(np.asarray(pts, dtype=float)))

    def hessian(self, pts) -> np.ndarray:
        """Classical hessian, shape (M, N, n, n)."""
        return self.d2u(np.atleast_2d(np.asarray(pts, dtype=float)))


def trig_map(lower=(0.1, 0.1), upper=(1.0, 1.0), diagonal_gap: float = 0.05) -> AnalyticMap:
    """u(x) = (cos x1 - cos x2, sin x1 - sin x2), the real form of exp(i x1) - exp(i x2)."""

    def value(x):
        return np.stack([np.cos(x[:, 0]) - np.cos(x[:, 1]), np.sin(x[:, 0]) - np.sin(x[:, 1])], axis=1)

    def du(x):
        s1, s2, c1, c2 = np.sin(x[:, 0]), np.sin(x[:, 1]), np.cos(x[:, 0]), np.cos(x[:, 1])
        return np.stack([np.stack([-s1, s2], axis=1), np.stack([c1, -c2], axis=1)], axis=1)

    def d2u(x):
        s1, s2, c1, c2 = np.sin(x[:, 0]), np.sin(x[:, 1]), np.cos(x[:, 0]), np.cos(x[:, 1])
        z = np.zeros_like(s1)
        first = np.stack([np.stack([-c1, z], 1), np.stack([z, c2], 1)], 1)
        second = np.stack([np.stack([-s1, z], 1), np.stack([z, s2], 1)], 1)
        return np.stack([first, second], axis=1)

    def mask(x):
        return np.abs(x[:, 0] - x[:, 1]) >= diagonal_gap

    return AnalyticMap("trig", 2, 2, value, du, d2u, tuple(lower), tuple(upper), mask)


def quadratic_map(hessian=None, gradient=None, lower=(0.0, 0.0), upper=(1.0, 1.0)) -> AnalyticMap:
    """u_beta(x) = g_beta . x + x^T Q_beta x / 2 with symmetric Q_beta."""
    n = len(lower)
    if hessian is None:
        hessian = np.array([[[1.0, 0.5], [0.5, -2.0]], [[0.0, 1.0], [1.0, 3.0]]])
    q = np.asarray(hessian, dtype=float)
    if q.ndim != 3 or q.shape[1:] != (n, n):
        raise InvalidArgumentError(f"hessian must have shape (N, {n}, {n})")
    q = 0.5 * (q + np.swapaxes(q, 1, 2))
    N = q.shape[0]
    g = np.zeros((N, n)) if gradient is None else np.asarray(gradient, dtype=float)

    def value(x):
        return x @ g.T + 0.5 * np.einsum("mi,bij,mj->mb", x, q, x)

    def du(x):
        return g[None] + np.einsum("bij,mi->mbj", q, x)

    def d2u(x):
        return np.broadcast_to(q, (len(x),) + q.shape).copy()

    return AnalyticMap("quadratic", N, n, value, du, d2u, tuple(lower), tuple(upper))


def affine_map(gradient=None, offset=None, lower=(0.0, 0.0), upper=(1.0, 1.0)) -> AnalyticMap:
    n = len(lower)
    G = np.array([[0.6, 0.2], [-0.1, 0.4]]) if gradient is None else np.asarray(gradient, dtype=float)
    N = G.shape[0]
    c = np.zeros(N) if offset is None else np.asarray(offset, dtype=float)
    return AnalyticMap(
        "affine", N, n,
        lambda x: x @ G.T + c,
        lambda x: np.broadcast_to(G, (len(x), N, n)).copy(),
        lambda x: np.zeros((len(x), N, n, n)),
        tuple(lower), tuple(upper),
    )


ANALYTIC_MAPS = {"trig": trig_map, "quadratic": quadratic_map, "affine": affine_map}


def _bounds(u) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(u, PwAffineMap):
        return np.asarray(u.domain.lower), np.asarray(u.domain.upper)
    return np.asarray(u.lower, dtype=float), np.asarray(u.upper, dtype=float)


def _grad(u, pts: np.ndarray) -> np.ndarray:
    return u.gradient(pts)


# ---------------------------------------------------------------- quotients


def difference_quotient(u, x, h: float) -> np.ndarray:
    """Forward quotient of Du at points x (M, n); shape (M, N, n, n), axis 2 the step direction."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if h == 0 or not np.isfinite(h):
        raise InvalidArgumentError("h must be finite and nonzero")
    lo, hi = _bounds(u)
    n = x.shape[1]
    steps = x[:, None, :] + h * np.eye(n)[None]
    if not (np.all(steps >= lo - 1e-12) and np.all(steps <= hi + 1e-12)
            and np.all(x >= lo - 1e-12) and np.all(x <= hi + 1e-12)):
        raise OutOfDomainError(f"stencil of size {h:g} leaves the domain")
    d0 = _grad(u, x)
    d1 = _grad(u, steps.reshape(-1, n)).reshape(len(x), n, *d0.shape[1:])
    return np.moveaxis(d1 - d0[:, None], 1, 2) / h


# ---------------------------------------------------------------- test functions


@dataclass(frozen=True)
class TestFunction:
    """Radial bump (1 - |X - center|^2 / R^2)_+^2 on hessian space."""

    radius: float
    center: Optional[np.ndarray] = None

    def __post_init__(self):
        check_positive(self.radius, "radius")

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        d = X if self.center is None else X - self.center
        r2 = np.sum(d.reshape(d.shape[:-3] + (-1,)) ** 2, axis=-1) / self.radius**2
        return np.clip(1.0 - r2, 0.0, None) ** 2


# ---------------------------------------------------------------- Young measures


@dataclass
class EmpiricalYoungMeasure:
    """Per probe point and per step h: weighted hessian samples plus escaped mass.

    ``samples`` has shape (H, P, S, N, n, n) and ``weights`` (H, P, S); escaped
    samples carry weight 0 and their mass is in ``escaped`` (H, P).
    ``base`` (P, S, n) are the quotient base points of each probe window.
    """

    points: np.ndarray
    h_seq: np.ndarray
    base: np.ndarray
    samples: np.ndarray
    weights: np.ndarray
    escaped: np.ndarray
    cap: float

    def total_mass(self) -> np.ndarray:
        return self.weights.sum(axis=-1) + self.escaped

    def mean_sample(self) -> np.ndarray:
        """Weighted mean of the retained samples per (h, point), normalised by retained mass."""
        kept = self.weights.sum(axis=-1)
        mean = np.einsum("hps,hps...->hp...", self.weights, self.samples)
        return mean / np.where(kept > 0, kept, 1.0)[..., None, None, None]


def probe_grid(lower, upper, grid: int, window: int, mask=None):
    """Cell centres of a grid over the box and a window x ... x window subgrid of base points per cell."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    n = len(lower)
    if np.any(upper <= lower):
        raise InvalidRegionError("evaluation region is empty")
    if int(grid) != grid or grid < 1 or int(window) != window or window < 1:
        raise InvalidArgumentError("grid and window must be positive integers")
    width = (upper - lower) / grid
    idx = np.stack(np.meshgrid(*[np.arange(grid)] * n, indexing="ij"), axis=-1).reshape(-1, n)
    centers = lower + (idx + 0.5) * width
    sub = np.stack(np.meshgrid(*[np.arange(window)] * n, indexing="ij"), axis=-1).reshape(-1, n)
    offs = ((sub + 0.5) / window - 0.5) * width
    base = centers[:, None, :] + offs[None]
    if mask is not None:
        keep = mask(centers) & np.all(mask(base.reshape(-1, n)).reshape(base.shape[:2]), axis=1)
        centers, base = centers[keep], base[keep]
    if len(centers) == 0:
        raise InvalidRegionError("no probe points left in the evaluation region")
    return centers, base


def _region(u, h_seq, region):
    lo, hi = _bounds(u)
    if region is None:
        margin = 1.01 * float(np.max(h_seq))
        return lo + margin, hi - margin
    rlo, rhi = (np.asarray(r, dtype=float) for r in region)
    if np.any(rlo < lo) or np.any(rhi + np.max(h_seq) > hi + 1e-12):
        raise OutOfDomainError("evaluation region plus stencil must stay inside the domain")
    return rlo, rhi


def _check_h(h_seq) -> np.ndarray:
    h = np.asarray(h_seq, dtype=float).ravel()
    if len(h) == 0 or np.any(h <= 0) or np.any(np.diff(h) >= 0):
        raise InvalidArgumentError("h_seq must be a strictly decreasing sequence of positive steps")
    return h


def empirical_young(u, h_seq, cap: float = DEFAULT_CAP, grid: int = 16, window: int = 3,
                    region=None) -> EmpiricalYoungMeasure:
    """Samples of D^{1,h} Du over a probe grid, one per base point and step."""
    h_seq = _check_h(h_seq)
    check_positive(cap, "cap")
    lo, hi = _region(u, h_seq, region)
    centers, base = probe_grid(lo, hi, grid, window, getattr(u, "mask", None))
    P, S, n = base.shape
    flat = base.reshape(-1, n)
    samples, weights, escaped = [], [], []
    for h in h_seq:
        X = difference_quotient(u, flat, h)
        X = X.reshape((P, S) + X.shape[1:])
        norm = np.sqrt(np.sum(X.reshape(P, S, -1) ** 2, axis=-1))
        out = norm > cap
        w = np.where(out, 0.0, 1.0 / S)
        samples.append(np.where(out[..., None, None, None], 0.0, X))
        weights.append(w)
        escaped.append(out.sum(axis=1) / S)
    eym = EmpiricalYoungMeasure(centers, h_seq, base, np.array(samples), np.array(weights), np.array(escaped), cap)
    if not np.allclose(eym.total_mass(), 1.0, atol=1e-12):
        raise AssertionError("empirical Young measure lost mass")
    return eym


def strong_compatibility(u: AnalyticMap, eym: EmpiricalYoungMeasure) -> np.ndarray:
    """Per h: mean over probe points of the max-norm gap between the mean sample and the
    window average of the classical hessian."""
    P, S, n = eym.base.shape
    classical = u.hessian(eym.base.reshape(-1, n)).reshape(P, S, u.N, n, n)
    # classical hessians are symmetric in (i, j); quotients carry the step on axis i
    errs = []
    for k in range(len(eym.h_seq)):
        diff = np.einsum("ps,ps...->p...", eym.weights[k], eym.samples[k] - classical)
        kept = eym.weights[k].sum(axis=1)
        diff = diff / np.where(kept > 0, kept, 1.0)[:, None, None, None]
        errs.append(float(np.mean(np.max(np.abs(diff).reshape(P, -1), axis=1))))
    return np.array(errs)


# ---------------------------------------------------------------- residuals


def error_tensor(u, e: en.EnergyDensity, x, h: float, quad_points: int = QUAD_POINTS) -> np.ndarray:
    """E_{alpha i beta j}(x) = H_P(Du(x))_{alpha i} int_0^1 [H_P(Du(x) + l dDu_i) - H_P(Du(x))]_{beta j} dl,

    with dDu_i = Du(x + h e_i) - Du(x). Shape (M, N, n, N, n).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if int(quad_points) != quad_points or quad_points < 1:
        raise InvalidArgumentError("quad_points must be a positive integer")
    nodes, wts = np.polynomial.legendre.leggauss(int(quad_points))
    lam, wts = 0.5 * (nodes + 1.0), 0.5 * wts
    X = difference_quotient(u, x, h)  # (M, N, n_step, n)
    d0 = _grad(u, x)
    hp0 = en.grad_H(e, d0)
    n = x.shape[1]
    integral = np.zeros(d0.shape[:1] + (n,) + d0.shape[1:])  # (M, i, N, n)
    for l, w in zip(lam, wts):
        for i in range(n):
            integral[:, i] += w * (en.grad_H(e, d0 + l * h * X[:, :, i, :]) - hp0)
    return np.einsum("mai,mibj->maibj", hp0, integral)


@dataclass
class TaylorCheck:
    defect: np.ndarray  # (M, n)
    constancy: np.ndarray  # (M, n): |H(Du(x + h e_i)) - H(Du(x))| / h
    precondition_ok: np.ndarray


def taylor_identity_check(u, e: en.EnergyDensity, x, h: float, tol: float = 1e-10,
                          quad_points: int = QUAD_POINTS) -> TaylorCheck:
    """Left-hand side of the first-order expansion of H(Du) along each step e_i.

    sum_{beta j} [H_P(Du(x)) + int_0^1 (H_P(Du(x) + l dDu_i) - H_P(Du(x))) dl]_{beta j}
    (D^{1,h}_i D_j u_beta)(x) vanishes when H(Du) is constant along the stencil. Where
    that precondition fails the defect field carries the constancy defect instead.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    nodes, wts = np.polynomial.legendre.leggauss(int(quad_points))
    lam, wts = 0.5 * (nodes + 1.0), 0.5 * wts
    X = difference_quotient(u, x, h)
    d0 = _grad(u, x)
    n = x.shape[1]
    lhs = np.zeros((len(x), n))
    const = np.zeros((len(x), n))
    h0 = en.H(e, d0)
    for i in range(n):
        step = h * X[:, :, i, :]
        avg = sum(w * en.grad_H(e, d0 + l * step) for l, w in zip(lam, wts))
        lhs[:, i] = np.einsum("mbj,mbj->m", avg, X[:, :, i, :])
        const[:, i] = np.abs(en.H(e, d0 + step) - h0) / h
    ok = const <= tol
    return TaylorCheck(np.where(ok, np.abs(lhs), const), const, ok)


@dataclass
class ResidualReport:
    h_seq: np.ndarray
    d_residual: np.ndarray
    error_l1: np.ndarray
    escaped_mass: np.ndarray
    metadata: dict = field(default_factory=dict)

    def rows(self) -> list[tuple[float, str, float]]:
        out = []
        for k, h in enumerate(self.h_seq):
            out.append((float(h), "d_residual", float(self.d_residual[k])))
            out.append((float(h), "error_tensor_l1", float(self.error_l1[k])))
            out.append((float(h), "escaped_mass", float(self.escaped_mass[k])))
        return out


def decreasing_trend(values: Sequence[float], slack: float = 0.1) -> bool:
    """Last value below the first and no step up by more than ``slack`` (relative)."""
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return True
    steps_ok = np.all(v[1:] <= (1.0 + slack) * v[:-1] + 1e-300)
    return bool(steps_ok and v[-1] < v[0]) or bool(np.all(v == 0))


def d_residual(u, e: en.EnergyDensity, phi: TestFunction, h_seq, cap: float = DEFAULT_CAP,
               grid: int = 16, window: int = 3, region=None, rank_tol: float = mc.RANK_TOL,
               quad_points: int = QUAD_POINTS) -> ResidualReport:
    """Per h: mean over probe points of |sum_s w_s Phi(X_s) A_inf(Du(y_s)) : X_s|.

    Each sample is paired with the gradient at its own base point y_s. The
    error-tensor column is the mean Frobenius norm of E at the base points.
    """
    if phi.radius > cap:
        raise InvalidArgumentError("the test function support must lie inside the cap")
    eym = empirical_young(u, h_seq, cap, grid, window, region)
    P, S, n = eym.base.shape
    flat = eym.base.reshape(-1, n)
    du = _grad(u, flat)
    A = en.a_infty(e, du, rank_tol)
    res, errs = [], []
    for k, h in enumerate(eym.h_seq):
        X = eym.samples[k].reshape((P * S,) + eym.samples.shape[3:])
        # X[m, beta, i, j] is the step-i quotient of D_j u_beta; contract wants (beta, i, j)
        val = phi(X)[:, None] * en.contract(A, X)
        val = val.reshape(P, S, -1)
        integrand = np.einsum("ps,psa->pa", eym.weights[k], val)
        res.append(float(np.mean(np.linalg.norm(integrand, axis=1))))
        E = error_tensor(u, e, flat, h, quad_points)
        errs.append(float(np.mean(np.sqrt(np.sum(E.reshape(len(flat), -1) ** 2, axis=1)))))
    meta = {"energy": e.name, "radius": phi.radius, "cap": cap, "grid": grid, "window": window,
            "points": P, "rank_tol": rank_tol}
    return ResidualReport(eym.h_seq, np.array(res), np.array(errs), eym.escaped.mean(axis=1), meta)


# ---------------------------------------------------------------- Hamilton-Jacobi


@dataclass
class HJReport:
    """Per-cell residuals of H(Du) = H([cI|0]), [H_P(Du)]^perp = 0, det(Du Du^T) = c^(2N)."""

    level: np.ndarray
    projection: np.ndarray
    det: np.ndarray
    volumes: np.ndarray
    c: float
    reference: float
    rel_tol: float = 0.15
    N: int = 1

    def thresholds(self) -> tuple[float, float, float]:
        """Relative tolerances scaled by H([cI|0]), 1 and c^(2N)."""
        return (
            self.rel_tol * abs(self.reference) if self.reference else self.rel_tol,
            self.rel_tol,
            self.rel_tol * self.c ** (2 * self.N),
        )

    def passing(self) -> np.ndarray:
        t = self.thresholds()
        return (self.level <= t[0]) & (self.projection <= t[1]) & (self.det <= t[2])

    def fractions(self) -> dict[str, float]:
        t = self.thresholds()
        total = self.volumes.sum()
        return {
            "level": float(self.volumes[self.level <= t[0]].sum() / total),
            "projection": float(self.volumes[self.projection <= t[1]].sum() / total),
            "det": float(self.volumes[self.det <= t[2]].sum() / total),
            "all": float(self.volumes[self.passing()].sum() / total),
        }

    def rows(self) -> list[tuple[str, float]]:
        out = [(f"hj_fraction_{k}", v) for k, v in self.fractions().items()]
        t = self.thresholds()
        out += [("hj_threshold_level", t[0]), ("hj_threshold_projection", t[1]), ("hj_threshold_det", t[2])]
        out += [("hj_max_level", float(self.level.max())), ("hj_max_projection", float(self.projection.max())),
                ("hj_max_det", float(self.det.max()))]
        return out


def hj_residuals(u: PwAffineMap, e: en.EnergyDensity, c: float, rank_tol: float = mc.RANK_TOL,
                 rel_tol: float = 0.15) -> HJReport:
    check_positive(c, "c")
    G = u.grads
    N, n = G.shape[1:]
    ref_mat = c * mc.rect_identity(N, n)
    ref = float(en.H(e, ref_mat))
    level = np.abs(en.H(e, G) - ref)
    proj = mc.orth_complement_projection(en.grad_H(e, G), rank_tol)
    projection = np.max(np.abs(proj).reshape(len(G), -1), axis=1)
    det = np.abs(np.linalg.det(G @ np.swapaxes(G, 1, 2)) - c ** (2 * N))
    return HJReport(level, projection, det, u.cell_volumes, float(c), ref, rel_tol, N)
