"""Piecewise-affine solutions of the prescribed singular value problem.

Construction outline. A cell (convex polytope P with affine gradient A,
lambda_max(A) < 1) is refined by realising the product laminate of
:func:`hulls.split_plan` directly as a continuous piecewise-affine map

    u = A x + c + sum_j a_j v_j,
    v_j = min(psi_j(nu_j . x), t_{j-1}),
    t_0 = min_f k_f dist_f(x),  t_j = kappa_j (t_{j-1} - psi_j)_+,

where psi_j is a nonnegative zigzag whose slopes are the laminate weights
and a_j (x) nu_j is the rank-one jump of level j. On the boundary of P all
v_j vanish, so continuity and traces are untouched. Wherever every psi_j
is active the gradient is a leaf of the laminate; elsewhere ("boundary
layer") it is A + partial sums + a_j (x) grad t_{j-1}, and the cutoff slopes
k_f, kappa_j are chosen so those gradients stay below a prescribed
lambda_max bound inside Int Rco E. Layer cells are refined again in later
passes with a smaller delta.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import hulls
from . import matrixcore as mc
from ._validation import (
    InclusionViolationError,
    InfeasibleScaleError,
    InvalidArgumentError,
    check_matrix,
    check_positive,
)
from .mesh import Domain, PwAffineMap, affine_from_vertices, kuhn_simplices
from .polytope import PolyBatch

log = logging.getLogger(__name__)

INCLUSION_TOL = 1e-9


# ------------------------------------------------------------ boundary data


@dataclass(frozen=True)
class BoundaryData:
    """Boundary datum g: R^n -> R^N, evaluated on arrays of points (M, n)."""

    fn: Callable[[np.ndarray], np.ndarray]
    N: int
    gradient: Optional[np.ndarray] = None  # set when g is affine
    offset: Optional[np.ndarray] = None
    lipschitz: Optional[float] = None
    name: str = "g"

    @property
    def is_affine(self) -> bool:
        return self.gradient is not None

    def __call__(self, pts) -> np.ndarray:
        return self.fn(np.atleast_2d(np.asarray(pts, dtype=float)))

    @classmethod
    def zero(cls, N: int, n: int) -> "BoundaryData":
        return cls.affine(np.zeros((N, n)), name="zero")

    @classmethod
    def affine(cls, gradient, offset=None, name: str = "affine") -> "BoundaryData":
        gradient = check_matrix(gradient, name="gradient")
        N = gradient.shape[0]
        offset = np.zeros(N) if offset is None else np.asarray(offset, dtype=float)

        def fn(pts):
            return pts @ gradient.T + offset

        return cls(fn, N, gradient, offset, float(mc.lambda_max(gradient)), name)

    def scaled(self, factor: float) -> "BoundaryData":
        grad = None if self.gradient is None else factor * self.gradient
        offset = None if self.offset is None else factor * self.offset
        lip = None if self.lipschitz is None else abs(factor) * self.lipschitz
        return BoundaryData(lambda pts: factor * self.fn(pts), self.N, grad, offset, lip, f"{factor:g}*{self.name}")


def lipschitz_estimate(g: BoundaryData, dom: Domain) -> float:
    """sup of lambda_max(Dg) over the vertex interpolant of g on the domain grid."""
    grad = g.gradient
    if grad is not None:
        return float(mc.lambda_max(grad))
    u0 = init_map(dom, g)
    return float(np.max(mc.singular_values(u0.grads)[:, -1]))


def rescale_problem(g: BoundaryData, c: float, dom: Domain | None = None, delta: float = 0.0) -> BoundaryData:
    """Return g / c after checking lambda_max(D(g/c)) <= (1/c) ||Dg|| <= 1 - delta.

    ||Dg|| is the sup of the operator norm; for non-affine g it is taken from
    ``g.lipschitz`` or estimated on the vertex interpolant over ``dom``.
    """
    c = float(c)
    if not np.isfinite(c) or c <= 0:
        raise InfeasibleScaleError(f"scale c must be positive, got {c}")
    lip = g.lipschitz
    if lip is None:
        if dom is None:
            raise InvalidArgumentError("a domain is needed to estimate ||Dg|| for non-affine g")
        lip = lipschitz_estimate(g, dom)
    if c <= lip:
        raise InfeasibleScaleError(f"need c > ||Dg||_Loo; got c = {c:g}, ||Dg||_Loo = {lip:g}")
    if lip / c > 1.0 - delta + 1e-12:
        raise InfeasibleScaleError(
            f"lambda_max(Dg/c) = {lip / c:.6g} exceeds 1 - delta = {1.0 - delta:.6g}"
        )
    return g.scaled(1.0 / c)


# ---------------------------------------------------------------- initial map


def init_map(dom: Domain, g: BoundaryData) -> PwAffineMap:
    """Vertex interpolant of g on the Kuhn triangulation of ``dom``.

    When g is affine the whole box is a single cell.
    """
    grad = g.gradient
    if grad is not None:
        if grad.shape[1] != dom.n:
            raise InvalidArgumentError(f"gradient has {grad.shape[1]} columns, domain dimension is {dom.n}")
        offset = g(np.zeros((1, dom.n)))[0]
        return PwAffineMap(dom, PolyBatch.box(dom.lower, dom.upper), grad[None].copy(), offset[None].copy(), g)
    sims = kuhn_simplices(dom)
    vals = g(sims.reshape(-1, dom.n)).reshape(len(sims), dom.n + 1, g.N)
    grads, offsets = affine_from_vertices(sims, vals)
    return PwAffineMap(dom, PolyBatch.from_simplices(sims), grads, offsets, g)


# ------------------------------------------------------------- refinement


@dataclass
class RefineParams:
    target_delta: float
    layer_delta: float
    cutoff_fraction: float = 0.1
    max_cells: int = 50_000
    levels: Optional[int] = None
    safety: float = 0.9


def _max_slopes(base, amp, dirs, group, n_groups: int, bound, hi: float) -> np.ndarray:
    """Per group, the largest s in [0, hi] with lambda_max(base + s amp (x) dir) <= bound on every member."""
    jumps = np.einsum("ka,ki->kai", amp, dirs)
    bound = np.broadcast_to(np.asarray(bound, dtype=float), (n_groups,))

    def ok(s):
        top = mc.singular_values(base + s[group, None, None] * jumps)[:, -1]
        bad = np.bincount(group, weights=(top > bound[group]).astype(float), minlength=n_groups)
        return bad == 0

    lo = np.zeros(n_groups)
    hi_ = np.full(n_groups, float(hi))
    good0 = ok(lo)
    done = ok(hi_)
    for _ in range(50):
        mid = 0.5 * (lo + hi_)
        good = ok(mid)
        lo = np.where(good, mid, lo)
        hi_ = np.where(good, hi_, mid)
    return np.where(done, float(hi), np.where(good0, lo, 0.0))


@dataclass
class _Plan:
    """Per-cell laminate data, padded to m levels."""

    levels: np.ndarray  # (C,)
    nu: np.ndarray  # (C, m, n)
    amp: np.ndarray  # (C, m, N)
    mu: np.ndarray  # (C, m)
    k: np.ndarray  # (C, K) facet cutoff slopes
    kappa: np.ndarray  # (C, m)
    period: np.ndarray  # (C, m)
    phase: np.ndarray  # (C, m)


def _plan(cells: PolyBatch, grads, params: list[RefineParams], rng: np.random.Generator) -> _Plan:
    C, N, n = grads.shape
    m = min(N, n)
    K = cells.A.shape[1]
    levels = np.zeros(C, dtype=int)
    nu = np.zeros((C, m, n))
    amp = np.zeros((C, m, N))
    mu = np.full((C, m), 0.5)
    for c in range(C):
        order = rng.permutation(m)
        _, steps = hulls.split_plan(grads[c], params[c].target_delta, tol=1e-12, order=order, rng=rng)
        if params[c].levels is not None:
            steps = steps[: params[c].levels]
        levels[c] = len(steps)
        for j, st in enumerate(steps):
            nu[c, j], amp[c, j], mu[c, j] = st.direction, st.amplitude, st.mu
    bound = np.array([1.0 - p.layer_delta for p in params])
    safety = np.array([p.safety for p in params])

    # facet cutoffs: layer gradient A - k_f a_1 (x) n_f
    cc, ff = np.nonzero(cells.fmask & (levels > 0)[:, None])
    k = np.zeros((C, K))
    if len(cc):
        item = np.arange(len(cc))
        s = _max_slopes(grads[cc], amp[cc, 0], -cells.A[cc, ff], item, len(cc), bound[cc], 64.0)
        k[cc, ff] = s * safety[cc]
    has_zero = np.array([np.any(k[c][cells.fmask[c]] <= 0) for c in range(C)])
    levels[has_zero] = 0

    # running cutoff slopes along every path of the product laminate
    kappa = np.zeros((C, m))
    pc, pf = np.nonzero(cells.fmask & (levels > 0)[:, None])
    pg = grads[pc].copy()
    tg = -k[pc, pf, None] * cells.A[pc, pf]
    for j in range(1, m):
        live = levels[pc] > j
        pc, pg, tg = pc[live], pg[live], tg[live]
        if not len(pc):
            break
        rep_c = np.repeat(pc, 2)
        rep_g = np.repeat(pg, 2, axis=0)
        rep_t = np.repeat(tg, 2, axis=0)
        plus = np.tile([True, False], len(pc))
        s = np.where(plus, 1.0 - mu[rep_c, j - 1], -mu[rep_c, j - 1])
        jump = np.einsum("ka,ki->kai", amp[rep_c, j - 1], nu[rep_c, j - 1])
        pg = rep_g + s[:, None, None] * jump
        h = rep_t - s[:, None] * nu[rep_c, j - 1]
        kap = _max_slopes(pg, amp[rep_c, j], h, rep_c, C, bound, 8.0) * safety
        stop = (kap <= 1e-9) & (levels > j)
        levels[stop] = j
        kappa[:, j] = kap
        pc = rep_c
        tg = kap[rep_c, None] * h

    # periods from the cutoff width, then capped by the cell budget
    inr = cells.inradius_estimate()
    L = np.maximum(levels, 1)
    width = np.array([p.cutoff_fraction for p in params]) * inr / (n * L)
    kmin = np.where(cells.fmask, k, np.inf).min(axis=1)
    slopes = np.cumprod(np.concatenate([kmin[:, None], kappa[:, 1:]], axis=1), axis=1)
    period = width[:, None] * slopes / (mu * (1.0 - mu))
    extents = np.stack([np.subtract(*cells.proj_range(nu[:, j])[::-1]) for j in range(m)], axis=1)
    period = np.where(np.arange(m)[None, :] < levels[:, None], period, 1.0)
    live = np.arange(m)[None, :] < levels[:, None]
    # cells produced per facet region and strip intersection, measured on the
    # unit square and cube. A piece straddling a period boundary is cut in
    # two, hence the +1 per level.
    per_strip = 0.6 if n == 2 else 1.8
    facets = cells.fmask.sum(axis=1)
    budget = np.array([p.max_cells for p in params], dtype=float)

    def estimate(per):
        s = np.where(live, np.maximum(extents / per, 1.0) + 1.0, 1.0)
        return per_strip * facets * np.prod(s, axis=1)

    # drop levels while even the coarsest laminate (one period per cell) is over budget
    while True:
        coarse = per_strip * facets * 2.0 ** levels
        over = (levels > 0) & (coarse > budget)
        if not over.any():
            break
        levels[over] -= 1
        live = np.arange(m)[None, :] < levels[:, None]
    L = np.maximum(levels, 1)
    cap = np.maximum(extents, 1e-300)
    for _ in range(4):
        est = estimate(period)
        scale = np.where(est > budget, (est / budget) ** (1.0 / L), 1.0)
        period = np.minimum(period * scale[:, None], cap)
    phase = rng.uniform(0.0, 1.0, (C, m)) * period
    return _Plan(levels, nu, amp, mu, k, kappa, period, phase)


def realize_laminates(cells: PolyBatch, grads, offsets, params: list[RefineParams], rng: np.random.Generator):
    """Refine a batch of convex cells, each along its own product laminate.

    Returns (cells, grads, offsets, owner, is_leaf) for the new cells, where
    ``owner`` is the index of the refined input cell.
    """
    grads = np.asarray(grads, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    C, N, n = grads.shape
    plan = _plan(cells, grads, params, rng)
    out = []
    idle = np.nonzero(plan.levels == 0)[0]
    if len(idle):
        out.append((cells.take(idle), grads[idle], offsets[idle], idle, np.ones(len(idle), bool)))
    active = np.nonzero(plan.levels > 0)[0]
    if not len(active):
        return _gather(out, n)

    # level 0: split each cell into the regions where one facet term realises the cutoff
    K = cells.A.shape[1]
    cid, fid = np.nonzero(cells.fmask[active])
    cid = active[cid]
    pieces = cells.take(cid)
    A, b, k = cells.A, cells.b, plan.k
    for r in range(1, K):
        gid = (fid + r) % K
        valid = cells.fmask[cid, gid]
        gg = -k[cid, fid, None] * A[cid, fid] + k[cid, gid, None] * A[cid, gid]
        cc = -k[cid, fid] * b[cid, fid] + k[cid, gid] * b[cid, gid]
        gg = np.where(valid[:, None], gg, 0.0)
        cc = np.where(valid, cc, -1.0)
        pieces, keep = pieces.clip(gg, cc)
        cid, fid = cid[keep], fid[keep]
    pg = grads[cid].copy()
    po = offsets[cid].copy()
    tg = -k[cid, fid, None] * A[cid, fid]
    to = -k[cid, fid] * b[cid, fid]

    j = 0
    while len(pieces):
        nu, amp, mu = plan.nu[cid, j], plan.amp[cid, j], plan.mu[cid, j]
        p, ph = plan.period[cid, j], plan.phase[cid, j]
        lo_p, hi_p = pieces.proj_range(nu)
        m_lo = np.floor((lo_p - ph) / p).astype(int)
        m_hi = np.floor((hi_p - ph) / p).astype(int)
        cnt = 2 * (m_hi - m_lo + 1)
        par = np.repeat(np.arange(len(pieces)), cnt)
        h = 2 * m_lo[par] + np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        first = h % 2 == 0
        pp, mm, nn_, phh = p[par], mu[par], nu[par], ph[par]
        base = (h // 2) * pp
        lo = np.where(first, base, base + mm * pp)
        hi = np.where(first, base + mm * pp, base + pp)
        slope = np.where(first, 1.0 - mm, -mm)
        c0 = np.where(first, -(1.0 - mm) * base, mm * (base + pp))

        ch, keep = pieces.take(par).clip(-nn_, lo + phh)
        sel = keep
        ch, keep = ch.clip(nn_[sel], -(hi[sel] + phh[sel]))
        sel = sel[keep]
        par, slope, c0 = par[sel], slope[sel], c0[sel]
        nsel, phs = nn_[sel], phh[sel]
        psi_g = slope[:, None] * nsel
        psi_c = c0 - slope * phs
        diff_g = psi_g - tg[par]
        diff_c = psi_c - to[par]

        layer, kl = ch.clip(-diff_g, -diff_c)
        lp = par[kl]
        lg = pg[lp] + np.einsum("ka,ki->kai", amp[lp], tg[lp])
        lo_ = po[lp] + amp[lp] * to[lp, None]
        if len(kl):
            out.append((layer, lg, lo_, cid[lp], np.zeros(len(kl), bool)))

        inner, ki = ch.clip(diff_g, diff_c)
        ip = par[ki]
        ig = pg[ip] + np.einsum("ka,ki->kai", amp[ip], psi_g[ki])
        io = po[ip] + amp[ip] * psi_c[ki, None]
        icid = cid[ip]
        last = plan.levels[icid] == j + 1
        if last.any():
            sel = np.nonzero(last)[0]
            out.append((inner.take(sel), ig[sel], io[sel], icid[sel], np.ones(len(sel), bool)))
        sel = np.nonzero(~last)[0]
        kap = plan.kappa[icid[sel], j + 1] if len(sel) else np.zeros(0)
        pieces = inner.take(sel)
        cid = icid[sel]
        pg, po = ig[sel], io[sel]
        tg = kap[:, None] * (tg[ip[sel]] - psi_g[ki[sel]])
        to = kap * (to[ip[sel]] - psi_c[ki[sel]])
        j += 1
    return _gather(out, n)


def _gather(out, n):
    cells = PolyBatch.concat([o[0] for o in out])
    grads = np.concatenate([o[1] for o in out])
    offs = np.concatenate([o[2] for o in out])
    owner = np.concatenate([o[3] for o in out])
    leaf = np.concatenate([o[4] for o in out])
    order = np.argsort(owner, kind="stable")
    return cells.take(order), grads[order], offs[order], owner[order], leaf[order]


def _replace_cells(u: PwAffineMap, idx: np.ndarray, new) -> PwAffineMap:
    cells, grads, offs, _, _ = new
    keep = np.setdiff1d(np.arange(u.n_cells), idx)
    return PwAffineMap(
        u.domain,
        PolyBatch.concat([u.cells.take(keep), cells]),
        np.concatenate([u.grads[keep], grads]),
        np.concatenate([u.offsets[keep], offs]),
        u.boundary_data,
    )


def _check_inclusion(grads: np.ndarray) -> np.ndarray:
    top = mc.singular_values(grads)[..., -1]
    if np.any(top > 1.0 + INCLUSION_TOL):
        raise InclusionViolationError(f"cell gradient has lambda_max = {np.max(top):.12g} > 1")
    return top


def refine_cell(
    u: PwAffineMap,
    simplex_id: int,
    target_delta: float,
    cutoff_fraction: float = 0.1,
    layer_delta: float | None = None,
    levels: int | None = 1,
    max_cells: int = 50_000,
    seed: int = 0,
) -> PwAffineMap:
    """Refine the cell owning ``simplex_id``.

    By default only the first split of the laminate is realised, so the
    patch gradient takes the two values of that split away from the
    boundary layer; ``levels=None`` realises the whole product laminate.
    ``layer_delta`` sets the lambda_max bound 1 - layer_delta kept in the
    boundary layer (default: half of target_delta, or 0.01 when
    target_delta is 0). Levels that cannot be realised under that bound
    are dropped.
    """
    if not 0.0 < cutoff_fraction < 0.5:
        raise InvalidArgumentError(f"cutoff_fraction must lie in (0, 1/2), got {cutoff_fraction}")
    cell = int(u.simplex_cell[simplex_id])
    grad = u.grads[cell]
    top = float(_check_inclusion(grad))
    if hulls.member(hulls.HullSetSpec("E_delta", target_delta), grad, 1e-12):
        return u
    if layer_delta is None:
        layer_delta = 0.5 * target_delta if target_delta > 0 else 0.01
    if top > 1.0 - target_delta:
        target_delta = max(0.0, 1.0 - top)
    params = RefineParams(target_delta, layer_delta, cutoff_fraction, max_cells, levels)
    rng = np.random.default_rng(seed)
    idx = np.array([cell])
    new = realize_laminates(u.cells.take(idx), u.grads[idx], u.offsets[idx], [params], rng)
    return _replace_cells(u, idx, new)


# --------------------------------------------------------------- reporting


@dataclass
class CoverageReport:
    coverage: float
    band_fractions: tuple
    max_lambda: float
    trace_error: float
    passes: int
    cells: int
    simplices: int
    mean_dist: float
    history: list = field(default_factory=list)
    status: str = "ok"

    def as_rows(self) -> list[tuple[str, float]]:
        rows = [
            ("coverage", self.coverage),
            ("band_0_eps", self.band_fractions[0]),
            ("band_eps_2eps", self.band_fractions[1]),
            ("band_2eps_inf", self.band_fractions[2]),
            ("max_lambda", self.max_lambda),
            ("trace_error", self.trace_error),
            ("mean_dist", self.mean_dist),
            ("passes", float(self.passes)),
            ("cells", float(self.cells)),
            ("simplices", float(self.simplices)),
        ]
        rows += [(f"coverage_pass_{i}", c) for i, c in enumerate(self.history)]
        return rows


def cell_distances(u: PwAffineMap, c: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    s = mc.singular_values(u.grads / c)
    return np.sqrt(np.sum((s - 1.0) ** 2, axis=1)), s[:, -1]


def trace_error(u: PwAffineMap, g: BoundaryData | None) -> float:
    """Max |u - g| over mesh vertices lying on the box boundary."""
    if g is None:
        return 0.0
    verts = u.simplices.reshape(-1, u.n)
    vals = u.vertex_values().reshape(-1, u.N)
    mask = u.domain.on_boundary(verts)
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(vals[mask] - g(verts[mask]))))


def coverage_report(u: PwAffineMap, c: float, eps: float, g: BoundaryData | None = None) -> CoverageReport:
    """Volume fractions of dist(Du/c, E) in the bands [0,eps], (eps,2eps], (2eps,inf)."""
    dist, top = cell_distances(u, c)
    vol = u.cell_volumes
    total = vol.sum()
    bands = (
        float(vol[dist <= eps].sum() / total),
        float(vol[(dist > eps) & (dist <= 2 * eps)].sum() / total),
        float(vol[dist > 2 * eps].sum() / total),
    )
    return CoverageReport(
        coverage=bands[0],
        band_fractions=bands,
        max_lambda=float(top.max()),
        trace_error=trace_error(u, g),
        passes=0,
        cells=u.n_cells,
        simplices=len(u.simplices),
        mean_dist=float(np.dot(vol, dist) / total),
    )


# ------------------------------------------------------------------ build


@dataclass
class BuildConfig:
    c: float = 1.0
    eps: float = 0.05
    max_depth: int = 6
    cutoff_fraction: float = 0.1
    delta_schedule: Optional[Sequence[float]] = None
    seed: int = 0
    coverage_target: float = 0.9
    max_cells: Optional[int] = None  # per pass; None picks a default by dimension

    def __post_init__(self):
        check_positive(self.eps, "eps")
        check_positive(self.c, "c")
        if not 0.0 < self.cutoff_fraction < 0.5:
            raise InvalidArgumentError("cutoff_fraction must lie in (0, 1/2)")
        if int(self.max_depth) != self.max_depth or self.max_depth < 1:
            raise InvalidArgumentError("max_depth must be a positive integer")
        if self.delta_schedule is not None:
            d = np.asarray(self.delta_schedule, dtype=float)
            if np.any(d <= 0) or np.any(np.diff(d) >= 0) or np.any(d >= 1):
                raise InvalidArgumentError("delta_schedule must be strictly decreasing in (0, 1)")

    def cell_budget(self, n: int) -> int:
        if self.max_cells is not None:
            return int(self.max_cells)
        return 120_000 if n <= 2 else 250_000

    def schedule(self, m: int) -> np.ndarray:
        """delta_k; leaves at delta_k sit at distance delta_k * sqrt(m) from E."""
        if self.delta_schedule is not None:
            d = np.asarray(self.delta_schedule, dtype=float)
        else:
            d0 = 0.9 * self.eps / np.sqrt(m)
            d = d0 * 0.5 ** np.arange(self.max_depth + 1)
        if d[-1] * np.sqrt(m) > self.eps:
            raise InvalidArgumentError("delta_schedule must decrease below eps / sqrt(min(N, n))")
        return d


def build(dom: Domain, g: BoundaryData, cfg: BuildConfig) -> tuple[PwAffineMap, CoverageReport]:
    """Refine the interpolant of g/c until dist(Dv, E) <= eps on the target volume fraction.

    Returns u = c v and its coverage report (``status`` is ``"partial"`` if
    ``max_depth`` passes did not reach ``coverage_target``).
    """
    m = min(dom.n, g.N)
    deltas = cfg.schedule(m)
    gv = rescale_problem(g, cfg.c, dom)
    v = init_map(dom, gv)
    top = mc.singular_values(v.grads)[:, -1]
    if np.any(top > 1.0 - deltas[0] + 1e-12):
        raise InfeasibleScaleError(
            f"lambda_max(Dg/c) = {top.max():.6g} exceeds 1 - delta_0 = {1.0 - deltas[0]:.6g}"
        )
    rng = np.random.default_rng(cfg.seed)
    history = []
    passes = 0
    for k in range(cfg.max_depth):
        dist, top = cell_distances(v)
        vol = v.cell_volumes
        cov = float(vol[dist <= cfg.eps].sum() / vol.sum())
        history.append(cov)
        if cov >= cfg.coverage_target:
            break
        todo = np.nonzero(dist > cfg.eps)[0]
        if len(todo) == 0:
            break
        # each cell gets a share of the pass budget proportional to its volume
        budget = (cfg.cell_budget(dom.n) * vol[todo] / vol[todo].sum()).astype(int)
        _check_inclusion(v.grads[todo])
        chosen, params = [], []
        for idx, cap in zip(todo, budget):
            usable = deltas[k:][deltas[k:] <= 1.0 - top[idx] + 1e-12]
            if cap < 4 or len(usable) == 0:
                continue
            target = float(usable[0])
            chosen.append(idx)
            params.append(RefineParams(target, 0.25 * target, cfg.cutoff_fraction, int(cap)))
        if not chosen:
            break
        chosen = np.array(chosen)
        new = realize_laminates(v.cells.take(chosen), v.grads[chosen], v.offsets[chosen], params, rng)
        v = _replace_cells(v, chosen, new)
        passes += 1
        log.info("pass %d: %d cells", passes, v.n_cells)
    u = v.scaled(cfg.c)
    rep = coverage_report(u, cfg.c, cfg.eps, g)
    rep.passes = passes
    history.append(rep.coverage)
    rep.history = history
    rep.status = "ok" if rep.coverage >= cfg.coverage_target else "partial"
    return u, rep
