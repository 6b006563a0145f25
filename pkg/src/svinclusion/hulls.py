"""Rank-one convex hull machinery for E = {Q : all singular values of Q equal 1}.

The hull characterisation used throughout: Rco E = {lambda_max <= 1} with
interior {lambda_max < 1}. The in-approximation E_delta consists of matrices
whose singular values all equal 1 - delta.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import matrixcore as mc
from ._validation import (
    InvalidArgumentError,
    OutOfHullError,
    check_matrix,
    check_positive,
)

HULL_KINDS = ("E", "E_delta", "RcoE", "IntRcoE", "RcoE_delta")


@dataclass(frozen=True)
class HullSetSpec:
    kind: str
    delta: float = 0.0

    def __post_init__(self):
        if self.kind not in HULL_KINDS:
            raise InvalidArgumentError(f"unknown hull kind {self.kind!r}; expected one of {HULL_KINDS}")
        if not 0.0 <= self.delta < 1.0:
            raise InvalidArgumentError(f"delta must lie in [0, 1), got {self.delta}")


def member(spec: HullSetSpec, q, tol: float = 1e-9):
    """Membership of ``q`` (or a stack of matrices) in the set described by ``spec``."""
    check_positive(tol, "tol")
    s = mc.singular_values(check_matrix(q, allow_batch=True))
    top = s[..., -1]
    if spec.kind == "E":
        out = np.all(np.abs(s - 1.0) <= tol, axis=-1)
    elif spec.kind == "E_delta":
        out = np.all(np.abs(s - (1.0 - spec.delta)) <= tol, axis=-1)
    elif spec.kind == "RcoE":
        out = top <= 1.0 + tol
    elif spec.kind == "IntRcoE":
        out = top <= 1.0 - tol
    else:
        out = top <= 1.0 - spec.delta + tol
    return bool(out) if np.ndim(out) == 0 else out


def dist_to_e(q) -> np.ndarray | float:
    """Euclidean distance of the singular-value vector to (1, ..., 1)."""
    s = mc.singular_values(q)
    d = np.sqrt(np.sum((s - 1.0) ** 2, axis=-1))
    return float(d) if np.ndim(d) == 0 else d


# ---------------------------------------------------------------- laminates


@dataclass
class Laminate:
    """Binary splitting tree. Leaves carry ``matrix``; internal nodes carry children.

    ``weight`` is the absolute probability of the node, so leaf weights sum to 1
    and an internal node's weight equals the sum of its children's.
    """

    weight: float
    matrix: np.ndarray | None = None
    left: "Laminate | None" = None
    right: "Laminate | None" = None
    # rank-one direction a (x) nu of left - right, recorded for realisation
    amplitude: np.ndarray | None = None
    direction: np.ndarray | None = None
    children_fraction: float | None = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def leaves(self) -> Iterator["Laminate"]:
        if self.is_leaf:
            yield self
        else:
            yield from self.left.leaves()
            yield from self.right.leaves()

    def barycenter(self) -> np.ndarray:
        if self.is_leaf:
            return self.matrix
        total = self.left.weight + self.right.weight
        return (self.left.weight * self.left.barycenter() + self.right.weight * self.right.barycenter()) / total

    def depth(self) -> int:
        return 0 if self.is_leaf else 1 + max(self.left.depth(), self.right.depth())

    def render(self, indent: int = 0) -> str:
        pad = "  " * indent
        if self.is_leaf:
            s = mc.singular_values(self.matrix)
            entries = ",".join(f"{v:.6g}" for v in self.matrix.ravel())
            return f"{pad}leaf w={self.weight:.6g} Q=[{entries}] sigma={np.round(s, 10).tolist()}\n"
        a, b = self.left.barycenter(), self.right.barycenter()
        defect = _rank_one_defect(a - b)
        lines = f"{pad}split w={self.weight:.6g} rank-one defect={defect:.3e}\n"
        return lines + self.left.render(indent + 1) + self.right.render(indent + 1)


def _rank_one_defect(diff: np.ndarray) -> float:
    s = mc.singular_values(diff)
    return float(s[-2]) if s.shape[-1] >= 2 else 0.0


@dataclass(frozen=True)
class SplitStep:
    """One level of a product laminate: every node at this level splits the same way.

    Children are ``node + (1 - mu) * a (x) nu`` (weight mu) and
    ``node - mu * a (x) nu`` (weight 1 - mu).
    """

    index: int
    amplitude: np.ndarray
    direction: np.ndarray
    mu: float


def _rotate_clusters(res: mc.SvdResult, rng: np.random.Generator, tol: float = 1e-12) -> mc.SvdResult:
    """Apply a random rotation inside every group of equal singular values.

    U D V^T is unchanged because D is a multiple of the identity on each group.
    """
    u, v = res.u_factor.copy(), res.v_factor.copy()
    s = res.sigma
    start = 0
    while start < len(s):
        stop = start + 1
        while stop < len(s) and abs(s[stop] - s[start]) <= tol * max(1.0, abs(s[start])):
            stop += 1
        if stop - start > 1:
            rot = mc.random_orthogonal(stop - start, rng)
            u[:, start:stop] = u[:, start:stop] @ rot
            v[:, start:stop] = v[:, start:stop] @ rot
        start = stop
    return mc.SvdResult(u, s, v)


def split_plan(q, target_delta: float, tol: float = 1e-10, order: Sequence[int] | None = None,
               rng: np.random.Generator | None = None, svd_result: mc.SvdResult | None = None):
    """Rank-one split steps taking ``q`` to leaves in E_{target_delta}.

    Returns the SVD of ``q`` and the list of steps, one per diagonal index
    whose value is not already at 1 - target_delta. With ``rng`` the
    singular vectors of repeated singular values (which are only defined up
    to rotation) are randomised. ``svd_result`` skips the decomposition.
    """
    if not 0.0 <= target_delta < 1.0:
        raise InvalidArgumentError(f"target_delta must lie in [0, 1), got {target_delta}")
    check_positive(tol, "tol")
    res = mc.svd(check_matrix(q)) if svd_result is None else svd_result
    if rng is not None:
        res = _rotate_clusters(res, rng)
    top = float(res.sigma[-1])
    level = 1.0 - target_delta
    if top > level + tol:
        raise OutOfHullError(
            f"lambda_max(q) = {top:.12g} exceeds 1 - delta = {level:.12g}", lambda_max=top
        )
    m = res.sigma.shape[0]
    indices = range(m) if order is None else order
    steps = []
    for i in indices:
        d = float(res.sigma[i])
        if abs(d - level) <= tol:
            continue
        d = min(d, level)
        u_i = res.u_factor[:, i]
        v_i = res.v_factor[:, i]
        steps.append(SplitStep(index=i, amplitude=2.0 * level * u_i, direction=v_i, mu=(d + level) / (2.0 * level)))
    return res, steps


def rank_one_split(q, target_delta: float = 0.0, tol: float = 1e-10):
    """Laminate with barycenter ``q`` whose leaves all lie in E_{target_delta}.

    Diagonal indices of the SVD are processed in increasing order; each
    index whose value is not already +-(1 - target_delta) is split along
    U e_i (x) V e_i into its two endpoint values. A stack of matrices gives
    a list of laminates (the decompositions are computed in one batch).
    """
    arr = check_matrix(q, allow_batch=True)
    if arr.ndim == 3:
        res = mc.svd(arr)
        return [
            _grow(arr[k], split_plan(arr[k], target_delta, tol, svd_result=mc.SvdResult(
                res.u_factor[k], res.sigma[k], res.v_factor[k]))[1])
            for k in range(len(arr))
        ]
    _, steps = split_plan(arr, target_delta, tol)
    return _grow(arr, steps)


def _grow(q: np.ndarray, steps: list[SplitStep]) -> Laminate:
    def grow(node_matrix: np.ndarray, weight: float, level: int) -> Laminate:
        if level == len(steps):
            return Laminate(weight=weight, matrix=node_matrix)
        st = steps[level]
        jump = np.outer(st.amplitude, st.direction)
        left = grow(node_matrix + (1.0 - st.mu) * jump, weight * st.mu, level + 1)
        right = grow(node_matrix - st.mu * jump, weight * (1.0 - st.mu), level + 1)
        return Laminate(
            weight=weight, left=left, right=right,
            amplitude=st.amplitude, direction=st.direction, children_fraction=st.mu,
        )

    return grow(q.copy(), 1.0, 0)


@dataclass
class LaminateReport:
    barycenter_error: float
    rank_one_defect: float
    weight_sum_error: float
    leaf_count: int

    def ok(self, tol: float = 1e-10) -> bool:
        return max(self.barycenter_error, self.rank_one_defect, self.weight_sum_error) <= tol


def validate_laminate(lam: Laminate, q) -> LaminateReport:
    return validate_laminates([lam], check_matrix(q)[None])[0]


def validate_laminates(lams: Sequence[Laminate], qs) -> list[LaminateReport]:
    """Barycenter, rank-one and weight-sum errors for many laminates at once."""
    qs = check_matrix(qs, allow_batch=True)
    diffs, owners, out = [], [], []

    def walk(node: Laminate, k: int):
        # returns (weighted sum of leaf matrices, total weight) of the subtree
        if node.is_leaf:
            return node.weight * node.matrix, node.weight, [node.weight], 1
        ls, lw, lws, lc = walk(node.left, k)
        rs, rw, rws, rc = walk(node.right, k)
        diffs.append(ls / lw - rs / rw)
        owners.append(k)
        return ls + rs, lw + rw, lws + rws, lc + rc

    for k, lam in enumerate(lams):
        total, _, weights, count = walk(lam, k)
        out.append((total, sum(weights), count))
    worst = np.zeros(len(lams))
    if diffs:
        s = mc.singular_values(np.array(diffs))
        defect = s[:, -2] if s.shape[1] >= 2 else np.zeros(len(diffs))
        np.maximum.at(worst, np.array(owners), defect)
    return [
        LaminateReport(
            barycenter_error=float(np.abs(total - qs[k]).max()),
            rank_one_defect=float(worst[k]),
            weight_sum_error=abs(wsum - 1.0),
            leaf_count=count,
        )
        for k, (total, wsum, count) in enumerate(out)
    ]


# ------------------------------------------------------------ R_i co sampling


def _dedup(mats: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    flat = mats.reshape(len(mats), -1)
    tree = cKDTree(flat)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    drop = np.zeros(len(flat), dtype=bool)
    # keep the lowest index of every cluster
    for i, j in sorted(map(tuple, pairs)):
        if not drop[i]:
            drop[j] = True
    return mats[~drop]


def rco_iterate(atoms, depth: int, samples_per_pair: int = 5) -> np.ndarray:
    """Sampled approximation of R_depth co(atoms).

    At every level each pair (A, B) with rank(A - B) <= 1 contributes the
    points lam*A + (1-lam)*B for ``samples_per_pair`` equispaced lam in [0, 1].
    """
    if int(depth) != depth or depth < 0:
        raise InvalidArgumentError(f"depth must be a nonnegative integer, got {depth}")
    if samples_per_pair < 2:
        raise InvalidArgumentError("samples_per_pair must be at least 2")
    current = _dedup(np.array([check_matrix(a) for a in atoms], dtype=float))
    lams = np.linspace(0.0, 1.0, samples_per_pair)
    for _ in range(int(depth)):
        i, j = np.triu_indices(len(current), k=1)
        diff = current[i] - current[j]
        s = mc.singular_values(diff)
        second = s[:, -2] if s.shape[1] >= 2 else np.zeros(len(diff))
        ok = second <= 1e-9 * np.maximum(1.0, s[:, -1])
        a, b = current[i[ok]], current[j[ok]]
        new = lams[None, :, None, None] * a[:, None] + (1.0 - lams)[None, :, None, None] * b[:, None]
        current = _dedup(np.concatenate([current, new.reshape((-1,) + current.shape[1:])]))
    return current


def contains(points: np.ndarray, q, tol: float = 1e-9) -> bool:
    flat = points.reshape(len(points), -1)
    return bool(np.min(np.linalg.norm(flat - np.asarray(q, float).ravel(), axis=1)) <= tol)


# ------------------------------------------------------ approximation property


@dataclass
class ApproximationReport:
    delta: float
    interior_ok: bool
    interior_margin: float
    distance_ok: bool
    max_distance: float
    recovery_ok: bool
    recovery_margin: float
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.interior_ok and self.distance_ok and self.recovery_ok


def sample_e_delta(delta: float, shape: tuple[int, int], trials: int, rng) -> np.ndarray:
    """Random elements of E_delta: orthogonal conjugations of (1 - delta) [I|0]."""
    N, n = shape
    u = mc.random_orthogonal(N, rng, trials)
    v = mc.random_orthogonal(n, rng, trials)
    return (1.0 - delta) * u @ mc.rect_identity(N, n) @ np.swapaxes(v, 1, 2)


def sample_ball(radius_max: np.ndarray, shape: tuple[int, int], rng) -> np.ndarray:
    """Random matrices with lambda_max equal to the given radii."""
    N, n = shape
    z = rng.standard_normal((len(radius_max), N, n))
    return z * (np.asarray(radius_max) / mc.singular_values(z)[:, -1])[:, None, None]


def approximation_property_check(
    delta_list,
    eps: float,
    trials: int = 200,
    shape: tuple[int, int] = (2, 2),
    probes=None,
    seed: int = 0,
    tol: float = 1e-9,
) -> list[ApproximationReport]:
    """Check the three approximation-property conditions for E_delta.

    (1) samples of E_delta and Rco E_delta lie in Int Rco E;
    (2) dist(Q, E) <= eps for Q in E_delta;
    (3) every probe Q in Int Rco E belongs to Rco E_delta.
    Default probes are random matrices with lambda_max uniform in [0, 0.9].
    """
    check_positive(eps, "eps")
    rng = np.random.default_rng(seed)
    if probes is None:
        probes = sample_ball(rng.uniform(0.0, 0.9, trials), shape, rng)
    probes = check_matrix(probes, allow_batch=True)
    if probes.ndim == 2:
        probes = probes[None]
    interior_probe = member(HullSetSpec("IntRcoE"), probes, tol)
    reports = []
    for delta in delta_list:
        delta = float(delta)
        e_d = sample_e_delta(delta, shape, trials, rng)
        hull_d = sample_ball(rng.uniform(0.0, 1.0 - delta, trials), shape, rng)
        cloud = np.concatenate([e_d, hull_d])
        top = mc.singular_values(cloud)[:, -1]
        interior_ok = bool(np.all(member(HullSetSpec("IntRcoE"), cloud, tol)))
        dists = np.atleast_1d(dist_to_e(e_d))
        in_hull = member(HullSetSpec("RcoE_delta", delta), probes, tol)
        rec_top = mc.singular_values(probes)[:, -1]
        reports.append(
            ApproximationReport(
                delta=delta,
                interior_ok=interior_ok,
                interior_margin=float(1.0 - top.max()),
                distance_ok=bool(dists.max() <= eps),
                max_distance=float(dists.max()),
                recovery_ok=bool(np.all(in_hull | ~interior_probe)),
                recovery_margin=float(np.min((1.0 - delta) - rec_top)),
                details={"probes": int(len(probes)), "expected_distance": delta * np.sqrt(min(shape))},
            )
        )
    return reports
