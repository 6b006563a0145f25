"""Command-line front end: ``svinclusion solve | verify | hull``.

Exit codes: 0 success, 1 invalid input, 2 the computation ran but a
criterion failed (outputs are still written).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsolution as ds
from . import energy as en
from . import hulls
from . import io
from . import matrixcore as mc
from .builder import BoundaryData, BuildConfig, build
from .mesh import Domain

log = logging.getLogger("svinclusion")

EXIT_OK, EXIT_INPUT, EXIT_FAILED = 0, 1, 2


class UsageError(ValueError):
    pass


# -------------------------------------------------------------- options
# (flag dest, config key, type, default)
SOLVE_OPTS = [
    ("n", "domain.n", int, 2),
    ("N", "domain.N", int, 2),
    ("grid", "domain.grid", int, 32),
    ("c", "build.c", float, 1.0),
    ("eps", "build.eps", float, 0.05),
    ("seed", "build.seed", int, 0),
    ("max_depth", "build.max_depth", int, 6),
    ("cutoff_fraction", "build.cutoff_fraction", float, 0.1),
    ("coverage_target", "build.coverage_target", float, 0.9),
    ("max_cells", "build.max_cells", int, None),
    ("g", "build.g", str, "zero"),
    ("pixels", "output.pixels", int, 256),
]
VERIFY_OPTS = [
    ("input", "verify.input", str, "trig"),
    ("energy", "verify.energy", str, "sq_norm"),
    ("h0", "verify.h0", float, 0.02),
    ("steps", "verify.steps", int, 6),
    ("phi_radius", "verify.phi_radius", float, 10.0),
    ("cap", "verify.cap", float, ds.DEFAULT_CAP),
    ("c", "build.c", float, None),
    ("grid", "verify.grid", int, 16),
    ("window", "verify.window", int, 3),
    ("hj_fraction", "verify.hj_fraction", float, 0.9),
    ("seed", "build.seed", int, 0),
]
HULL_OPTS = [
    ("matrix", "hull.matrix", str, None),
    ("query", "hull.query", str, "member"),
    ("delta", "hull.delta", float, 0.0),
    ("eps", "hull.eps", float, 0.25),
    ("N", "domain.N", int, None),
    ("n", "domain.n", int, None),
    ("trials", "hull.trials", int, 200),
    ("seed", "build.seed", int, 0),
]


@dataclass
class RunConfig:
    command: str
    values: dict
    out_dir: Path | None = None
    seed: int = 0
    sources: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for k, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}: line {k}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise UsageError(f"{path}: line {k}: empty key")
        out[key] = value
    return out


def resolve(command: str, args: argparse.Namespace, opts) -> RunConfig:
    """Merge flags over the config file over defaults."""
    conf = read_config_file(args.config) if args.config else {}
    known = {key for _, key, _, _ in opts} | {"output.dir"}
    unknown = sorted(set(conf) - known)
    if unknown:
        raise UsageError(f"unknown config keys for '{command}': {', '.join(unknown)}")
    values, sources = {}, {}
    for dest, key, typ, default in opts:
        flag = getattr(args, dest)
        if flag is not None:
            raw, src = flag, "flag"
        elif key in conf:
            raw, src = conf[key], "config"
        else:
            raw, src = default, "default"
        try:
            values[dest] = None if raw is None else typ(raw)
        except (TypeError, ValueError):
            raise UsageError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None
        sources[dest] = src
    out = io.output_dir(args.out, conf.get("output.dir")) if command != "hull" else None
    return RunConfig(command, values, out, int(values.get("seed") or 0), sources)


def _check_ranges(cfg: RunConfig):
    v = cfg.values
    for key in ("n", "N", "grid", "steps", "max_depth", "pixels", "trials", "window"):
        if v.get(key) is not None and v[key] < 1:
            raise UsageError(f"--{key} must be a positive integer")
    for key in ("c", "eps", "h0", "phi_radius", "cap"):
        if v.get(key) is not None and not (np.isfinite(v[key]) and v[key] > 0):
            raise UsageError(f"--{key} must be positive")
    if v.get("n") is not None and cfg.command == "solve" and v["n"] not in (2, 3):
        raise UsageError("--n must be 2 or 3")


def _add_opts(p: argparse.ArgumentParser, opts):
    for dest, key, typ, default in opts:
        flag = "--" + dest.replace("_", "-")
        p.add_argument(flag, dest=dest, type=str, default=None,
                       help=f"config key {key} (default {default})")


# ------------------------------------------------------------ boundary data


def parse_entries(text: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in text.replace(";", ",").split(",") if t.strip()], dtype=float)
    except ValueError:
        raise UsageError(f"cannot parse matrix entries {text!r}") from None


def _shape(entries: np.ndarray, N, n) -> tuple[int, int]:
    k = len(entries)
    if N and n:
        if N * n != k:
            raise UsageError(f"{k} entries do not fill a {N}x{n} matrix")
        return N, n
    if N:
        if k % N:
            raise UsageError(f"{k} entries are not a multiple of N={N}")
        return N, k // N
    if n:
        if k % n:
            raise UsageError(f"{k} entries are not a multiple of n={n}")
        return k // n, n
    r = int(round(np.sqrt(k)))
    if r * r != k or k == 0:
        raise UsageError(f"{k} entries: give --N/--n for a non-square matrix")
    return r, r


def load_vertex_csv(path, N: int, n: int) -> BoundaryData:
    """g from a CSV of samples ``x0..x{n-1}, g0..g{N-1}``, linearly interpolated."""
    from scipy.interpolate import LinearNDInterpolator

    rows = []
    for k, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        if not raw.strip() or raw.startswith("#"):
            continue
        parts = raw.split(",")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            if not rows:  # column header
                continue
            raise UsageError(f"{path}: row {k}: not numeric") from None
        if len(vals) != n + N:
            raise UsageError(f"{path}: row {k}: expected {n + N} columns, found {len(vals)}")
        rows.append(vals)
    if len(rows) < n + 1:
        raise UsageError(f"{path}: need at least {n + 1} sample rows")
    data = np.array(rows)
    interp = LinearNDInterpolator(data[:, :n], data[:, n:])

    def fn(pts):
        out = interp(pts)
        if np.any(np.isnan(out)):
            raise UsageError(f"{path}: samples do not cover the domain")
        return out

    return BoundaryData(fn, N, name=f"file:{Path(path).name}")


def boundary_from_flag(spec: str, N: int, n: int) -> BoundaryData:
    kind, _, arg = spec.partition(":")
    if kind == "zero":
        return BoundaryData.zero(N, n)
    if kind == "affine":
        entries = parse_entries(arg)
        if len(entries) != N * n:
            raise UsageError(f"affine g needs {N * n} entries for N={N}, n={n}, got {len(entries)}")
        return BoundaryData.affine(entries.reshape(N, n))
    if kind == "file":
        return load_vertex_csv(arg, N, n)
    raise UsageError(f"--g must be zero, affine:<entries> or file:<path>, got {spec!r}")


# ------------------------------------------------------------- commands


def cmd_solve(cfg: RunConfig) -> int:
    v = cfg.values
    n, N = v["n"], v["N"]
    g = boundary_from_flag(v["g"], N, n)
    bcfg = BuildConfig(c=v["c"], eps=v["eps"], max_depth=v["max_depth"], cutoff_fraction=v["cutoff_fraction"],
                       seed=v["seed"], coverage_target=v["coverage_target"], max_cells=v["max_cells"])
    dom = Domain.unit_cube(n, v["grid"])
    u, rep = build(dom, g, bcfg)
    head = io.header_line(v, v["seed"], c=v["c"], N=N, n=n)
    out = cfg.out_dir
    io.write_mesh_csv(out / "mesh.csv", u, head)
    io.write_coverage_csv(out / "coverage.csv", rep, head)
    sig = mc.singular_values(u.simplex_grads)
    img = io.raster(u, sig[:, 0] / v["c"], v["pixels"])
    io.write_ppm(out / "sigma_min.ppm", img, head)
    print(f"coverage={rep.coverage:.4f} max_lambda={rep.max_lambda:.12g} trace_error={rep.trace_error:.3g} "
          f"cells={rep.cells} status={rep.status}")
    print(f"wrote {out / 'mesh.csv'}, {out / 'coverage.csv'}, {out / 'sigma_min.ppm'}")
    return EXIT_OK if rep.status == "ok" else EXIT_FAILED


def _load_input(name: str):
    if name in ds.ANALYTIC_MAPS:
        return ds.ANALYTIC_MAPS[name](), None
    path = Path(name)
    if not path.exists():
        raise UsageError(f"--input {name!r} is neither a builtin ({', '.join(ds.ANALYTIC_MAPS)}) nor a file")
    with open(path) as fh:
        meta = io.parse_header(fh.readline())
    return io.read_mesh_csv(path), meta


def cmd_verify(cfg: RunConfig) -> int:
    v = cfg.values
    u, meta = _load_input(v["input"])
    e = en.energy_from_name(v["energy"], u.N)
    h_seq = v["h0"] * 0.5 ** np.arange(v["steps"])
    rep = ds.d_residual(u, e, ds.TestFunction(v["phi_radius"]), h_seq, v["cap"], v["grid"], v["window"])
    trend = ds.decreasing_trend(rep.d_residual)
    extra = [("d_residual_trend", float(trend))]
    ok = trend
    if meta is not None:
        c = v["c"] if v["c"] is not None else float(meta.get("c", 1.0))
        hj = ds.hj_residuals(u, e, c)
        frac = hj.fractions()["all"]
        # lambda_max(Du) <= c forces det(Du Du^T) <= c^(2N) in every cell
        G = u.grads
        det_max = float(np.linalg.det(G @ np.swapaxes(G, 1, 2)).max())
        det_ok = det_max <= c ** (2 * u.N) * (1.0 + 1e-8)
        hj_ok = frac >= v["hj_fraction"] and det_ok
        err_ok = bool(rep.error_l1[-1] < rep.error_l1[0]) or bool(np.all(rep.error_l1 == 0))
        extra += hj.rows() + [("hj_det_max", det_max), ("hj_det_upper_ok", float(det_ok)),
                              ("hj_pass", float(hj_ok)), ("error_l1_trend", float(err_ok))]
        ok = ok and hj_ok and err_ok
        print(f"HJ: {frac:.4f} of volume within bands (need {v['hj_fraction']}); "
              f"max det(Du Du^T) = {det_max:.6g} (bound {c ** (2 * u.N):.6g})")
    head = io.header_line(v, v["seed"], input=Path(v["input"]).name)
    path = io.write_residual_csv(cfg.out_dir / "residuals.csv", rep, head, extra)
    for h, r, el in zip(rep.h_seq, rep.d_residual, rep.error_l1):
        print(f"h={h:.6g} d_residual={r:.6g} error_l1={el:.6g}")
    print(f"residual trend: {'decreasing' if trend else 'not decreasing'}")
    print(f"wrote {path}")
    return EXIT_OK if ok else EXIT_FAILED


def _yes(b) -> str:
    return "yes" if b else "no"


def cmd_hull(cfg: RunConfig) -> int:
    v = cfg.values
    query, delta = v["query"], v["delta"]
    if not 0.0 <= delta < 1.0:
        raise UsageError("--delta must lie in [0, 1)")
    if query == "approx":
        N, n = v["N"] or 2, v["n"] or 2
        rep = hulls.approximation_property_check([delta], v["eps"], v["trials"], (N, n), seed=v["seed"])[0]
        print(f"delta={rep.delta:g} eps={v['eps']:g} shape={N}x{n}")
        print(f"(1) E_delta, Rco E_delta inside Int Rco E: {_yes(rep.interior_ok)} (margin {rep.interior_margin:.6g})")
        print(f"(2) dist(E_delta, E) <= eps: {_yes(rep.distance_ok)} (max {rep.max_distance:.6g})")
        print(f"(3) Int Rco E probes recovered in Rco E_delta: {_yes(rep.recovery_ok)} "
              f"(margin {rep.recovery_margin:.6g})")
        return EXIT_OK if rep.passed else EXIT_FAILED
    if v["matrix"] is None:
        raise UsageError(f"--matrix is required for --query {query}")
    entries = parse_entries(v["matrix"])
    q = entries.reshape(_shape(entries, v["N"], v["n"]))
    if query == "member":
        verdict = {k: hulls.member(hulls.HullSetSpec(k), q) for k in ("E", "RcoE", "IntRcoE")}
        print(", ".join(f"{k}: {_yes(b)}" for k, b in verdict.items()))
        if delta > 0:
            print(f"E_delta: {_yes(hulls.member(hulls.HullSetSpec('E_delta', delta), q))}, "
                  f"RcoE_delta: {_yes(hulls.member(hulls.HullSetSpec('RcoE_delta', delta), q))}")
        return EXIT_OK
    if query == "split":
        lam = hulls.rank_one_split(q, delta)
        print(lam.render(), end="")
        rep = hulls.validate_laminate(lam, q)
        print(f"leaves={rep.leaf_count} barycenter_error={rep.barycenter_error:.3e} "
              f"rank_one_defect={rep.rank_one_defect:.3e} weight_sum_error={rep.weight_sum_error:.3e}")
        return EXIT_OK if rep.ok() else EXIT_FAILED
    raise UsageError(f"--query must be member, split or approx, got {query!r}")


COMMANDS = {"solve": (cmd_solve, SOLVE_OPTS), "verify": (cmd_verify, VERIFY_OPTS), "hull": (cmd_hull, HULL_OPTS)}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svinclusion", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, opts) in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat 'key = value' file; flags win")
        p.add_argument("--out", default=None, help="output directory (else $SVINCLUSION_OUTPUT_DIR, output.dir, ./out)")
        _add_opts(p, opts)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    fn, opts = COMMANDS[args.command]
    try:
        cfg = resolve(args.command, args, opts)
        _check_ranges(cfg)
        return fn(cfg)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
