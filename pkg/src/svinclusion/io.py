"""Flat-file export and import: mesh CSV, report CSVs and PPM heatmaps.

Every file starts with one ``# key=value ...`` metadata line. Output is a
pure function of its inputs (no timestamps), so identical runs produce
identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import matrixcore as mc
from ._validation import InvalidInputError
from .mesh import Domain, PwAffineMap
from .polytope import PolyBatch

FORMAT_VERSION = "1"


def config_hash(config: Mapping) -> str:
    blob = json.dumps({str(k): str(v) for k, v in config.items()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def header_line(config: Mapping, seed=None, **extra) -> str:
    """``# version=... seed=... config_hash=...`` followed by any extra pairs."""
    from . import __version__

    items = [("version", __version__), ("format", FORMAT_VERSION), ("seed", seed),
             ("config_hash", config_hash(config))]
    items += sorted(extra.items())
    return "# " + " ".join(f"{k}={str(v).replace(' ', '_')}" for k, v in items)


def parse_header(line: str) -> dict:
    if not line.startswith("#"):
        return {}
    out = {}
    for tok in line[1:].split():
        if "=" in tok:
            k, v = tok.split("=", 1)
            out[k] = v
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


# ------------------------------------------------------------------ mesh


def mesh_columns(n: int, N: int) -> list[str]:
    m = min(n, N)
    cols = ["simplex_id"]
    cols += [f"v{v}_x{i}" for v in range(n + 1) for i in range(n)]
    cols += [f"g{a}{i}" for a in range(N) for i in range(n)]
    cols += [f"sigma_{k + 1}" for k in range(m)]
    return cols + ["dist_to_E"]


def write_mesh_csv(path, u: PwAffineMap, header: str) -> Path:
    """One row per simplex: vertices, gradient (row-major), singular values, dist(Du, E)."""
    path = Path(path)
    sims = u.simplices
    G = u.simplex_grads
    M, _, n = sims.shape
    N = G.shape[1]
    sig = mc.singular_values(G)
    dist = np.sqrt(((sig - 1.0) ** 2).sum(axis=1))
    body = np.hstack([sims.reshape(M, -1), G.reshape(M, -1), sig, dist[:, None]])
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        fh.write(",".join(mesh_columns(n, N)) + "\n")
        np.savetxt(fh, np.hstack([np.arange(M)[:, None], body]),
                   fmt=["%d"] + ["%.17g"] * body.shape[1], delimiter=",")
    return path


def read_mesh_csv(path, N: int | None = None) -> PwAffineMap:
    """Rebuild a map from a mesh CSV, one cell per simplex.

    The file stores gradients only, so offsets are set to zero: the result
    reproduces Du exactly but not u itself.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise InvalidInputError(f"{path}: cannot read ({exc})") from exc
    k = 0
    while k < len(lines) and lines[k].startswith("#"):
        k += 1
    if k >= len(lines):
        raise InvalidInputError(f"{path}: missing column header")
    cols = [c.strip() for c in lines[k].split(",")]
    n = sum(1 for c in cols if c.startswith("v0_x"))
    ng = sum(1 for c in cols if c.startswith("g"))
    if n == 0 or ng == 0 or ng % n:
        raise InvalidInputError(f"{path}: line {k + 1}: unrecognised column header")
    N = ng // n if N is None else N
    expected = mesh_columns(n, N)
    if cols != expected:
        bad = next((i for i, (a, b) in enumerate(zip(cols, expected)) if a != b), min(len(cols), len(expected)))
        raise InvalidInputError(f"{path}: line {k + 1}, column {bad + 1}: header does not match the mesh format")
    rows = []
    for r, line in enumerate(lines[k + 1:], start=k + 2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(cols):
            raise InvalidInputError(f"{path}: row {r}: expected {len(cols)} columns, found {len(parts)}")
        vals = []
        for c, p in enumerate(parts):
            try:
                v = float(p)
            except ValueError:
                raise InvalidInputError(f"{path}: row {r}, column {c + 1} ({cols[c]}): not a number: {p!r}") from None
            if not np.isfinite(v):
                raise InvalidInputError(f"{path}: row {r}, column {c + 1} ({cols[c]}): non-finite value")
            vals.append(v)
        rows.append(vals)
    if not rows:
        raise InvalidInputError(f"{path}: no data rows")
    data = np.array(rows)
    nv = (n + 1) * n
    sims = data[:, 1:1 + nv].reshape(-1, n + 1, n)
    grads = data[:, 1 + nv:1 + nv + N * n].reshape(-1, N, n)
    vol = np.abs(np.linalg.det(sims[:, 1:] - sims[:, :1]))
    if np.any(vol <= 0):
        r = int(np.argmax(vol <= 0))
        raise InvalidInputError(f"{path}: row {k + 2 + r}: degenerate simplex")
    dom = Domain(tuple(sims.min(axis=(0, 1))), tuple(sims.max(axis=(0, 1))), (1,) * n)
    return PwAffineMap(dom, PolyBatch.from_simplices(sims), grads, np.zeros((len(grads), N)))


# --------------------------------------------------------------- reports


def write_rows_csv(path, columns: Iterable[str], rows: Iterable[tuple], header: str) -> Path:
    path = Path(path)
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in row) + "\n")
    return path


def write_residual_csv(path, report, header: str, extra_rows=()) -> Path:
    """Rows (h, statistic_name, value); rows without an h use ``nan``."""
    rows = list(report.rows()) if report is not None else []
    rows += [(float("nan"), name, float(v)) for name, v in extra_rows]
    return write_rows_csv(path, ("h", "statistic_name", "value"), rows, header)


def write_coverage_csv(path, report, header: str) -> Path:
    return write_rows_csv(path, ("statistic", "value"), [(k, float(v)) for k, v in report.as_rows()], header)


# ------------------------------------------------------------------ PPM


def raster(u: PwAffineMap, values: np.ndarray, pixels: int = 256) -> np.ndarray:
    """Sample a per-simplex field on a pixel grid (mid-slice for n > 2); row 0 is the top."""
    dom = u.domain
    lo, hi = np.asarray(dom.lower), np.asarray(dom.upper)
    t = (np.arange(pixels) + 0.5) / pixels
    xs, ys = np.meshgrid(lo[0] + t * (hi[0] - lo[0]), lo[1] + t[::-1] * (hi[1] - lo[1]))
    pts = np.tile(0.5 * (lo + hi), (pixels * pixels, 1))
    pts[:, 0], pts[:, 1] = xs.ravel(), ys.ravel()
    idx = u.locate(pts)
    out = np.where(idx >= 0, values[np.maximum(idx, 0)], np.nan)
    return out.reshape(pixels, pixels)


def _colormap(t: np.ndarray) -> np.ndarray:
    """Blue to white to red."""
    t = np.clip(t, 0.0, 1.0)[..., None]
    blue, white, red = np.array([40, 70, 200.0]), np.array([250, 250, 250.0]), np.array([200, 40, 40.0])
    lower = blue + (white - blue) * (2 * t)
    upper = white + (red - white) * (2 * t - 1)
    return np.where(t < 0.5, lower, upper)


def write_ppm(path, image: np.ndarray, header: str) -> tuple[Path, Path]:
    """Binary PPM plus a ``.range.txt`` sidecar holding the colour scale limits."""
    path = Path(path)
    finite = image[np.isfinite(image)]
    vmin, vmax = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 0.0)
    scale = (image - vmin) / (vmax - vmin) if vmax > vmin else np.zeros_like(image)
    rgb = _colormap(np.nan_to_num(scale)).round().astype(np.uint8)
    rgb[~np.isfinite(image)] = 0
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{header}\n{w} {h}\n255\n".encode())
        fh.write(rgb.tobytes())
    side = path.with_suffix(path.suffix + ".range.txt")
    side.write_text(f"{header}\nmin={_fmt(vmin)}\nmax={_fmt(vmax)}\n")
    return path, side


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end].decode())
        pos = end
    if tokens[0] != "P6":
        raise InvalidInputError(f"{path}: not a binary PPM")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(data[pos + 1:pos + 1 + 3 * w * h], dtype=np.uint8).reshape(h, w, 3)


def output_dir(flag: str | None, configured: str | None = None, default: str = "out") -> Path:
    """Resolve the output directory: flag, then ``SVINCLUSION_OUTPUT_DIR``, then config, then default."""
    path = Path(flag or os.environ.get("SVINCLUSION_OUTPUT_DIR") or configured or default)
    path.mkdir(parents=True, exist_ok=True)
    return path
