"""Field dumps, JSON helpers and grayscale heatmaps."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import re
from pathlib import Path

import numpy as np

from .domain import GridSpec


def _sidecar(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json")


def field_rows(u: np.ndarray, grid: GridSpec):
    """``(x1, ..., xN, value)`` per node in row-major (C) order."""
    cols = [c.ravel() for c in grid.coords]
    return np.column_stack(cols + [np.asarray(u, dtype=float).ravel()])


def write_field_csv(path, u, grid: GridSpec):
    path = Path(path)
    header = [f"x{i + 1}" for i in range(grid.dim)] + ["value"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in field_rows(u, grid):
            w.writerow([repr(float(v)) for v in row])
    return path


def read_field_csv(path):
    """Returns ``(u, grid)``; the grid is rebuilt from the node coordinates."""
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    dim = len(header) - 1
    if header != [f"x{i + 1}" for i in range(dim)] + ["value"]:
        raise ValueError(f"unexpected field CSV header {header}")
    n = round(len(body) ** (1.0 / dim))
    if n**dim != len(body):
        raise ValueError("row count is not a perfect power of the dimension")
    grid = GridSpec(dim, n, float(body[:, 0].max()))
    return body[:, -1].reshape(grid.shape), grid


def write_field_raw(path, u, grid: GridSpec):
    """Little-endian float64 values plus a ``{n, N, L}`` JSON sidecar."""
    path = Path(path)
    np.asarray(u, dtype="<f8").ravel().tofile(path)
    _sidecar(path).write_text(json.dumps({"n": grid.n, "N": grid.dim, "L": grid.L}))
    return path


def read_field_raw(path):
    path = Path(path)
    meta = json.loads(_sidecar(path).read_text())
    grid = GridSpec(int(meta["N"]), int(meta["n"]), float(meta["L"]))
    data = np.fromfile(path, dtype="<f8")
    if data.size != grid.size:
        raise ValueError(f"{path}: expected {grid.size} values, found {data.size}")
    return data.reshape(grid.shape), grid


def dump_field(stem, u, grid: GridSpec, formats) -> list[Path]:
    """Write ``u`` in each of ``formats`` (``csv``/``raw``); returns the files."""
    stem = Path(stem)
    out = []
    if "csv" in formats:
        out.append(write_field_csv(stem.with_suffix(".csv"), u, grid))
    if "raw" in formats:
        p = write_field_raw(stem.with_suffix(".raw"), u, grid)
        out += [p, _sidecar(p)]
    return out


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        # JSON has no inf/nan; keep them readable and round-trippable
        return x if math.isfinite(x) else repr(x)
    return x


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")
    return path


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ------------------------------------------------------------------ heatmap


def heatmap_pixels(u, grid: GridSpec, rings=(), slice_index=None):
    """8-bit image of a 2D field (or one ``x3`` slice of a 3D field).

    Rows run from ``x2 = L`` at the top to ``x2 = -L``; columns follow ``x1``.
    Nodes within ``h/2`` of a ring radius are set to 255.
    """
    u = np.asarray(u, dtype=float)
    if grid.dim == 3:
        if slice_index is None:
            raise ValueError("3D fields need a slice index (--slice k)")
        if not 0 <= slice_index < grid.n:
            raise ValueError(f"slice index must lie in [0, {grid.n - 1}]")
        u = u[:, :, slice_index]
        x3 = grid.axis[slice_index]
        rad = np.sqrt(grid.coords[0][:, :, slice_index] ** 2 + grid.coords[1][:, :, slice_index] ** 2 + x3**2)
    elif grid.dim == 2:
        if slice_index is not None:
            raise ValueError("--slice applies to 3D fields only")
        rad = grid.radius
    else:
        raise ValueError("heatmaps need N = 2 or N = 3")
    lo, hi = float(u.min()), float(u.max())
    if hi > lo:
        img = np.rint(255.0 * (u - lo) / (hi - lo))
    else:
        img = np.zeros_like(u)
    img = img.astype(np.uint8)
    for r in rings:
        img[np.abs(rad - r) < 0.5 * grid.h] = 255
    # array index (i, j) is (x1, x2); the image wants x2 rows, flipped
    return img.T[::-1].copy(), lo, hi


def write_pgm(path, img: np.ndarray) -> Path:
    path = Path(path)
    rows, cols = img.shape
    with path.open("wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    # exactly one whitespace byte separates the header from the pixels
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise ValueError("not a binary PGM file")
    cols, rows, top = (int(g) for g in m.groups())
    if top != 255:
        raise ValueError("only 8-bit PGM files are supported")
    body = data[m.end():m.end() + rows * cols]
    if len(body) != rows * cols:
        raise ValueError("truncated PGM file")
    return np.frombuffer(body, dtype=np.uint8).reshape(rows, cols)


def emit_heatmap(path, u, grid: GridSpec, rings=(), slice_index=None) -> list[Path]:
    """Write a PGM heatmap and a JSON sidecar with the value range."""
    img, lo, hi = heatmap_pixels(u, grid, rings, slice_index)
    path = write_pgm(path, img)
    side = write_json(
        _sidecar(path),
        {"min": lo, "max": hi, "n": grid.n, "rings": list(rings), "slice": slice_index},
    )
    return [path, side]
