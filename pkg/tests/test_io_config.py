import json
import math

import numpy as np
import pytest

from obstacle_well.config import ConfigError, load_config, parse_config
from obstacle_well.domain import GridSpec, random_field
from obstacle_well.io import (
    dump_field,
    emit_heatmap,
    heatmap_pixels,
    read_field_csv,
    read_field_raw,
    read_pgm,
    sha256_file,
    write_json,
    write_pgm,
)
from obstacle_well.model import ExpCritical, PowerCritical

from .conftest import CONFIGS

G2 = GridSpec(2, 17, 2.0)
G3 = GridSpec(3, 9, 1.0)

MINIMAL = """\
[nonlinearity]
variant = PowerCritical
mu = 8
q = 4

[grid]
dim = 3
n = 17
"""


@pytest.mark.parametrize("grid", [G2, G3])
def test_field_roundtrips(tmp_path, grid):
    u = random_field(grid, np.random.default_rng(0))
    files = dump_field(tmp_path / "u", u, grid, ("csv", "raw"))
    assert [f.name for f in files] == ["u.csv", "u.raw", "u.raw.json"]
    back, g = read_field_csv(files[0])
    assert g == grid and np.array_equal(back, u)
    back, g = read_field_raw(files[1])
    assert g == grid and np.array_equal(back, u)
    assert files[1].stat().st_size == 8 * grid.size


def test_field_csv_layout(tmp_path):
    u = G2.field(lambda x, y: x + 10 * y)
    path = dump_field(tmp_path / "u", u, G2, ("csv",))[0]
    lines = path.read_text().splitlines()
    assert lines[0] == "x1,x2,value" and len(lines) == 1 + G2.size
    # row-major order: x2 runs fastest; skip the boundary row
    row = 1 + G2.n + 1
    x1, x2, v = map(float, lines[row].split(","))
    assert (x1, x2) == (G2.axis[1], G2.axis[1])
    assert v == pytest.approx(x1 + 10 * x2)


def test_field_readers_reject_damage(tmp_path):
    raw = dump_field(tmp_path / "u", G2.zeros(), G2, ("raw",))[0]
    raw.write_bytes(raw.read_bytes()[:-8])
    with pytest.raises(ValueError, match="expected"):
        read_field_raw(raw)
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,value\n0,0,1\n")
    with pytest.raises(ValueError, match="header"):
        read_field_csv(bad)


def test_json_handles_numpy_and_nonfinite(tmp_path):
    path = write_json(tmp_path / "x.json", {"a": np.float64(1.5), "b": np.arange(3), "c": math.inf, "d": np.bool_(True)})
    d = json.loads(path.read_text())
    assert d == {"a": 1.5, "b": [0, 1, 2], "c": "inf", "d": True}
    assert float(d["c"]) == math.inf
    assert len(sha256_file(path)) == 64


def test_heatmap_geometry_and_range():
    u = G2.field(lambda x, y: x)
    img, lo, hi = heatmap_pixels(u, G2)
    assert img.shape == (G2.n, G2.n) and img.dtype == np.uint8
    inner = slice(1, -1)
    # columns follow x1 in increasing order; the boundary holds zero
    assert np.all(img[inner, 1] == 0) and np.all(img[inner, -2] == 255)
    assert (lo, hi) == (G2.axis[1], G2.axis[-2])
    v = G2.field(lambda x, y: y)
    img, _, _ = heatmap_pixels(v, G2)
    # the top row is x2 = L
    assert np.all(img[1, inner] == 255) and np.all(img[-2, inner] == 0)


def test_heatmap_zero_field_and_rings():
    img, lo, hi = heatmap_pixels(G2.zeros(), G2)
    assert np.all(img == 0) and lo == hi == 0.0
    img, _, _ = heatmap_pixels(G2.zeros(), G2, rings=(1.0,))
    ring = np.abs(G2.radius - 1.0) < 0.5 * G2.h
    assert np.sum(img == 255) == np.sum(ring) > 0


def test_heatmap_slices():
    u = random_field(G3, np.random.default_rng(1))
    with pytest.raises(ValueError, match="slice"):
        heatmap_pixels(u, G3)
    with pytest.raises(ValueError):
        heatmap_pixels(u, G3, slice_index=G3.n)
    with pytest.raises(ValueError):
        heatmap_pixels(G2.zeros(), G2, slice_index=0)
    img, lo, hi = heatmap_pixels(u, G3, slice_index=4)
    assert img.shape == (G3.n, G3.n)
    assert lo == u[:, :, 4].min() and hi == u[:, :, 4].max()


def test_pgm_roundtrip_with_whitespace_pixels(tmp_path):
    # byte values that look like whitespace must survive the header parse
    img = np.array([[10, 32, 9], [13, 0, 255]], dtype=np.uint8)
    back = read_pgm(write_pgm(tmp_path / "a.pgm", img))
    assert np.array_equal(back, img)
    (tmp_path / "b.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(ValueError):
        read_pgm(tmp_path / "b.pgm")


def test_emit_heatmap(tmp_path):
    u = random_field(G2, np.random.default_rng(3))
    pgm, side = emit_heatmap(tmp_path / "h.pgm", u, G2, rings=(1.0,))
    assert read_pgm(pgm).shape == (G2.n, G2.n)
    meta = json.loads(side.read_text())
    assert meta["n"] == G2.n and meta["rings"] == [1.0] and meta["slice"] is None
    assert meta["min"] == pytest.approx(u.min()) and meta["max"] == pytest.approx(u.max())


# ------------------------------------------------------------------ config


def test_default_configs_parse():
    rc2 = load_config(CONFIGS / "default_2d.ini")
    assert rc2.problem.grid.dim == 2 and isinstance(rc2.problem.nonlinearity, ExpCritical)
    rc3 = load_config(CONFIGS / "default_3d.ini")
    assert rc3.problem.grid.dim == 3 and isinstance(rc3.problem.nonlinearity, PowerCritical)
    assert rc2.digest != rc3.digest and len(rc2.digest) == 64


def test_minimal_config_defaults():
    rc = parse_config(MINIMAL)
    ps = rc.problem
    assert ps.grid.n == 17 and ps.grid.L == 4.0
    assert ps.lam == 16.0 and ps.eps == 1e-2
    assert rc.sweep.eps_steps == 9 and rc.output.formats == ("csv", "json", "raw")
    assert ps.obstacle.center == (1.2, 0.0, 0.0)


def test_config_overrides_and_comments():
    rc = parse_config(MINIMAL + "\n[solver]\nlam = 4  # weaker well\nrng_seed = 7\n[output]\nformats = json\n")
    assert rc.problem.lam == 4.0 and rc.solver.rng_seed == 7
    assert rc.output.formats == ("json",)


@pytest.mark.parametrize(
    "extra,line,pattern",
    [
        ("[sweep]\nlambda_steps = 0\n", 11, "lambda_steps"),
        ("[grid2]\nn = 3\n", 10, "unknown section"),
        ("[solver]\nlamda = 3\n", 11, "unknown key"),
        ("[solver]\nlam = big\n", 11, "lam"),
        ("[output]\nformats = csv, png\n", 11, "formats"),
        ("[output]\nthis line has no separator\n", 11, "malformed"),
    ],
)
def test_config_errors_carry_line_numbers(extra, line, pattern):
    with pytest.raises(ConfigError, match=pattern) as exc:
        parse_config(MINIMAL + "\n" + extra)
    assert exc.value.line == line
    assert f"line {line}" in str(exc.value)


def test_config_variant_errors():
    with pytest.raises(ConfigError, match="does not belong"):
        parse_config(MINIMAL.replace("q = 4", "q = 4\nnu = 2"))
    with pytest.raises(ConfigError, match="variant"):
        parse_config(MINIMAL.replace("PowerCritical", "Cubic"))
    with pytest.raises(ConfigError, match="missing required key 'q'"):
        parse_config(MINIMAL.replace("q = 4\n", ""))
    with pytest.raises(ConfigError, match="invalid configuration"):
        parse_config(MINIMAL.replace("n = 17", "n = 16"))


def test_config_unreadable(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.ini")
