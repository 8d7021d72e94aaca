"""INI run configuration.

Grammar: ``configparser`` syntax, sections and keys below, ``#``/``;``
comments, lists comma-separated.  Every key is optional except the
nonlinearity ``variant`` and its parameters; unknown sections or keys are
errors reported with their line number.

    [grid]          dim, n, L
    [potential]     well_radius, scale, tilde_radius
    [obstacle]      center, radius, height, outside_depth
    [nonlinearity]  variant = PowerCritical | ExpCritical
                    mu, q            (PowerCritical)
                    nu, p, alpha0, theta  (ExpCritical)
    [solver]        lam, eps, path_points, grad_tol, max_outer, armijo_c,
                    armijo_backtrack, newton_tol, newton_max, rng_seed,
                    handoff_rtol, reparam_every
    [sweep]         eps0, eps_steps, lambda_base, lambda_steps
    [output]        dir, dump_fields, formats
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

from .domain import GridSpec
from .energy import ProblemSpec
from .model import ExpCritical, ObstacleSpec, PotentialSpec, PowerCritical
from .solver import SolverConfig


class ConfigError(ValueError):
    def __init__(self, message, line=None, column=None):
        where = f"line {line}" if line else ""
        if line and column:
            where += f", column {column}"
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line
        self.column = column


_SOLVER_KEYS = {f.name: f.type for f in dataclasses.fields(SolverConfig)}

SCHEMA = {
    "grid": {"dim": int, "n": int, "L": float},
    "potential": {"well_radius": float, "scale": float, "tilde_radius": float},
    "obstacle": {"center": "floats", "radius": float, "height": float, "outside_depth": float},
    "nonlinearity": {
        "variant": str, "mu": float, "q": float,
        "nu": float, "p": float, "alpha0": float, "theta": float,
    },
    "solver": {"lam": float, "eps": float, **{
        k: int if t in ("int", int) else float for k, t in _SOLVER_KEYS.items()
    }},
    "sweep": {"eps0": float, "eps_steps": int, "lambda_base": float, "lambda_steps": int},
    "output": {"dir": str, "dump_fields": bool, "formats": "formats"},
}
FORMATS = ("csv", "json", "raw")
VARIANT_KEYS = {"PowerCritical": ("mu", "q"), "ExpCritical": ("nu", "p", "alpha0", "theta")}


@dataclass
class SweepSettings:
    eps0: float = 1e-1
    eps_steps: int = 9
    lambda_base: float = 4.0
    lambda_steps: int = 8


@dataclass
class OutputSettings:
    dir: str = "out"
    dump_fields: bool = True
    formats: tuple = FORMATS


@dataclass
class RunConfig:
    problem: ProblemSpec
    solver: SolverConfig
    sweep: SweepSettings = field(default_factory=SweepSettings)
    output: OutputSettings = field(default_factory=OutputSettings)
    text: str = ""

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()


def _line_of(text, section, key=None):
    """1-based line of ``[section]`` (or of ``key`` inside it)."""
    cur = None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"\[(.+)\]$", line)
        if m:
            cur = m.group(1).strip()
            if key is None and cur == section:
                return i
            continue
        if key is not None and cur == section:
            k = re.split(r"[=:]", line, maxsplit=1)[0].strip()
            if k == key:
                return i
    return None


def _convert(text, section, key, raw, kind):
    line = _line_of(text, section, key)
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "floats":
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if kind == "formats":
            vals = tuple(x.strip() for x in raw.split(",") if x.strip())
            bad = [v for v in vals if v not in FORMATS]
            if bad:
                raise ValueError(f"unknown formats {bad}; choose from {FORMATS}")
            return vals
        if kind is int:
            return int(raw)
        return kind(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}", line) from None


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case sensitive (L)
    try:
        cp.read_string(text)
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", lineno, 1) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any section", exc.lineno, 1) from None
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], getattr(exc, "lineno", None)) from None

    vals = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", _line_of(text, sec), 1)
        vals[sec] = {}
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", _line_of(text, sec, key), 1)
            vals[sec][key] = _convert(text, sec, key, raw, SCHEMA[sec][key])

    def get(sec, key, default=None):
        return vals.get(sec, {}).get(key, default)

    def need(sec, key):
        v = get(sec, key)
        if v is None:
            raise ConfigError(f"missing required key {key!r} in [{sec}]", _line_of(text, sec))
        return v

    try:
        grid = GridSpec(get("grid", "dim", 2), get("grid", "n", 65), get("grid", "L", 4.0))
        pot = PotentialSpec(
            get("potential", "well_radius", 2.0),
            get("potential", "scale", 100.0),
            get("potential", "tilde_radius", 2.75),
        )
        centre = get("obstacle", "center", (1.2,) + (0.0,) * (grid.dim - 1))
        obs = ObstacleSpec(
            centre,
            get("obstacle", "radius", 0.7),
            get("obstacle", "height", 0.25),
            get("obstacle", "outside_depth", 0.05),
        )
        variant = need("nonlinearity", "variant")
        if variant not in VARIANT_KEYS:
            raise ConfigError(
                f"variant must be one of {sorted(VARIANT_KEYS)}",
                _line_of(text, "nonlinearity", "variant"),
            )
        stray = [k for k in vals["nonlinearity"] if k != "variant" and k not in VARIANT_KEYS[variant]]
        if stray:
            raise ConfigError(
                f"key {stray[0]!r} does not belong to {variant}",
                _line_of(text, "nonlinearity", stray[0]),
            )
        args = [need("nonlinearity", k) for k in VARIANT_KEYS[variant]]
        nl = PowerCritical(*args, dim=grid.dim) if variant == "PowerCritical" else ExpCritical(*args)
        solver_kw = {k: v for k, v in vals.get("solver", {}).items() if k in _SOLVER_KEYS}
        cfg = SolverConfig(**solver_kw)
        ps = ProblemSpec.build(
            grid, pot, obs, nl, get("solver", "lam", 16.0), get("solver", "eps", 1e-2)
        )
        sweep = SweepSettings(**vals.get("sweep", {}))
        output = OutputSettings(**vals.get("output", {}))
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    bad = [
        (key, msg)
        for key, ok, msg in (
            ("eps0", sweep.eps0 > 0, "eps0 must be positive"),
            ("eps_steps", sweep.eps_steps >= 3, "eps_steps must be >= 3"),
            ("lambda_base", sweep.lambda_base > 1, "lambda_base must exceed 1"),
            ("lambda_steps", sweep.lambda_steps >= 1, "lambda_steps must be >= 1"),
        )
        if not ok
    ]
    if bad:
        key, msg = bad[0]
        raise ConfigError(f"[sweep] {msg}", _line_of(text, "sweep", key) or _line_of(text, "sweep"))
    return RunConfig(ps, cfg, sweep, output, text)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)
