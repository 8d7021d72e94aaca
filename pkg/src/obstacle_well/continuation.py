"""Limits eps -> 0 and lam -> infinity, and the checks that go with them."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .domain import GridSpec, RegionMask, grad_pairing, h1_mass, integrate
from .energy import ProblemSpec, hinge
from .model import TruncationParams, g_eval
from .solver import SolverConfig, mountain_pass

log = logging.getLogger(__name__)

STEP_FIELDS = (
    "param_value",
    "level",
    "penalty_violation",
    "constraint_gap",
    "outside_mass",
    "lamVu2",
    "sup_outside_tilde",
    "a_threshold",
)


@dataclass
class SweepStep:
    param_value: float
    level: float
    penalty_violation: float
    constraint_gap: float
    outside_mass: float
    lamVu2: float
    sup_outside_tilde: float
    a_threshold: float

    def as_row(self):
        return [getattr(self, k) for k in STEP_FIELDS]


@dataclass
class SweepReport:
    param: str  # "eps" or "lam"
    steps: list = field(default_factory=list)
    complete: bool = True
    failure: str | None = None
    meta: dict = field(default_factory=dict)
    # final field of the sweep; not part of the serialised report
    u: np.ndarray | None = field(default=None, repr=False, compare=False)
    fields: list = field(default_factory=list, repr=False, compare=False)

    def check(self):
        vals = [s.param_value for s in self.steps]
        order = np.diff(vals)
        if self.param == "eps" and np.any(order >= 0):
            raise ValueError("eps steps must be strictly descending")
        if self.param == "lam" and np.any(order <= 0):
            raise ValueError("lam steps must be strictly ascending")
        for s in self.steps:
            if not all(math.isfinite(v) for v in s.as_row()):
                raise ValueError(f"non-finite metric in step {s}")

    def column(self, name):
        return np.array([getattr(s, name) for s in self.steps])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(STEP_FIELDS)
        for s in self.steps:
            w.writerow([repr(float(v)) for v in s.as_row()])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, param):
        rows = list(csv.reader(io.StringIO(text)))
        if tuple(rows[0]) != STEP_FIELDS:
            raise ValueError(f"unexpected CSV header {rows[0]}")
        steps = [SweepStep(*[float(x) for x in r]) for r in rows[1:] if r]
        return cls(param, steps)

    def to_dict(self):
        return {
            "param": self.param,
            "complete": self.complete,
            "failure": self.failure,
            "meta": self.meta,
            "steps": [asdict(s) for s in self.steps],
        }

    @classmethod
    def from_dict(cls, d):
        steps = [SweepStep(**{k: float(s[k]) for k in STEP_FIELDS}) for s in d["steps"]]
        return cls(d["param"], steps, d.get("complete", True), d.get("failure"), d.get("meta", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class SweepAborted(RuntimeError):
    def __init__(self, message, report: SweepReport):
        super().__init__(message)
        self.report = report


def step_metrics(u, ps: ProblemSpec, level: float, param_value: float) -> SweepStep:
    grid = ps.grid
    gap = np.where(ps.omega, u - ps.phi, np.inf)
    return SweepStep(
        param_value=float(param_value),
        level=float(level),
        penalty_violation=integrate(hinge(u, ps) ** 2, grid),
        constraint_gap=float(gap.min()),
        outside_mass=h1_mass(u, ~ps.omega, grid),
        lamVu2=ps.lam * integrate(ps.V * u * u, grid),
        sup_outside_tilde=float(np.max(u[~ps.tilde])),
        a_threshold=ps.truncation.a,
    )


def epsilon_schedule(eps0=0.1, steps=9):
    if steps < 3 or not eps0 > 0:
        raise ValueError("need eps0 > 0 and at least 3 steps")
    return [eps0 * 2.0**-k for k in range(steps)]


def lambda_schedule(base=4.0, steps=8):
    if steps < 1 or not base > 1:
        raise ValueError("need base > 1 and at least one step")
    return [base**k for k in range(steps)]


def epsilon_sweep(ps: ProblemSpec, eps_list, cfg: SolverConfig, start=None, keep_fields=False):
    """Solve the penalised problems for descending ``eps``, warm-starting each."""
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 3:
        raise ValueError("eps sweep needs at least 3 values")
    if np.any(np.diff(eps_list) >= 0):
        raise ValueError("eps values must be strictly descending")
    report = SweepReport("eps", meta={"lam": ps.lam, "iterations": [], "flags": []})
    u = start
    for eps in eps_list:
        pk = ps.with_params(eps=eps)
        res = mountain_pass(pk, cfg, start=u)
        report.meta["iterations"].append(res.iterations)
        report.meta["flags"].append(res.flags)
        if not res.refined:
            report.complete = False
            report.failure = f"unrefined solve at eps={eps}: {res.flags}"
            report.u = u
            raise SweepAborted(report.failure, report)
        u = res.u
        report.steps.append(step_metrics(u, pk, res.level, eps))
        if keep_fields:
            report.fields.append(u.copy())
    report.u = u
    report.meta["final_eps"] = eps_list[-1]
    report.check()
    return report


def lambda_sweep(base: ProblemSpec, lambda_list, cfg: SolverConfig, eps_list, keep_fields=False):
    """One full eps sweep per ``lam``; the last field of each seeds the next."""
    lambda_list = [float(x) for x in lambda_list]
    if len(lambda_list) < 1:
        raise ValueError("lambda sweep needs at least one value")
    if np.any(np.diff(lambda_list) <= 0):
        raise ValueError("lam values must be strictly ascending")
    report = SweepReport("lam", meta={"eps_sweeps": [], "consistency": []})
    # the cold mountain-pass search is cheapest at the base lam; its
    # critical point seeds the first step, which then only needs Newton
    seed = mountain_pass(base.with_params(eps=eps_list[0]), cfg)
    u = seed.u if seed.refined else None
    report.meta["seed_lam"] = base.lam
    for lam in lambda_list:
        pl = base.with_params(lam=lam)
        try:
            sub = epsilon_sweep(pl, eps_list, cfg, start=u)
        except SweepAborted as exc:
            report.complete = False
            report.failure = f"lam={lam}: {exc}"
            report.meta["eps_sweeps"].append(exc.report.to_dict())
            report.u = u
            raise SweepAborted(report.failure, report) from exc
        u = sub.u
        last = pl.with_params(eps=eps_list[-1])
        report.steps.append(step_metrics(u, last, sub.steps[-1].level, lam))
        report.meta["eps_sweeps"].append(sub.to_dict())
        report.meta["consistency"].append(
            truncation_consistency(u, last.truncation, last.potential.omega_tilde(last.grid), last)
        )
        if keep_fields:
            report.fields.append(u.copy())
    report.u = u
    report.meta["lambda_star"] = lambda_star(report)
    report.check()
    return report


def lambda_star(report: SweepReport):
    """Smallest swept ``lam`` from which on ``sup_outside_tilde <= a`` holds."""
    ok = [s.sup_outside_tilde <= s.a_threshold for s in report.steps]
    for i in range(len(ok)):
        if all(ok[i:]):
            return report.steps[i].param_value
    return None


# ------------------------------------------------------------- VI checks


def _bilinear(u, w, coef, grid):
    return grad_pairing(u, w, grid) + integrate(coef * u * w, grid)


def random_bump(grid: GridSpec, rng, centre_box: float, radii=(0.2, 0.8)):
    """Nonnegative ``C^1`` bump ``(1 - |x-c|^2/s^2)^2_+`` with random centre and radius."""
    c = rng.uniform(-centre_box, centre_box, size=grid.dim)
    s = rng.uniform(*radii)
    q = sum((x - ci) ** 2 for x, ci in zip(grid.coords, c)) / s**2
    psi = np.where(q < 1.0, (1.0 - q) ** 2, 0.0)
    psi[grid.boundary] = 0.0
    return psi, c, s


def _vi_sample(u, coef, gfun, mask, phi, grid, rng, trials, place, exclude):
    """Pairings ``B(u, v-u) - int g(u)(v-u)`` over the two sampling families."""
    base = _bilinear(u, u, coef, grid)
    nrm_u = math.sqrt(max(base, 0.0))
    gu = gfun(u)
    out = []
    fam_i_free = []
    for k in range(trials):
        psi = place(rng)
        if not np.any(psi):
            continue
        t = (0.1, 1.0)[k % 2]
        w = t * psi
        val = _bilinear(u, w, coef, grid) - integrate(gu * w, grid)
        nw = math.sqrt(_bilinear(w, w, coef, grid))
        out.append((val, nrm_u * nw, "i"))
        if exclude is not None:
            wf = np.where(exclude, 0.0, w)
            if np.any(wf):
                vf = _bilinear(u, wf, coef, grid) - integrate(gu * wf, grid)
                nf = math.sqrt(_bilinear(wf, wf, coef, grid))
                fam_i_free.append((vf, nrm_u * nf))
        v = u - t * psi
        v = np.where(mask, np.maximum(v, phi), v)
        w = v - u
        if np.any(w):
            val = _bilinear(u, w, coef, grid) - integrate(gu * w, grid)
            nw = math.sqrt(_bilinear(w, w, coef, grid))
            out.append((val, nrm_u * nw, "ii"))
    return out, fam_i_free


def _summarise(samples, free):
    vals = np.array([s[0] for s in samples])
    scales = np.array([s[1] for s in samples])
    scale = float(scales.max()) if len(scales) else 0.0
    rep = {
        "samples": len(samples),
        "max_violation": float(min(0.0, vals.min())) if len(vals) else 0.0,
        "min_pairing": float(vals.min()) if len(vals) else 0.0,
        "scale": scale,
        "relative_violation": float(min(0.0, (vals / np.maximum(scales, 1e-300)).min())) if len(vals) else 0.0,
    }
    if free:
        fv = np.array([f[0] for f in free])
        fs = np.array([f[1] for f in free])
        rep["complementarity_samples"] = len(free)
        rep["complementarity_max"] = float(np.max(np.abs(fv) / np.maximum(fs, 1e-300)))
    return rep


def _clip(u, ps_omega, phi, norm):
    uc = np.where(ps_omega, np.maximum(u, phi), u)
    dist = norm(u - uc)
    if dist > 1e-3 * norm(u):
        raise ValueError(f"field is too far from the admissible set (clip distance {dist:.3e})")
    return uc, dist


def contact_set(u, ps: ProblemSpec) -> np.ndarray:
    tol = 1e-10 * float(np.max(ps.phi_plus))
    return ps.omega & (u - ps.phi <= tol)


def _dilate(mask):
    out = mask.copy()
    for ax in range(mask.ndim):
        out[tuple(slice(1, None) if a == ax else slice(None) for a in range(mask.ndim))] |= mask[
            tuple(slice(None, -1) if a == ax else slice(None) for a in range(mask.ndim))
        ]
        out[tuple(slice(None, -1) if a == ax else slice(None) for a in range(mask.ndim))] |= mask[
            tuple(slice(1, None) if a == ax else slice(None) for a in range(mask.ndim))
        ]
    return out


def vi_verify(u, ps: ProblemSpec, trials=200, seed=0) -> dict:
    """Sample the variational inequality of the truncated problem at ``u``.

    ``u`` is first clipped into the admissible set.  Test functions follow
    two families: ``v = u + t psi`` and ``v = max(u - t psi, phi)`` on Omega,
    with random nonnegative bumps ``psi`` and ``t`` in {0.1, 1}.  The
    complementarity entry uses the first family with ``psi`` cut off on the
    contact set and its neighbours.
    """
    if trials < 10:
        raise ValueError("trials must be >= 10")
    grid = ps.grid
    uc, dist = _clip(u, ps.omega, ps.phi, ps.norm)
    rng = np.random.default_rng(seed)
    box = grid.L - 0.25 * grid.L

    def place(rng):
        return random_bump(grid, rng, box)[0]

    def gfun(w):
        return g_eval(w, ps.tilde, ps.truncation, ps.nonlinearity)

    excl = _dilate(contact_set(uc, ps))
    samples, free = _vi_sample(uc, ps.mass_coef, gfun, ps.omega, ps.phi, grid, rng, trials, place, excl)
    rep = _summarise(samples, free)
    rep["clip_distance"] = dist
    rep["contact_nodes"] = int(np.sum(contact_set(uc, ps)))
    return rep


def limit_vi_verify(u, ps: ProblemSpec, trials=200, seed=0) -> dict:
    """The inequality of the limit problem on Omega, for ``u`` restricted to Omega."""
    if trials < 10:
        raise ValueError("trials must be >= 10")
    grid = ps.grid
    u_om = np.where(ps.omega, u, 0.0)
    one = np.ones(grid.shape)

    def norm(w):
        return math.sqrt(max(_bilinear(w, w, one, grid), 0.0))

    uc, dist = _clip(u_om, ps.omega, ps.phi, norm)
    rng = np.random.default_rng(seed)
    r_om = ps.potential.well_radius
    nl = ps.nonlinearity

    def place(rng):
        # bumps whose support stays one mesh width inside Omega
        while True:
            s = rng.uniform(0.2, 0.8) * r_om
            c = rng.uniform(-r_om, r_om, size=grid.dim)
            if math.hypot(*c) + s <= r_om - grid.h:
                break
        q = sum((x - ci) ** 2 for x, ci in zip(grid.coords, c)) / s**2
        return np.where(q < 1.0, (1.0 - q) ** 2, 0.0)

    excl = _dilate(contact_set(uc, ps))
    samples, free = _vi_sample(uc, one, nl.f, ps.omega, ps.phi, grid, rng, trials, place, excl)
    rep = _summarise(samples, free)
    rep["clip_distance"] = dist
    restricted = h1_mass(u, ps.omega, grid)
    full = ps.norm(u) ** 2
    rep["restricted_energy"] = restricted
    rep["norm_lam_sq"] = full
    rep["energy_ratio"] = restricted / full if full > 0 else 1.0
    return rep


def truncation_consistency(u, tp: TruncationParams, tilde: RegionMask, ps: ProblemSpec) -> dict:
    """Is the truncation inactive at ``u``, i.e. ``u <= a`` outside OmegaTilde?"""
    grid = ps.grid
    outside = ~tilde.inside
    sup = float(np.max(u[outside]))
    expo = 2.0 * grid.dim / (grid.dim - 2) if grid.dim > 2 else 4.0
    lp = integrate(outside * np.abs(u) ** expo, grid) ** (1.0 / expo)
    g = g_eval(u, tilde.inside, tp, ps.nonlinearity)
    f = ps.nonlinearity.f(u)
    return {
        "sup_outside": sup,
        "ok": bool(sup <= tp.a),
        "moser_ratio": sup / lp if lp > 0 else 0.0,
        "outside_norm": lp,
        "truncation_inactive": bool(np.array_equal(g, f)),
    }


def _decreasing(vals, slack=0.05):
    vals = np.asarray(vals, dtype=float)
    return bool(np.all(vals[1:] <= (1.0 + slack) * vals[:-1]))


def epsilon_sweep_checks(report: SweepReport, phi_max: float, level_bound=None) -> dict:
    """Trend checks of an eps sweep; ``ok`` is the conjunction of the items."""
    pv = report.column("penalty_violation")
    gap = float(report.steps[-1].constraint_gap)
    lv = report.column("level")
    out = {
        "penalty_decreasing": _decreasing(pv),
        "final_gap": gap,
        "gap_ok": gap >= -1e-4 * phi_max,
        "levels_positive": bool(np.all(lv > 0)),
    }
    if level_bound is not None:
        out["levels_below_bound"] = bool(np.all(lv < level_bound))
    out["ok"] = all(v for k, v in out.items() if isinstance(v, bool))
    return out


def lambda_sweep_checks(report: SweepReport) -> dict:
    lvu = report.column("lamVu2")
    mass = report.column("outside_mass")
    cons = report.meta.get("consistency", [])
    star = lambda_star(report)
    after = [c for s, c in zip(report.steps, cons) if star is not None and s.param_value >= star]
    ratios = np.array([c["moser_ratio"] for c in cons if c["outside_norm"] > 0])
    out = {
        "lamVu2_decreasing_tail": _decreasing(lvu[-4:], slack=0.0),
        "outside_mass_ratio": float(mass[-1] / mass[0]) if mass[0] > 0 else 0.0,
        "lambda_star": star,
        "truncation_inactive_after_star": star is not None and all(c["truncation_inactive"] for c in after),
        "moser_spread": float(ratios.max() / ratios.min()) if len(ratios) else 1.0,
    }
    out["outside_mass_ok"] = out["outside_mass_ratio"] <= 0.1
    out["moser_ok"] = out["moser_spread"] <= 50.0
    out["ok"] = (
        out["lamVu2_decreasing_tail"]
        and out["outside_mass_ok"]
        and out["truncation_inactive_after_star"]
        and out["moser_ok"]
    )
    return out
