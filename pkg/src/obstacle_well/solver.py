"""Mountain-pass critical points of the penalised functional.

The search has two phases.  A discretised path from ``phi^+`` to a point
``e`` with negative energy is deformed by Armijo descent steps applied to its
highest node (Sobolev gradient, component along the path removed); the path
maximum therefore never increases.  Once the highest node is close to
critical, damped semismooth Newton (MINRES inner solves) finishes the job.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy import optimize

from .domain import GridSpec, NonFiniteError, grad_pairing, integrate, random_field
from .energy import ProblemSpec, energy_total, jacobian_diag, norm_bound, residual
from .linalg import ShiftedPoisson, shifted_solver
from .model import EXP_CAP, PowerCritical

log = logging.getLogger(__name__)


class GeometryError(RuntimeError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    path_points: int = 24
    grad_tol: float = 1e-9
    max_outer: int = 3000
    armijo_c: float = 1e-4
    armijo_backtrack: float = 0.5
    newton_tol: float = 1e-12
    newton_max: int = 60
    rng_seed: int = 0
    handoff_rtol: float = 1e-2
    reparam_every: int = 10

    def __post_init__(self):
        if self.path_points < 8:
            raise ValueError("path_points must be >= 8")
        if not self.grad_tol >= 1e-12:
            raise ValueError("grad_tol must be >= 1e-12")
        if not 0 < self.armijo_c < 0.5:
            raise ValueError("armijo_c must lie in (0, 1/2)")
        if not 0 < self.armijo_backtrack < 1:
            raise ValueError("armijo_backtrack must lie in (0, 1)")
        for name in ("max_outer", "newton_max", "reparam_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not (self.newton_tol > 0 and self.handoff_rtol > 0):
            raise ValueError("tolerances must be positive")


@dataclass
class MountainPassResult:
    u: np.ndarray
    level: float
    residual_norm: float
    path_max_history: list = field(default_factory=list)
    refined: bool = False
    iterations: int = 0
    newton_history: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def to_dict(self):
        return {
            "level": self.level,
            "residual_norm": self.residual_norm,
            "refined": self.refined,
            "iterations": self.iterations,
            "path_max_history": list(self.path_max_history),
        }


# ---------------------------------------------------------------- embeddings


def embedding_constant(ps: ProblemSpec, s: float, lam: float = 0.0, iters=400, rtol=1e-10):
    """Largest ``int |u|^s / ||u||_lam^s`` found by nonlinear power iteration.

    ``s = 2`` gives the squared L^2 embedding constant (a linear eigenproblem).
    """
    grid = ps.grid
    coef = 1.0 + lam * ps.V
    solver = ps.riesz if lam == ps.lam else shifted_solver(grid, grid.interior(coef))

    def nrm(u):
        return math.sqrt(grad_pairing(u, u, grid) + integrate(coef * u * u, grid))

    u = grid.field(lambda *x: np.exp(-((grid.radius / (0.25 * grid.L)) ** 2)))
    u /= nrm(u)
    best = integrate(np.abs(u) ** s, grid)
    for _ in range(iters):
        v = grid.embed(solver.solve(grid.interior(np.abs(u) ** (s - 2) * u)))
        v /= nrm(v)
        val = integrate(np.abs(v) ** s, grid)
        u = v
        if abs(val - best) <= rtol * val:
            best = max(best, val)
            break
        best = max(best, val)
    return best


def sup_embedding_constant(ps: ProblemSpec, lam: float = 0.0) -> float:
    """``max_i sup_u |u(x_i)| / ||u||_lam`` over nodes near the box centre."""
    grid = ps.grid
    coef = 1.0 + lam * ps.V
    solver = shifted_solver(grid, grid.interior(coef))
    mid = (grid.n - 2) // 2
    best = 0.0
    for off in (0, 1):
        idx = np.ravel_multi_index((mid + off,) * grid.dim, (grid.n - 2,) * grid.dim)
        e = np.zeros(grid.n_interior)
        e[idx] = 1.0
        best = max(best, float(solver.solve(e)[idx]) / grid.cell_volume)
    return math.sqrt(best)


def l2_embedding_constant(ps: ProblemSpec) -> float:
    """``C`` with ``|u|_2 <= C ||u||_lam`` on this grid."""
    return math.sqrt(embedding_constant(ps, 2.0, lam=ps.lam))


def check_norm_bound(res: "MountainPassResult", ps: ProblemSpec, c_embed=None) -> dict:
    if c_embed is None:
        c_embed = l2_embedding_constant(ps)
    return norm_bound(res.u, res.level, ps, c_embed)


# ------------------------------------------------------------------ geometry


def find_endpoint_e(ps: ProblemSpec) -> np.ndarray:
    """``(1 + t) phi^+`` with the smallest power-of-two ``t`` giving negative energy."""
    base = energy_total(ps.phi_plus, ps)
    t = 1.0
    while t <= 2.0**20:
        w = (1.0 + t) * ps.phi_plus
        try:
            val = energy_total(w, ps)
        except NonFiniteError as exc:
            raise SolverError(f"energy overflowed along t phi^+ at t = {t}") from exc
        if val < 0 and val < base:
            return w
        t *= 2.0
    raise SolverError("no negative-energy endpoint below t = 2^20")


def geometry_radius(ps: ProblemSpec) -> dict:
    """Sphere radius ``r`` and level ``rho = r^2/8`` of the mountain-pass geometry.

    Embedding constants are measured for the ``lam = 0`` norm, which bounds
    every ``||.||_lam``; hence ``r`` does not depend on ``lam`` or ``eps``.
    """
    nl = ps.nonlinearity
    out = {}
    if isinstance(nl, PowerCritical):
        c1 = embedding_constant(ps, nl.q)
        c2 = embedding_constant(ps, nl.crit)
        r_max = min(
            (nl.crit / (4 * c2)) ** (1 / (nl.crit - 2)),
            (nl.q / (4 * c1 * nl.mu)) ** (1 / (nl.q - 2)),
        )
        # at 0.8 r_max the two power terms take at most (1 + 0.8^4) r^2/4 < 3 r^2/8
        r = 0.8 * r_max
        out.update(C1=c1, C2=c2)
    else:
        # F(t) <= nu t^(p+1) exp(alpha0 t^2) / (p+1) and |u| <= C_inf ||u||
        c_inf = sup_embedding_constant(ps)
        c_p = embedding_constant(ps, nl.p + 1)

        def excess(r):
            expo = min(nl.alpha0 * c_inf**2 * r * r, EXP_CAP)
            return nl.nu * math.exp(expo) * c_p * r ** (nl.p - 1) / (nl.p + 1) - 3.0 / 8.0

        lo, hi = 0.0, 1.0
        while excess(hi) < 0:
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if excess(mid) < 0:
                lo = mid
            else:
                hi = mid
        # below the root the nonlinear term takes less than 3 r^2/8
        r_max = r = lo
        out.update(C_inf=c_inf, C_p1=c_p)
    out.update(r_max=r_max, r=r, rho=r * r / 8.0)
    return out


def geometry_check(ps: ProblemSpec, samples: int = 50, seed: int = 0) -> dict:
    if samples < 10:
        raise ValueError("samples must be >= 10")
    report = geometry_radius(ps)
    r, rho = report["r"], report["rho"]
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(samples):
        u = random_field(ps.grid, rng)
        u *= r / ps.norm(u)
        vals.append(energy_total(u, ps))
    report["min_I_on_sphere"] = float(min(vals))
    report["I_phi_plus"] = energy_total(ps.phi_plus, ps)
    report["norm_phi_plus"] = ps.norm(ps.phi_plus)
    if report["min_I_on_sphere"] < rho:
        raise GeometryError("mountain-pass geometry violated on this grid", report)
    return report


# -------------------------------------------------------------------- newton


@dataclass
class NewtonOutcome:
    u: np.ndarray
    history: list
    converged: bool
    fallback_steps: int = 0


def _merit(u, ps):
    return ps.dual_norm(residual(u, ps)) ** 2


def newton_refine(u0: np.ndarray, ps: ProblemSpec, cfg: SolverConfig) -> NewtonOutcome:
    """Damped semismooth Newton on the strong residual.

    Steps are damped on the dual-norm merit ``||I'(u)||_*^2``; when no
    damping factor decreases it, a few steepest-descent steps on the merit
    are taken instead (counted in ``fallback_steps``).
    """
    grid = ps.grid
    u = u0.copy()
    r = residual(u, ps)
    history = [float(np.max(np.abs(r)))]
    fallback = 0
    lap = grid.neg_laplacian_matrix
    for _ in range(cfg.newton_max):
        if history[-1] <= cfg.grad_tol:
            return NewtonOutcome(u, history, True, fallback)
        jd = jacobian_diag(u, ps)
        J = sp.csr_matrix(lap + sp.diags(grid.interior(jd)))
        active = ps.omega & (u < ps.phi)
        prec = shifted_solver(grid, grid.interior(ps.mass_coef + active / ps.eps))
        b = grid.interior(r)
        delta, info = sla.minres(
            J, -b, M=prec.as_operator(), rtol=cfg.newton_tol, maxiter=500
        )
        step = grid.embed(delta)
        m0 = _merit(u, ps)
        s = 1.0
        accepted = False
        while s > 1e-4:
            try:
                trial = u + s * step
                m1 = _merit(trial, ps)
            except NonFiniteError:
                m1 = math.inf
            if m1 <= (1.0 - cfg.armijo_c * s) * m0:
                accepted = True
                break
            s *= cfg.armijo_backtrack
        if accepted:
            u = trial
        else:
            # steepest descent on the merit; its gradient is J K^-1 r
            z = grid.embed(ps.riesz.solve(b))
            gmer = grid.embed(J @ grid.interior(z))
            d = -ps.riesz_map(gmer)
            slope = -2.0 * grid.cell_volume * float(np.sum(gmer * d))
            s = 1.0
            while s > 1e-12:
                trial = u + s * d
                if _merit(trial, ps) <= m0 - cfg.armijo_c * s * abs(slope):
                    break
                s *= cfg.armijo_backtrack
            else:
                history.append(history[-1])
                return NewtonOutcome(u, history, False, fallback)
            u = trial
            fallback += 1
        r = residual(u, ps)
        history.append(float(np.max(np.abs(r))))
        if len(history) > 8 and history[-1] > 0.99 * history[-8] and history[-1] < 1e-10:
            # round-off floor
            break
    return NewtonOutcome(u, history, history[-1] <= cfg.grad_tol, fallback)


# -------------------------------------------------------------- mountain pass


def _reparametrize(path, ps):
    d = np.array([ps.norm(b - a) for a, b in zip(path[:-1], path[1:])])
    s = np.concatenate([[0.0], np.cumsum(d)])
    targets = np.linspace(0.0, s[-1], len(path))
    out = [path[0]]
    for t in targets[1:-1]:
        j = min(int(np.searchsorted(s, t, side="right")) - 1, len(path) - 2)
        frac = (t - s[j]) / d[j] if d[j] > 0 else 0.0
        out.append((1 - frac) * path[j] + frac * path[j + 1])
    out.append(path[-1])
    return out


def _inner(a, b, ps):
    return grad_pairing(a, b, ps.grid) + integrate(ps.mass_coef * a * b, ps.grid)


def _safe_energy(u, ps, overflow=math.inf):
    """Energy, or ``overflow`` when the nonlinear term overflows.

    Line searches that must reject such points pass ``+inf``; along rays
    the overflow means ``I -> -inf`` and ``-inf`` is passed instead.
    """
    try:
        return energy_total(u, ps)
    except NonFiniteError:
        return overflow


def _path_phase(ps, cfg, e, flags):
    """Deform the path by descent at its highest node; returns the path."""
    grid = ps.grid
    m = cfg.path_points
    rng = np.random.default_rng(cfg.rng_seed)
    bump = random_field(grid, rng) * 1e-3 * float(np.max(np.abs(e)))
    ts = np.linspace(0.0, 1.0, m + 1)
    path = [(1 - t) * ps.phi_plus + t * e + math.sin(math.pi * t) * bump for t in ts]
    E = np.array([energy_total(g, ps) for g in path])
    history = [float(E.max())]
    it = 0
    stalls = 0
    while it < cfg.max_outer:
        it += 1
        j = int(np.argmax(E[1:-1])) + 1
        u = path[j]
        d = ps.riesz_map(residual(u, ps))
        tau = path[j + 1] - path[j - 1]
        tn = _inner(tau, tau, ps)
        if tn > 0:
            d = d - (_inner(d, tau, ps) / tn) * tau
        dn2 = _inner(d, d, ps)
        # the path only has to deliver a starting direction for the saddle phase
        if math.sqrt(dn2) <= 10.0 * cfg.handoff_rtol * max(ps.norm(u), 1e-300):
            break
        s = 1.0
        moved = False
        while s > 1e-10:
            et = _safe_energy(u - s * d, ps)
            if et <= E[j] - cfg.armijo_c * s * dn2:
                path[j] = u - s * d
                E[j] = et
                moved = True
                break
            s *= cfg.armijo_backtrack
        if not moved:
            stalls += 1
            if stalls > 3:
                flags.append(f"path_stall@{it}")
                break
        if it % cfg.reparam_every == 0:
            new = _reparametrize(path, ps)
            En = np.array([_safe_energy(g, ps) for g in new])
            # keep the recorded path maximum nonincreasing
            if En.max() <= E.max() + 1e-12 * abs(E.max()):
                path, E = new, En
        history.append(float(E.max()))
    return path, E, history, it


def _ray_max(v, t0, ps):
    """Maximiser of ``t -> I(phi^+ + t v)`` for ``t > 0`` near ``t0``."""
    base = ps.phi_plus

    def fn(t):
        return _safe_energy(base + t * v, ps, -math.inf)

    a, b = 0.5 * t0, t0
    fa, fb = fn(a), fn(b)
    while fa > fb and a > 1e-10 * t0:
        b, fb = a, fa
        a *= 0.5
        fa = fn(a)
    c = 2.0 * b
    fc = fn(c)
    for _ in range(64):
        if fc <= fb:
            break
        a, b, fb = b, c, fc
        c *= 2.0
        fc = fn(c)
    else:
        raise SolverError("energy is unbounded above along a ray from phi^+")
    # J is stationary in t, so a relative error 1e-9 in t is ample
    res = optimize.minimize_scalar(lambda t: -fn(t), bracket=(a, b, c), tol=1e-9)
    t = float(res.x)
    val = -float(res.fun)
    if not val >= fb:
        t, val = b, fb
    return t, val


def _saddle_phase(u0, ps, cfg, tol, flags):
    """Local minimax over rays issuing from ``phi^+``.

    ``J(v) = max_t I(phi^+ + t v)`` is decreased over unit directions ``v``
    by Armijo steps along the Sobolev gradient; at the ray maximiser the
    gradient is orthogonal to ``v``, so a stationary ``J`` is a critical
    point of ``I``.
    """
    v = u0 - ps.phi_plus
    t = math.sqrt(_inner(v, v, ps))
    v /= t
    t, J = _ray_max(v, t, ps)
    it = 0
    for it in range(1, cfg.max_outer + 1):
        u = ps.phi_plus + t * v
        d = ps.riesz_map(residual(u, ps))
        if math.sqrt(_inner(d, d, ps)) <= tol * ps.norm(u):
            return u, it, True
        dp = d - _inner(d, v, ps) * v
        g2 = _inner(dp, dp, ps)
        s = 1.0
        while s > 1e-12:
            w = v - (s / t) * dp
            w /= math.sqrt(_inner(w, w, ps))
            tn, Jn = _ray_max(w, t, ps)
            if Jn <= J - cfg.armijo_c * s * g2 / t:
                break
            s *= cfg.armijo_backtrack
        else:
            flags.append(f"saddle_stall@{it}")
            return u, it, False
        v, t, J = w, tn, Jn
    flags.append("max_outer")
    return ps.phi_plus + t * v, it, False


def mountain_pass(ps: ProblemSpec, cfg: SolverConfig, endpoint=None, start=None) -> MountainPassResult:
    """Critical point at the mountain-pass level between ``phi^+`` and ``e``.

    ``start`` (a field near a critical point, e.g. from a neighbouring
    parameter value) skips the path phase when Newton converges from it.
    """
    flags = []
    if start is not None:
        out = newton_refine(start, ps, cfg)
        level = energy_total(out.u, ps)
        # the local minimum near phi^+ is also critical; it lies below I(phi^+)
        if out.converged and level > 0 and level > energy_total(ps.phi_plus, ps):
            res = MountainPassResult(
                out.u, level, out.history[-1], [], True, 0, out.history, ["warm_start"]
            )
            if out.fallback_steps:
                res.flags.append("descent_fallback")
            return res
        flags.append("warm_start_failed")

    e = find_endpoint_e(ps) if endpoint is None else endpoint
    e_ends = max(energy_total(ps.phi_plus, ps), energy_total(e, ps))
    path, E, history, it = _path_phase(ps, cfg, e, flags)
    tol = cfg.handoff_rtol
    u = path[int(np.argmax(E[1:-1])) + 1]
    newton_hist = []
    while tol >= 1e-10:
        u, k, ok = _saddle_phase(u, ps, cfg, tol, flags)
        it += k
        out = newton_refine(u, ps, cfg)
        newton_hist = out.history
        if out.fallback_steps:
            flags.append("descent_fallback")
        level = energy_total(out.u, ps)
        if out.converged and level > e_ends and level > 0:
            return MountainPassResult(
                out.u, level, out.history[-1], history, True, it, newton_hist, flags
            )
        flags.append(f"newton_rejected(tol={tol:.0e})")
        if not ok:
            break
        tol *= 0.1
    return MountainPassResult(
        u, energy_total(u, ps), float(np.max(np.abs(residual(u, ps)))), history, False, it,
        newton_hist, flags + ["unrefined"],
    )


# ----------------------------------------------------------------- sobolev


def sobolev_quotient(u, grid: GridSpec) -> float:
    crit = 2.0 * grid.dim / (grid.dim - 2)
    return grad_pairing(u, u, grid) / integrate(np.abs(u) ** crit, grid) ** (2.0 / crit)


def sobolev_estimate(grid: GridSpec, step=1.0, max_iter=10_000, rtol=1e-10, u0=None) -> float:
    """Minimum of the discrete quotient ``||grad u||^2 / |u|_{2*}^2``.

    Normalised gradient descent in the ``H^1_0`` metric, started from a
    radial bump; with ``step = 1`` each step is the nonlinear power
    iteration ``u <- (-Delta_h)^{-1} |u|^(2*-2) u``.
    """
    if grid.dim < 3:
        raise ValueError("the Sobolev level bound is used for N >= 3 only")
    crit = 2.0 * grid.dim / (grid.dim - 2)
    K = ShiftedPoisson(grid)
    u = grid.field(lambda *x: np.exp(-((grid.radius / (grid.L / 3)) ** 2))) if u0 is None else u0
    u = u / integrate(np.abs(u) ** crit, grid) ** (1 / crit)
    q = sobolev_quotient(u, grid)
    for _ in range(max_iter):
        # gradient of the quotient in the H^1_0 metric, with |u|_{2*} = 1
        target = grid.embed(K.solve(grid.interior(np.abs(u) ** (crit - 2) * u)))
        u_new = (1.0 - step) * u + step * q * target
        u_new /= integrate(np.abs(u_new) ** crit, grid) ** (1 / crit)
        q_new = sobolev_quotient(u_new, grid)
        if q_new > q:
            step *= 0.5
            continue
        done = abs(q - q_new) <= rtol * q_new
        u, q = u_new, q_new
        if done:
            return q
    raise SolverError(f"Sobolev quotient descent did not converge in {max_iter} iterations")
