"""Penalised functional, its gradient, the obstacle penalty operator.

    I(u) = 1/2 ||u||_lam^2 + 1/(2 eps) int_Omega [(phi - u)^+]^2 - int G(x, u)

The strong residual returned by :func:`residual` is the nodal gradient of
``I`` divided by the quadrature weight, so ``integrate(residual(u) * v)``
equals the directional derivative ``I'(u) v`` for every ``v`` vanishing on
the boundary.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .domain import (
    GridSpec,
    NonFiniteError,
    check_finite,
    check_nesting,
    grad_pairing,
    integrate,
    laplacian_apply,
    norm_lambda,
    random_field,
)
from .linalg import shifted_solver
from .model import (
    EXP_CAP,
    ExpCritical,
    Nonlinearity,
    ObstacleSpec,
    PotentialSpec,
    TruncationParams,
    G_eval,
    dg_eval,
    g_eval,
    truncation_build,
    truncation_k,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProblemSpec:
    grid: GridSpec
    potential: PotentialSpec
    obstacle: ObstacleSpec
    nonlinearity: Nonlinearity
    truncation: TruncationParams
    lam: float
    eps: float

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if isinstance(self.nonlinearity, ExpCritical) != (self.grid.dim == 2):
            raise ValueError("use ExpCritical for N = 2 and PowerCritical for N >= 3")
        if getattr(self.nonlinearity, "dim", self.grid.dim) != self.grid.dim:
            raise ValueError("nonlinearity dimension does not match the grid")
        if abs(self.truncation.k - truncation_k(self.nonlinearity)) > 1e-14 * self.truncation.k:
            raise ValueError("truncation k does not match the nonlinearity")
        self.obstacle.check_inside(self.potential)
        check_nesting(
            self.grid,
            self.obstacle.support(self.grid),
            self.potential.omega(self.grid),
            self.potential.omega_tilde(self.grid),
        )

    @classmethod
    def build(cls, grid, potential, obstacle, nonlinearity, lam, eps):
        return cls(grid, potential, obstacle, nonlinearity, truncation_build(nonlinearity), lam, eps)

    def with_params(self, **changes) -> "ProblemSpec":
        return dataclasses.replace(self, **changes)

    @cached_property
    def V(self) -> np.ndarray:
        return self.potential.values(self.grid)

    @cached_property
    def phi(self) -> np.ndarray:
        return self.obstacle.values(self.grid)

    @cached_property
    def phi_plus(self) -> np.ndarray:
        return np.maximum(self.phi, 0.0)

    @cached_property
    def omega(self) -> np.ndarray:
        return self.potential.omega(self.grid).inside

    @cached_property
    def tilde(self) -> np.ndarray:
        return self.potential.omega_tilde(self.grid).inside

    @cached_property
    def mass_coef(self) -> np.ndarray:
        return 1.0 + self.lam * self.V

    @cached_property
    def riesz(self) -> SPDSolver:
        """Solver for the (strong-form) operator of the lambda inner product."""
        return shifted_solver(self.grid, self.grid.interior(self.mass_coef))

    def norm(self, u) -> float:
        return norm_lambda(u, self.lam, self.V, self.grid)

    def dual_norm(self, r) -> float:
        """Norm of ``v -> integrate(r v)`` in the dual of ``(E, ||.||_lam)``."""
        b = self.grid.interior(r)
        return math.sqrt(max(float(b @ self.riesz.solve(b)), 0.0) * self.grid.cell_volume)

    def riesz_map(self, r) -> np.ndarray:
        """Field ``d`` with ``<d, v>_lam = integrate(r v)`` for all ``v``."""
        return self.grid.embed(self.riesz.solve(self.grid.interior(r)))


@dataclass(frozen=True)
class EnergyBreakdown:
    quadratic: float
    penalty: float
    nonlinear: float
    total: float

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: float(d[k]) for k in ("quadratic", "penalty", "nonlinear", "total")})


def _G(u, ps: ProblemSpec):
    G = G_eval(u, ps.tilde, ps.truncation, ps.nonlinearity)
    if not np.all(np.isfinite(G)):
        umax = float(np.max(np.abs(u)))
        raise NonFiniteError(f"nonlinear primitive overflowed (max |u| = {umax:.6g})")
    return G


def hinge(u, ps: ProblemSpec) -> np.ndarray:
    """``(phi - u)^+`` on Omega nodes, zero elsewhere."""
    return np.where(ps.omega, np.maximum(ps.phi - u, 0.0), 0.0)


def energy(u: np.ndarray, ps: ProblemSpec) -> EnergyBreakdown:
    check_finite(u)
    w = ps.grid.weights
    quadratic = 0.5 * (grad_pairing(u, u, ps.grid) + float(np.sum(w * ps.mass_coef * u * u)))
    p = hinge(u, ps)
    penalty = float(np.sum(w * p * p)) / (2.0 * ps.eps)
    nonlinear = float(np.sum(w * _G(u, ps)))
    return EnergyBreakdown(quadratic, penalty, nonlinear, quadratic + penalty - nonlinear)


def energy_total(u, ps) -> float:
    return energy(u, ps).total


def residual(u: np.ndarray, ps: ProblemSpec) -> np.ndarray:
    """Nodal strong residual of the penalised equation; zero on the boundary."""
    check_finite(u)
    g = g_eval(u, ps.tilde, ps.truncation, ps.nonlinearity)
    if not np.all(np.isfinite(g)):
        raise NonFiniteError(f"nonlinearity overflowed (max |u| = {np.max(np.abs(u)):.6g})")
    r = laplacian_apply(u, ps.grid) + ps.mass_coef * u - hinge(u, ps) / ps.eps - g
    r[ps.grid.boundary] = 0.0
    return r


def jacobian_diag(u: np.ndarray, ps: ProblemSpec) -> np.ndarray:
    """Zeroth-order part of the generalised Jacobian of :func:`residual`.

    The hinge counts as active only where ``u < phi`` strictly.
    """
    active = ps.omega & (u < ps.phi)
    dg = dg_eval(u, ps.tilde, ps.truncation, ps.nonlinearity)
    return ps.mass_coef + active / ps.eps - dg


def residual_norm(u, ps) -> float:
    return float(np.max(np.abs(residual(u, ps))))


def penalty_field(u, ps: ProblemSpec) -> np.ndarray:
    """Nodal density of ``P(u)``: ``<P(u), v> = integrate(penalty_field(u) * v)``."""
    return -hinge(u, ps)


def penalty_pairing(u, v, ps: ProblemSpec) -> float:
    return integrate(penalty_field(u, ps) * v, ps.grid)


class AxiomViolation(RuntimeError):
    def __init__(self, axiom, witness, report=None):
        super().__init__(f"penalty axiom {axiom} violated: {witness}")
        self.axiom = axiom
        self.witness = witness
        self.report = report


def penalty_axioms_check(ps: ProblemSpec, trials: int = 100, seed: int = 0) -> dict:
    """Randomised check of the four penalty-operator axioms.

    Returns a report ``{"P1": {...}, ..., "passed": bool}``; raises
    :class:`AxiomViolation` naming the first failing axiom and its witness.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    grid = ps.grid
    rng = np.random.default_rng(seed)
    amp = 2.0 * max(float(np.max(np.abs(ps.phi))), 1e-3)

    def rand():
        return amp * random_field(grid, rng, modes=8)

    report = {}
    failures = []

    # P1: t -> <P(u + t v), w> is continuous; the hinge is 1-Lipschitz
    worst = 0.0
    ts = np.linspace(0.0, 1.0, 65)
    for i in range(trials):
        u, v, w = rand(), rand(), rand()
        vals = np.array([penalty_pairing(u + t * v, w, ps) for t in ts])
        lip = integrate(ps.omega * np.abs(v) * np.abs(w), grid)
        jump = float(np.max(np.abs(np.diff(vals))))
        ratio = jump / (lip * (ts[1] - ts[0]) + 1e-300)
        worst = max(worst, ratio)
        if ratio > 1 + 1e-9:
            failures.append(("P1", {"trial": i, "jump": jump, "lipschitz": lip}))
            break
    report["P1"] = {"passed": worst <= 1 + 1e-9, "max_jump_over_bound": worst}

    # P2: monotonicity
    worst = math.inf
    for i in range(trials):
        u, v = rand(), rand()
        d = u - v
        val = penalty_pairing(u, d, ps) - penalty_pairing(v, d, ps)
        scale = integrate(ps.omega * (np.abs(u) + np.abs(v) + np.abs(ps.phi)) * np.abs(d), grid)
        worst = min(worst, val / (scale + 1e-300))
        if val < -1e-12 * scale:
            failures.append(("P2", {"trial": i, "pairing": val, "scale": scale}))
            break
    report["P2"] = {"passed": worst >= -1e-12, "min_scaled_pairing": worst}

    # P3: P(u) = 0 exactly on K, nonzero off K
    ok_fwd = ok_conv = True
    interior_omega = np.argwhere(ps.omega & ~grid.boundary)
    for i in range(trials):
        u = np.where(ps.omega, np.maximum(ps.phi, rand()), rand())
        u[grid.boundary] = 0.0
        if np.any(penalty_field(u, ps) != 0.0):
            ok_fwd = False
            failures.append(("P3", {"trial": i, "direction": "u in K but P(u) != 0"}))
            break
        node = tuple(interior_omega[rng.integers(len(interior_omega))])
        u[node] = ps.phi[node] - 1.0
        if not np.any(penalty_field(u, ps) != 0.0):
            ok_conv = False
            failures.append(("P3", {"trial": i, "direction": "u not in K but P(u) = 0", "node": node}))
            break
    report["P3"] = {"passed": ok_fwd and ok_conv, "forward": ok_fwd, "converse": ok_conv}

    # P4: P maps the ball ||u||_lam <= R into a bounded set of the dual
    R = 10.0 * max(ps.norm(ps.phi_plus), 1e-3)
    phi2 = math.sqrt(integrate(ps.omega * ps.phi**2, grid))
    bound = phi2 + R
    sup = 0.0
    for _ in range(trials):
        u = rand()
        u *= R * rng.uniform() / ps.norm(u)
        sup = max(sup, ps.dual_norm(penalty_field(u, ps)))
    p4 = math.isfinite(sup) and sup <= bound * (1 + 1e-10)
    if not p4:
        failures.append(("P4", {"sup": sup, "bound": bound}))
    report["P4"] = {"passed": p4, "ball_radius": R, "sup_dual_norm": sup, "bound": bound}

    report["passed"] = not failures
    if failures:
        axiom, witness = failures[0]
        raise AxiomViolation(axiom, witness, report)
    return report


def tm_moment(u: np.ndarray, alpha: float, qexp: float, grid: GridSpec) -> float:
    """``integrate((exp(alpha u^2) - 1)^qexp)``; ``inf`` once the exponent overflows."""
    if grid.dim != 2:
        raise ValueError("Trudinger-Moser moments are defined for N = 2")
    if not alpha > 0 or qexp < 1:
        raise ValueError("need alpha > 0 and qexp >= 1")
    expo = alpha * u * u
    top = float(np.max(expo))
    if top * qexp > EXP_CAP:
        log.warning("Trudinger-Moser moment overflow: max exponent %.4g", top * qexp)
        return math.inf
    return integrate(np.expm1(expo) ** qexp, grid)


def norm_bound(u, level: float, ps: ProblemSpec, c_embed: float) -> dict:
    """Check ``||u||_lam^2 <= (4e/(e-2)) (level + slack)`` at a critical point.

    ``e`` is the Ambrosetti-Rabinowitz exponent of the nonlinearity and the
    slack ``(|phi|_2^2 + c_embed |phi|_2 ||u||_lam) / (eps e)`` accounts for
    the penalty term; ``c_embed`` bounds ``|v|_2 <= c_embed ||v||_lam``.
    """
    e = ps.nonlinearity.ar_exponent
    fac = 4.0 * e / (e - 2.0)
    phi2 = math.sqrt(integrate(np.where(ps.omega, ps.phi, 0.0) ** 2, ps.grid))
    nrm = ps.norm(u)
    slack = (phi2**2 + c_embed * phi2 * nrm) / (ps.eps * e)
    rhs = fac * (level + slack)
    return {
        "norm_sq": nrm * nrm,
        "bound": rhs,
        "level_part": fac * level,
        "slack_part": fac * slack,
        "c_embed": c_embed,
        "ok": nrm * nrm <= rhs,
    }
