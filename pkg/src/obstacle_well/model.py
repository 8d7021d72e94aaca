"""Potential well, obstacle, nonlinearities and their truncation outside the well.

Outside the neighbourhood ``OmegaTilde`` of the well the nonlinearity ``f`` is
replaced by ``h(t) = f(t)`` for ``t <= a`` and ``t / k`` above ``a``, where ``a``
solves ``f(a) = a / k``.  Inside ``OmegaTilde`` the original ``f`` is kept.
All evaluation functions are vectorised over ``t``; ``inside`` is a boolean
array (or scalar) telling whether the node lies in ``OmegaTilde``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .domain import GridSpec, RegionMask, ball_mask

EXP_CAP = 700.0  # largest exponent alpha*t^2 evaluated before overflow


@dataclass(frozen=True)
class PotentialSpec:
    well_radius: float
    scale: float
    tilde_radius: float

    def __post_init__(self):
        if not self.well_radius > 0:
            raise ValueError("well_radius must be positive")
        if self.scale < 0:
            raise ValueError("potential scale must be nonnegative")
        if not self.tilde_radius > self.well_radius:
            raise ValueError("tilde_radius must exceed well_radius")

    def values(self, grid: GridSpec) -> np.ndarray:
        dist = np.maximum(grid.radius - self.well_radius, 0.0)
        return self.scale * np.minimum(1.0, dist**2)

    def omega(self, grid: GridSpec) -> RegionMask:
        return ball_mask(grid, self.well_radius, label="Omega")

    def omega_tilde(self, grid: GridSpec) -> RegionMask:
        return ball_mask(grid, self.tilde_radius, label="OmegaTilde")


@dataclass(frozen=True)
class ObstacleSpec:
    center: tuple[float, ...]
    radius: float
    height: float
    outside_depth: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.radius > 0 or not self.height > 0:
            raise ValueError("obstacle radius and height must be positive")
        if self.outside_depth < 0:
            raise ValueError("outside_depth must be nonnegative")

    def check_inside(self, potential: PotentialSpec):
        if math.hypot(*self.center) + self.radius >= potential.well_radius:
            raise ValueError("obstacle ball B(x0, r_phi) is not inside Omega")

    def values(self, grid: GridSpec) -> np.ndarray:
        if len(self.center) != grid.dim:
            raise ValueError("obstacle center has the wrong dimension")
        s = sum((x - c) ** 2 for x, c in zip(grid.coords, self.center)) / self.radius**2
        phi = np.where(
            s < 1.0,
            self.height * (1.0 - s),
            -self.outside_depth * np.minimum(1.0, s - 1.0),
        )
        return phi

    def support(self, grid: GridSpec) -> RegionMask:
        return RegionMask(self.values(grid) > 0, "SuppObstacle")


@dataclass(frozen=True)
class PowerCritical:
    """``f(t) = mu t^(q-1) + t^(2*-1)`` for ``t >= 0``, zero for ``t <= 0``."""

    mu: float
    q: float
    dim: int = 3
    variant: str = field(default="PowerCritical", init=False)

    def __post_init__(self):
        if self.dim < 3:
            raise ValueError("PowerCritical needs dimension >= 3")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not 2 < self.q < self.crit:
            raise ValueError(f"q must lie in (2, {self.crit}), got {self.q}")

    @property
    def crit(self) -> float:
        return 2.0 * self.dim / (self.dim - 2)

    @property
    def ar_exponent(self) -> float:
        return self.q

    def f(self, t):
        t = np.maximum(t, 0.0)
        return self.mu * t ** (self.q - 1) + t ** (self.crit - 1)

    def F(self, t):
        t = np.maximum(t, 0.0)
        return self.mu * t**self.q / self.q + t**self.crit / self.crit

    def df(self, t):
        t = np.maximum(t, 0.0)
        return self.mu * (self.q - 1) * t ** (self.q - 2) + (self.crit - 1) * t ** (
            self.crit - 2
        )

    def log_ratio(self, t):
        """``log(f(t) / t)`` for ``t > 0`` without overflow."""
        s = np.log(t)
        return np.logaddexp(math.log(self.mu) + (self.q - 2) * s, (self.crit - 2) * s)


@dataclass(frozen=True)
class ExpCritical:
    """``f(t) = nu t^p exp(alpha0 t^2)`` for ``t >= 0``, zero for ``t <= 0``."""

    nu: float
    p: float
    alpha0: float
    theta: float
    variant: str = field(default="ExpCritical", init=False)

    def __post_init__(self):
        if not self.nu > 0 or not self.p > 1 or not self.alpha0 > 0:
            raise ValueError("ExpCritical needs nu > 0, p > 1, alpha0 > 0")
        if not self.theta > 2:
            raise ValueError("theta must exceed 2")
        t = np.logspace(-4, 0, 200) * math.sqrt(0.95 * EXP_CAP / self.alpha0)
        lhs = self.theta * self.F(t)
        rhs = t * self.f(t)
        if not np.all((lhs > 0) & (lhs <= rhs * (1 + 1e-12))):
            raise ValueError(f"theta={self.theta} violates 0 < theta F(t) <= t f(t)")

    dim = 2

    @property
    def ar_exponent(self) -> float:
        return self.theta

    def f(self, t):
        t = np.maximum(t, 0.0)
        with np.errstate(over="ignore"):
            return self.nu * t**self.p * np.exp(self.alpha0 * t * t)

    def F(self, t):
        # closed form: nu t^(p+1)/(p+1) * 1F1((p+1)/2; (p+3)/2; alpha0 t^2)
        t = np.maximum(t, 0.0)
        a = 0.5 * (self.p + 1)
        z = self.alpha0 * t * t
        # hyp1f1 overflows past z ~ 710 and gets very slow for huge z
        big = z > 2.0 * EXP_CAP
        with np.errstate(over="ignore", invalid="ignore"):
            val = (
                self.nu
                * t ** (self.p + 1)
                / (self.p + 1)
                * special.hyp1f1(a, a + 1, np.where(big, 0.0, z))
            )
        return np.where(big, np.inf, val)

    def df(self, t):
        t = np.maximum(t, 0.0)
        with np.errstate(over="ignore"):
            e = np.exp(self.alpha0 * t * t)
            return self.nu * e * (self.p * t ** (self.p - 1) + 2 * self.alpha0 * t ** (self.p + 1))

    def log_ratio(self, t):
        return math.log(self.nu) + (self.p - 1) * np.log(t) + self.alpha0 * t * t


Nonlinearity = PowerCritical | ExpCritical


@dataclass(frozen=True)
class TruncationParams:
    k: float
    a: float


def truncation_k(nl: Nonlinearity) -> float:
    e = nl.ar_exponent
    return 2.0 * e / (e - 2.0)


def ratio_root(nl: Nonlinearity, c: float, lo=1e-12, hi=1e6) -> float:
    """Solve ``f(t)/t = c`` by log-space bisection plus a Newton polish."""
    target = math.log(c)

    def phi(t):
        return float(nl.log_ratio(t)) - target

    slo, shi = math.log(lo), math.log(hi)
    if not phi(lo) < 0 < phi(hi):
        raise ValueError(f"f(t)/t - {c} has no sign change on [{lo}, {hi}]")
    for _ in range(200):
        mid = 0.5 * (slo + shi)
        if phi(math.exp(mid)) < 0:
            slo = mid
        else:
            shi = mid
        if shi - slo < 1e-15:
            break
    t = math.exp(0.5 * (slo + shi))
    for _ in range(3):
        resid = float(nl.f(t)) - c * t
        slope = float(nl.df(t)) - c
        if slope <= 0 or resid == 0:
            break
        t_new = t - resid / slope
        if abs(float(nl.f(t_new)) - c * t_new) >= abs(resid):
            break
        t = t_new
    return t


def truncation_build(nl: Nonlinearity) -> TruncationParams:
    k = truncation_k(nl)
    a = ratio_root(nl, 1.0 / k)
    if abs(float(nl.f(a)) - a / k) > 1e-12 * (a / k):
        raise ValueError("truncation root did not reach f(a) = a/k to 1e-12")
    return TruncationParams(k=k, a=a)


def h_eval(t, tp: TruncationParams, nl: Nonlinearity):
    t = np.asarray(t, dtype=float)
    return np.where(t <= tp.a, nl.f(np.minimum(t, tp.a)), t / tp.k)


def H_eval(t, tp: TruncationParams, nl: Nonlinearity):
    t = np.asarray(t, dtype=float)
    Fa = float(nl.F(tp.a))
    return np.where(
        t <= tp.a, nl.F(np.minimum(t, tp.a)), Fa + (t * t - tp.a**2) / (2 * tp.k)
    )


def g_eval(t, inside, tp: TruncationParams, nl: Nonlinearity):
    """``g(x, t)``: ``f`` on ``OmegaTilde`` nodes, ``h`` elsewhere."""
    t = np.asarray(t, dtype=float)
    return np.where(inside, nl.f(t), h_eval(t, tp, nl))


def G_eval(t, inside, tp: TruncationParams, nl: Nonlinearity):
    """Primitive of :func:`g_eval` in ``t`` with ``G(x, 0) = 0``."""
    t = np.asarray(t, dtype=float)
    return np.where(inside, nl.F(t), H_eval(t, tp, nl))


def dg_eval(t, inside, tp: TruncationParams, nl: Nonlinearity):
    """``d/dt g(x, t)``; at the seam ``t = a`` the left derivative is used."""
    t = np.asarray(t, dtype=float)
    outer = np.where(t <= tp.a, nl.df(np.minimum(t, tp.a)), 1.0 / tp.k)
    return np.where(inside, nl.df(t), outer)


def f3_constant(nl: ExpCritical, tmax=None, samples=2000) -> float:
    """Empirical ``max |f'(t)| exp(-alpha0 t^2)``; a diagnostic only."""
    if tmax is None:
        tmax = math.sqrt(0.95 * EXP_CAP / nl.alpha0)
    t = np.linspace(0.0, tmax, samples)
    return float(np.max(np.abs(nl.df(t)) * np.exp(-nl.alpha0 * t * t)))


def truncation_inequalities(
    nl: Nonlinearity,
    tp: TruncationParams,
    inside,
    V,
    samples: int = 10_000,
    lams=(0.0, 1.0, 100.0),
    seed: int = 0,
    rtol: float = 1e-12,
) -> dict:
    """Count violations of the structural inequalities of ``g`` and ``G``.

    ``(node, t)`` pairs are drawn with nodes uniform over ``inside``/``V``
    (flattened nodal arrays) and ``t`` log-uniform.  Checked:

    * g1: ``g(x, t) = 0`` for ``t <= 0``
    * g2: ``g(x, t) / t <= 1e-3`` below the point where ``f(t)/t = 1e-3``
    * g3: ``g <= mu t^(q-1) + C t^(2*-1)`` with ``C`` the seam maximum
      (``g <= f`` for the exponential case)
    * g4: ``0 < e G <= t g`` inside ``OmegaTilde`` (``e = q`` or ``theta``)
    * g5: ``0 < 2 G <= t g <= (1 + lam V) t^2 / k`` outside ``OmegaTilde``
    """
    inside = np.asarray(inside, dtype=bool).ravel()
    V = np.asarray(V, dtype=float).ravel()
    rng = np.random.default_rng(seed)
    node = rng.integers(inside.size, size=samples)
    ins, vv = inside[node], V[node]
    if isinstance(nl, ExpCritical):
        tmax = math.sqrt(0.9 * EXP_CAP / nl.alpha0)
    else:
        tmax = 100.0 * tp.a
    t = np.exp(rng.uniform(math.log(1e-6 * tp.a), math.log(tmax), samples))
    g = g_eval(t, ins, tp, nl)
    G = G_eval(t, ins, tp, nl)
    tg = t * g
    out = {}

    neg = -t
    out["g1"] = int(np.count_nonzero(g_eval(neg, ins, tp, nl) != 0.0))

    t0 = ratio_root(nl, 1e-3)
    small = t * (t0 / tmax) if t0 < tmax else t
    r = g_eval(small, ins, tp, nl) / small
    out["g2"] = int(np.count_nonzero(r > 1e-3 * (1 + rtol)))
    out["g2_t0"] = t0

    if isinstance(nl, PowerCritical):
        seam = np.linspace(1e-6, 1.0, 2001) * tmax
        hs = h_eval(seam, tp, nl)
        c_beta = float(np.max(np.maximum(hs - nl.mu * seam ** (nl.q - 1), 0.0) / seam ** (nl.crit - 1)))
        c_beta = max(c_beta, 1.0)
        bound = nl.mu * t ** (nl.q - 1) + c_beta * t ** (nl.crit - 1)
        out["g3_C"] = c_beta
    else:
        bound = nl.f(t)
    out["g3"] = int(np.count_nonzero(np.abs(g) > bound * (1 + rtol)))

    e = nl.ar_exponent
    m = ins
    out["g4"] = int(np.count_nonzero(~(G[m] > 0) | (e * G[m] > tg[m] * (1 + rtol))))

    m = ~ins
    bad = ~(G[m] > 0) | (2.0 * G[m] > tg[m] * (1 + rtol))
    for lam in lams:
        cap = (1.0 + lam * vv[m]) * t[m] ** 2 / tp.k
        bad |= tg[m] > cap * (1 + rtol)
    out["g5"] = int(np.count_nonzero(bad))
    out["samples"] = int(samples)
    out["inside_samples"] = int(np.count_nonzero(ins))
    out["passed"] = all(out[k] == 0 for k in ("g1", "g2", "g3", "g4", "g5"))
    return out
