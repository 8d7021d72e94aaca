"""Uniform tensor grid on [-L, L]^N with homogeneous Dirichlet boundary.

Fields are plain ``numpy`` arrays of shape ``grid.shape`` whose boundary
entries are zero.  Unknowns of the discrete problems are the interior nodes;
``grid.interior`` and ``grid.embed`` convert between the two layouts.

The gradient quadrature (forward differences over every grid edge) and the
``2N+1``-point stencil form a summation-by-parts pair, so

    sum(w * laplacian_apply(u) * v) == grad_pairing(u, v)

holds to round-off for fields vanishing on the boundary.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class NonFiniteError(ValueError):
    """A field contains NaN or Inf."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


def check_finite(u, what="field"):
    if not np.all(np.isfinite(u)):
        idx = tuple(int(i) for i in np.argwhere(~np.isfinite(u))[0])
        raise NonFiniteError(f"non-finite value in {what} at node {idx}", index=idx)


@dataclass(frozen=True)
class GridSpec:
    dim: int
    n: int
    L: float

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.dim}")
        if self.n < 9 or self.n % 2 == 0:
            raise ValueError(f"nodes_per_axis must be odd and >= 9, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"half_extent must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / (self.n - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def n_interior(self) -> int:
        return (self.n - 2) ** self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.n)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.axis] * self.dim), indexing="ij"))

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(sum(x**2 for x in self.coords))

    @cached_property
    def boundary(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for ax in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[ax] = 0
            mask[tuple(idx)] = True
            idx[ax] = -1
            mask[tuple(idx)] = True
        return mask

    @cached_property
    def weights(self) -> np.ndarray:
        w1 = np.ones(self.n)
        w1[0] = w1[-1] = 0.5
        w = np.ones(self.shape) * self.h**self.dim
        for ax in range(self.dim):
            shape = [1] * self.dim
            shape[ax] = self.n
            w = w * w1.reshape(shape)
        return w

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def _inner(self):
        return (slice(1, -1),) * self.dim

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def interior(self, u: np.ndarray) -> np.ndarray:
        """Flatten the interior block of a field (row-major)."""
        return np.ascontiguousarray(u[self._inner]).ravel()

    def embed(self, x: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`interior`; boundary set to zero."""
        u = self.zeros()
        u[self._inner] = np.reshape(x, (self.n - 2,) * self.dim)
        return u

    def field(self, fn) -> np.ndarray:
        """Evaluate ``fn(*coords)`` on the nodes and zero the boundary."""
        u = np.array(np.broadcast_to(fn(*self.coords), self.shape), dtype=float)
        u[self.boundary] = 0.0
        return u

    @cached_property
    def neg_laplacian_matrix(self) -> sp.csr_matrix:
        """Sparse ``-Delta_h`` on the interior unknowns."""
        m = self.n - 2
        T = sp.diags(
            [-np.ones(m - 1), 2.0 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1]
        ) / self.h**2
        eye = sp.identity(m, format="csr")
        out = None
        for ax in range(self.dim):
            term = None
            for k in range(self.dim):
                factor = T if k == ax else eye
                term = factor if term is None else sp.kron(term, factor)
            out = term if out is None else out + term
        return sp.csr_matrix(out)


@dataclass(frozen=True)
class RegionMask:
    inside: np.ndarray
    label: str  # "Omega", "OmegaTilde" or "SuppObstacle"

    def __post_init__(self):
        if self.label not in ("Omega", "OmegaTilde", "SuppObstacle"):
            raise ValueError(f"unknown region label {self.label!r}")


def ball_mask(grid: GridSpec, radius: float, center=None, label="Omega") -> RegionMask:
    """Nodes strictly inside ``B(center, radius)``."""
    if center is None:
        r = grid.radius
    else:
        r = np.sqrt(sum((x - c) ** 2 for x, c in zip(grid.coords, center)))
    return RegionMask(r < radius, label)


def check_nesting(grid: GridSpec, supp: RegionMask, omega: RegionMask, tilde: RegionMask):
    if np.any(supp.inside & ~omega.inside):
        raise ValueError("obstacle support is not contained in Omega")
    if np.any(omega.inside & ~tilde.inside):
        raise ValueError("Omega is not contained in OmegaTilde")
    if np.any(tilde.inside & grid.boundary):
        raise ValueError("OmegaTilde touches the box boundary")


def random_field(grid: GridSpec, rng: np.random.Generator, modes=6, decay=1.0):
    """Smooth random field: sine series with ``modes`` terms per axis.

    Coefficients are standard normal damped by ``(|k|^2)^(-decay)``; the
    result vanishes on the boundary and has unit max-norm.
    """
    ks = np.arange(1, modes + 1)
    basis = np.sin(np.outer(ks, grid.axis + grid.L) * np.pi / (2 * grid.L))
    basis[:, [0, -1]] = 0.0
    kk = np.meshgrid(*([ks] * grid.dim), indexing="ij")
    coef = rng.standard_normal((modes,) * grid.dim) * (sum(k**2 for k in kk) ** -decay)
    u = coef
    for ax in range(grid.dim):
        u = np.tensordot(u, basis, axes=([0], [0]))
    return u / np.max(np.abs(u))


def integrate(u: np.ndarray, grid: GridSpec) -> float:
    """Trapezoidal quadrature of a nodal field."""
    check_finite(u)
    return float(np.sum(grid.weights * u))


def laplacian_apply(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    """``-Delta_h u`` with the standard ``2N+1``-point stencil; zero on the boundary."""
    out = grid.zeros()
    inner = grid._inner
    acc = 2.0 * grid.dim * u[inner]
    for ax in range(grid.dim):
        lo = list(inner)
        hi = list(inner)
        lo[ax] = slice(0, -2)
        hi[ax] = slice(2, None)
        acc = acc - u[tuple(lo)] - u[tuple(hi)]
    out[inner] = acc / grid.h**2
    return out


def grad_pairing(u: np.ndarray, v: np.ndarray, grid: GridSpec) -> float:
    """Forward-difference quadrature of ``int grad u . grad v``."""
    total = 0.0
    for ax in range(grid.dim):
        total += float(np.sum(np.diff(u, axis=ax) * np.diff(v, axis=ax)))
    return total * grid.h ** (grid.dim - 2)


def norm_lambda(u: np.ndarray, lam: float, V: np.ndarray, grid: GridSpec) -> float:
    """Discrete ``||u||_lambda``; ``lam = 0`` gives the H^1 norm."""
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    if np.any(V < 0):
        idx = tuple(int(i) for i in np.argwhere(V < 0)[0])
        raise ValueError(f"potential is negative at node {idx}")
    sq = grad_pairing(u, u, grid) + integrate((1.0 + lam * V) * u * u, grid)
    return float(np.sqrt(max(sq, 0.0)))


def h1_mass(u: np.ndarray, region: np.ndarray, grid: GridSpec) -> float:
    """H^1 density of ``u`` summed over a node set.

    Edges contribute only when both end points lie in ``region``; over the
    whole box this is exactly ``norm_lambda(u, 0, .)**2``.
    """
    check_finite(u)
    mass = float(np.sum(grid.weights * u * u * region))
    scale = grid.h ** (grid.dim - 2)
    for ax in range(grid.dim):
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        both = region[tuple(lo)] & region[tuple(hi)]
        mass += scale * float(np.sum(np.diff(u, axis=ax) ** 2 * both))
    return mass


def tail_mass(u: np.ndarray, R: float, grid: GridSpec) -> float:
    """H^1 mass of ``u`` over nodes with ``|x| > R``."""
    if not 0 < R < grid.L:
        raise ValueError(f"tail radius must lie in (0, L={grid.L}), got {R}")
    return h1_mass(u, grid.radius > R, grid)
