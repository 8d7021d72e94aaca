"""Sparse SPD solves on the interior unknowns."""
from __future__ import annotations

import math

import numpy as np
import pyamg
import scipy.fft
import scipy.sparse as sp
import scipy.sparse.linalg as sla

DIRECT_LIMIT = 20_000  # unknowns; above this a direct factorisation is too slow in 3D
FFT_CONTRAST = 64.0  # max/min shift for which the sine-transform preconditioner wins


def shifted_operator(grid, coef_interior) -> sp.csr_matrix:
    """``-Delta_h + diag(coef)`` on the interior unknowns (strong form)."""
    return sp.csr_matrix(grid.neg_laplacian_matrix + sp.diags(coef_interior))


def shifted_solver(grid, coef_interior, rtol=1e-13) -> "SPDSolver":
    return SPDSolver(shifted_operator(grid, coef_interior), rtol, grid, np.asarray(coef_interior))


def dirichlet_eigenvalues(grid) -> np.ndarray:
    """Eigenvalues of ``-Delta_h`` on the interior, in sine-transform layout."""
    m = grid.n - 2
    k = np.arange(1, m + 1)
    lam1 = (2.0 - 2.0 * np.cos(np.pi * k / (m + 1))) / grid.h**2
    eig = 0.0
    for ax in range(grid.dim):
        shape = [1] * grid.dim
        shape[ax] = m
        eig = eig + lam1.reshape(shape)
    return eig


class ShiftedPoisson:
    """Exact inverse of ``-Delta_h + c0`` via the type-I sine transform."""

    def __init__(self, grid, shift=0.0):
        self.eig = dirichlet_eigenvalues(grid) + shift
        self.shape = self.eig.shape

    def solve(self, b):
        bh = scipy.fft.dstn(np.reshape(b, self.shape), type=1, norm="ortho")
        return scipy.fft.idstn(bh / self.eig, type=1, norm="ortho").ravel()


class SPDSolver:
    """SPD solves with ``A = -Delta_h + diag(c)``.

    Small systems use a sparse LU.  Larger ones use CG, preconditioned by
    the sine-transform inverse of ``-Delta_h + c0`` when ``grid`` and
    ``coef`` are given and ``c`` varies little, by smoothed-aggregation AMG
    otherwise.
    """

    def __init__(self, A, rtol=1e-13, grid=None, coef=None):
        self.A = sp.csr_matrix(A)
        self.shape = self.A.shape
        self.rtol = rtol
        self._lu = self._ml = None
        if self.shape[0] <= DIRECT_LIMIT:
            self._lu = sla.splu(sp.csc_matrix(self.A))
        elif grid is not None and coef is not None and 0 < coef.min() and coef.max() <= FFT_CONTRAST * coef.min():
            pre = ShiftedPoisson(grid, math.sqrt(coef.min() * coef.max()))
            self._ml = sla.LinearOperator(self.shape, matvec=pre.solve, dtype=float)
        else:
            ml = pyamg.smoothed_aggregation_solver(self.A, symmetry="symmetric")
            self._ml = ml.aspreconditioner(cycle="V")

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self._lu is not None:
            return self._lu.solve(np.asarray(b, dtype=float))
        if not np.any(b):
            return np.zeros_like(b)
        x, info = sla.cg(self.A, b, rtol=self.rtol, atol=0.0, M=self._ml, maxiter=2000)
        if info != 0:
            raise RuntimeError(f"preconditioned CG did not converge (info={info})")
        return x

    def as_operator(self) -> sla.LinearOperator:
        return sla.LinearOperator(self.shape, matvec=self.solve, dtype=float)
