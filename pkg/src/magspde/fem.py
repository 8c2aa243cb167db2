"""P1 finite elements for a time-dependent elliptic operator on an interval.

The operator is ``-A(t)u = -(q(x, t) u')' + b(x, t) u'`` with homogeneous
Dirichlet conditions.  Boundary degrees of freedom are eliminated, so every
matrix here is ``n_interior x n_interior`` and tridiagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

__all__ = [
    "Mesh1D",
    "OperatorFamily",
    "FeMatrices",
    "SpectralDecomposition",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_load",
    "l2_project",
    "solve_mass",
    "generalized_eigendecomposition",
    "fractional_power_apply",
    "mass_norm",
    "prolongate",
]

# 2-point Gauss-Legendre rule on the reference element [0, 1]
_GAUSS_PTS = 0.5 + np.array([-1.0, 1.0]) / (2.0 * np.sqrt(3.0))
_GAUSS_WTS = np.array([0.5, 0.5])


@dataclass(frozen=True)
class Mesh1D:
    """Uniform partition of ``[a, b]`` with ``n_interior`` interior nodes."""

    a: float
    b: float
    n_interior: int

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError(f"need b > a, got a={self.a}, b={self.b}")
        if int(self.n_interior) != self.n_interior or self.n_interior < 1:
            raise ValueError(f"n_interior must be a positive integer, got {self.n_interior}")

    @property
    def h(self) -> float:
        return (self.b - self.a) / (self.n_interior + 1)

    @property
    def n_elements(self) -> int:
        return self.n_interior + 1

    @property
    def nodes(self) -> np.ndarray:
        """All node coordinates, boundary included."""
        return self.a + np.arange(self.n_interior + 2) * self.h

    @property
    def interior_nodes(self) -> np.ndarray:
        return self.nodes[1:-1]

    def quadrature(self):
        """Gauss points of every element, shape ``(n_elements, 2)``, and weights."""
        left = self.nodes[:-1]
        pts = left[:, None] + self.h * _GAUSS_PTS[None, :]
        return pts, self.h * _GAUSS_WTS


@dataclass(frozen=True)
class OperatorFamily:
    """Coefficients ``q(x, t)`` (diffusion) and ``b(x, t)`` (advection).

    Both callables must accept an array of positions and a scalar time.
    When built through :meth:`separable`, the diffusion factors as
    ``q0(x) * s(t)`` and the stiffness matrix is assembled once and rescaled.
    """

    diffusion: Callable[[np.ndarray, float], np.ndarray]
    advection: Callable[[np.ndarray, float], np.ndarray] | None = None
    ellipticity_floor: float = 1e-12
    spatial_diffusion: Callable[[np.ndarray], np.ndarray] | None = None
    time_factor: Callable[[float], float] | None = None

    def __post_init__(self):
        if not self.ellipticity_floor > 0:
            raise ValueError("ellipticity_floor must be positive")

    @classmethod
    def separable(cls, spatial, time_factor, ellipticity_floor=1e-12, advection=None):
        def diffusion(x, t):
            return spatial(x) * time_factor(t)

        return cls(
            diffusion=diffusion,
            advection=advection,
            ellipticity_floor=ellipticity_floor,
            spatial_diffusion=spatial,
            time_factor=time_factor,
        )

    @property
    def is_separable(self) -> bool:
        return self.spatial_diffusion is not None and self.time_factor is not None

    @property
    def self_adjoint(self) -> bool:
        return self.advection is None


def _tridiag(lower, diag, upper) -> sp.csr_matrix:
    n = len(diag)
    if n == 1:
        return sp.csr_matrix(np.array([[diag[0]]]))
    return sp.diags([lower, diag, upper], [-1, 0, 1], shape=(n, n), format="csr")


def assemble_mass(mesh: Mesh1D) -> sp.csr_matrix:
    """Consistent P1 mass matrix, Dirichlet rows and columns removed."""
    n, h = mesh.n_interior, mesh.h
    return _tridiag(np.full(n - 1, h / 6.0), np.full(n, 2.0 * h / 3.0), np.full(n - 1, h / 6.0))


def _element_integrals(mesh: Mesh1D, ops: OperatorFamily, t: float):
    pts, wts = mesh.quadrature()
    q = np.broadcast_to(np.asarray(ops.diffusion(pts, t), dtype=float), pts.shape)
    if np.min(q) < ops.ellipticity_floor:
        raise ValueError(
            f"diffusion coefficient {np.min(q):.3e} below ellipticity floor "
            f"{ops.ellipticity_floor:.3e} at t={t}"
        )
    q_int = q @ wts
    if ops.advection is None:
        return q_int, None, None
    bdr = np.broadcast_to(np.asarray(ops.advection(pts, t), dtype=float), pts.shape)
    # local hats on each element: left = 1 - xi, right = xi
    b_left = bdr @ (wts * (1.0 - _GAUSS_PTS))
    b_right = bdr @ (wts * _GAUSS_PTS)
    return q_int, b_left, b_right


def assemble_stiffness(mesh: Mesh1D, ops: OperatorFamily, t: float) -> sp.csr_matrix:
    """Stiffness matrix ``K(t)`` of the bilinear form of ``-A(t)``.

    ``K_ij = int q phi_i' phi_j' + int b phi_j' phi_i``, 2-point Gauss per element.
    """
    h = mesh.h
    q_int, b_left, b_right = _element_integrals(mesh, ops, t)
    # element e joins global nodes e and e+1; interior index = global - 1
    kq = q_int / h**2
    diag = kq[:-1] + kq[1:]
    off = -kq[1:-1]
    lower = off.copy()
    upper = off.copy()
    if b_left is not None:
        # on element e: phi_left' = -1/h, phi_right' = +1/h
        bl, br = b_left / h, b_right / h
        # diagonal: node is the right end of element e-1 and the left end of element e
        diag = diag + br[:-1] - bl[1:]
        # upper (i, i+1): element between them, phi_i is left, phi_{i+1}' = +1/h
        upper = upper + bl[1:-1]
        # lower (i+1, i): phi_{i+1} is right, phi_i' = -1/h
        lower = lower - br[1:-1]
    return _tridiag(lower, diag, upper)


@dataclass
class FeMatrices:
    """Mass matrix plus a time-indexed stiffness matrix for one mesh."""

    mesh: Mesh1D
    ops: OperatorFamily
    mass: sp.csr_matrix = field(init=False)
    _base: sp.csr_matrix | None = field(init=False, default=None, repr=False)
    _q0_min: float = field(init=False, default=0.0, repr=False)

    def __post_init__(self):
        self.mass = assemble_mass(self.mesh)
        if self.ops.is_separable and self.ops.self_adjoint:
            base = OperatorFamily(
                diffusion=lambda x, t: self.ops.spatial_diffusion(x),
                ellipticity_floor=np.finfo(float).tiny,
            )
            self._base = assemble_stiffness(self.mesh, base, 0.0)
            self._q0_min = float(np.min(self.ops.spatial_diffusion(self.mesh.quadrature()[0])))

    @property
    def base_stiffness(self) -> sp.csr_matrix | None:
        """Time-independent factor ``K0`` when the family is separable."""
        return self._base

    def stiffness_at(self, t: float) -> sp.csr_matrix:
        if self._base is None:
            return assemble_stiffness(self.mesh, self.ops, t)
        s = float(self.ops.time_factor(t))
        if s * self._q0_min < self.ops.ellipticity_floor:
            raise ValueError(f"diffusion below ellipticity floor at t={t}")
        return self._base * s


def banded(matrix: sp.spmatrix) -> np.ndarray:
    """Tridiagonal matrix in LAPACK general band storage (1 sub, 1 super)."""
    n = matrix.shape[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = matrix.diagonal(1)
    ab[1] = matrix.diagonal(0)
    ab[2, :-1] = matrix.diagonal(-1)
    return ab


def solve_mass(mass: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    ab = np.zeros((2, mass.shape[0]))
    ab[0, 1:] = mass.diagonal(1)
    ab[1] = mass.diagonal(0)
    return sla.solveh_banded(ab[-1:] if mass.shape[0] == 1 else ab, rhs)


def assemble_load(mesh: Mesh1D, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """``int f phi_i`` for interior hats, 2-point Gauss per element."""
    pts, wts = mesh.quadrature()
    fv = np.broadcast_to(np.asarray(f(pts), dtype=float), pts.shape)
    left_part = fv @ (wts * (1.0 - _GAUSS_PTS))   # contribution to node e
    right_part = fv @ (wts * _GAUSS_PTS)          # contribution to node e+1
    return right_part[:-1] + left_part[1:]


def l2_project(mesh: Mesh1D, mass: sp.spmatrix, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Nodal coefficients of the L2 projection of ``f`` onto the P1 space."""
    return solve_mass(mass, assemble_load(mesh, f))


def mass_norm(mass: sp.spmatrix, v: np.ndarray) -> np.ndarray:
    """``sqrt(v^T M v)``; column-wise for 2-D input."""
    mv = mass @ v
    return np.sqrt(np.maximum(np.sum(v * mv, axis=0), 0.0))


@dataclass(frozen=True)
class SpectralDecomposition:
    """Generalized eigenpairs ``K v = lam M v`` with ``V^T M V = I``."""

    eigenvalues: np.ndarray
    vectors: np.ndarray
    mass: sp.csr_matrix
    # rows are (M v_k)^T, so ``weights @ u`` gives modal coordinates of u
    weights: np.ndarray

    def to_modes(self, v: np.ndarray) -> np.ndarray:
        return self.weights @ v

    def from_modes(self, c: np.ndarray) -> np.ndarray:
        return self.vectors @ c


def _dense(a) -> np.ndarray:
    return a.toarray() if sp.issparse(a) else np.asarray(a, dtype=float)


def generalized_eigendecomposition(mass, stiffness, *, rtol: float = 1e-12) -> SpectralDecomposition:
    """Solve ``K v = lam M v`` for symmetric ``K`` and SPD ``M``."""
    m = _dense(mass)
    k = _dense(stiffness)
    scale = max(np.abs(k).max(), np.finfo(float).tiny)
    if np.abs(k - k.T).max() > rtol * scale:
        raise ValueError("stiffness matrix is not symmetric; pass its symmetric part")
    k = 0.5 * (k + k.T)
    lam, vec = sla.eigh(k, m)
    mass_sp = sp.csr_matrix(mass)
    return SpectralDecomposition(
        eigenvalues=lam,
        vectors=vec,
        mass=mass_sp,
        weights=np.ascontiguousarray((m @ vec).T),
    )


def fractional_power_apply(eig: SpectralDecomposition, alpha: float, v: np.ndarray) -> np.ndarray:
    """``sum_k lam_k**alpha (v_k^T M v) v_k``."""
    if not -1.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [-1, 1], got {alpha}")
    if alpha == 0:
        return np.array(v, dtype=float, copy=True)
    c = eig.to_modes(v)
    power = eig.eigenvalues**alpha
    return eig.from_modes(power.reshape((-1,) + (1,) * (c.ndim - 1)) * c)


def prolongate(coarse: Mesh1D, fine: Mesh1D, v: np.ndarray) -> np.ndarray:
    """Evaluate a coarse P1 function at the interior nodes of a nested fine mesh."""
    if (fine.n_interior + 1) % (coarse.n_interior + 1) or fine.a != coarse.a or fine.b != coarse.b:
        raise ValueError("meshes are not nested")
    xc = coarse.nodes
    xf = fine.interior_nodes
    if v.ndim == 1:
        return np.interp(xf, xc, np.concatenate([[0.0], v, [0.0]]))
    padded = np.vstack([np.zeros((1, v.shape[1])), v, np.zeros((1, v.shape[1]))])
    ratio = (fine.n_interior + 1) // (coarse.n_interior + 1)
    # linear interpolation on nested uniform meshes as a weighted sum of neighbours
    j = np.arange(1, fine.n_interior + 1)
    left = j // ratio
    frac = (j % ratio) / ratio
    right = np.minimum(left + 1, coarse.n_interior + 1)
    return (1.0 - frac)[:, None] * padded[left] + frac[:, None] * padded[right]
