"""Actions of ``exp(-dt A_h)``, ``phi1(dt A_h)`` and ``(I + dt A_h)^{-1}``.

``A_h`` is never formed: it acts through the generalized pair ``(M, K)``,
``M (A_h v) = K v``.  Symmetric ``K`` uses the generalized eigendecomposition;
a non-symmetric ``K`` (advection) falls back to dense scaling-and-squaring on
``M^{-1} K``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .fem import SpectralDecomposition, banded, generalized_eigendecomposition

__all__ = [
    "KernelContext",
    "phi1",
    "resolvent_step",
    "expm_action",
    "phi1_action",
]

PHI1_TAYLOR_THRESHOLD = 1e-4
_PHI1_TAYLOR = np.array([(-1.0) ** k / factorial(k + 1) for k in range(6)])


def phi1(z):
    """``(1 - exp(-z)) / z`` with ``phi1(0) = 1``, stable near zero."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < PHI1_TAYLOR_THRESHOLD
    safe = np.where(small, 1.0, z)
    out = -np.expm1(-safe) / safe
    if np.any(small):
        out = np.where(small, np.polynomial.polynomial.polyval(z, _PHI1_TAYLOR), out)
    return out


def _is_symmetric(k: sp.spmatrix, rtol: float = 1e-13) -> bool:
    diff = abs(k - k.T)
    if diff.nnz == 0:
        return True
    return diff.max() <= rtol * abs(k).max()


def _column_scale(d: np.ndarray, c: np.ndarray) -> np.ndarray:
    return d.reshape((-1,) + (1,) * (c.ndim - 1)) * c


@dataclass
class KernelContext:
    """Kernels for one frozen operator ``A_h(t)``.

    Build with :meth:`build`.  ``eigenvalues`` may differ from
    ``spectral.eigenvalues`` by a scalar factor when the stiffness is a
    rescaled copy of a decomposed base matrix.
    """

    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    t: float = 0.0
    mode: str = "spectral"
    spectral: SpectralDecomposition | None = None
    eigenvalues: np.ndarray | None = None
    symmetric: bool = True
    _dense_cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, mass, stiffness, t=0.0, mode="spectral", base=None, scale=1.0):
        """Create the context for ``K = stiffness`` at time ``t``.

        ``base`` is an optional decomposition of ``(M, K / scale)``; passing it
        skips the eigensolve.
        """
        if mode not in ("spectral", "resolvent-only"):
            raise ValueError(f"unknown kernel mode {mode!r}")
        mass = sp.csr_matrix(mass)
        stiffness = sp.csr_matrix(stiffness)
        symmetric = _is_symmetric(stiffness)
        spectral = None
        eigenvalues = None
        if mode == "spectral" and symmetric:
            if base is None:
                spectral = generalized_eigendecomposition(mass, stiffness)
                eigenvalues = spectral.eigenvalues
            else:
                spectral = base
                eigenvalues = scale * base.eigenvalues
        return cls(mass, stiffness, float(t), mode, spectral, eigenvalues, symmetric)

    @property
    def n(self) -> int:
        return self.mass.shape[0]

    def _require_dense(self):
        if self.mode == "resolvent-only":
            raise RuntimeError("exponential kernels unavailable in resolvent-only mode")
        if "generator" not in self._dense_cache:
            self._dense_cache["generator"] = sla.solve(self.mass.toarray(), self.stiffness.toarray())
        return self._dense_cache["generator"]

    def _dense_expm(self, dt: float) -> np.ndarray:
        key = ("expm", dt)
        if key not in self._dense_cache:
            self._dense_cache[key] = sla.expm(-dt * self._require_dense())
        return self._dense_cache[key]

    def _dense_phi1(self, dt: float) -> np.ndarray:
        key = ("phi1", dt)
        if key not in self._dense_cache:
            n = self.n
            aug = np.zeros((2 * n, 2 * n))
            aug[:n, :n] = -dt * self._require_dense()
            aug[:n, n:] = np.eye(n)
            # top-right block of expm([[-dtA, I], [0, 0]]) is phi1(dtA)
            self._dense_cache[key] = sla.expm(aug)[:n, n:]
        return self._dense_cache[key]

    def resolvent(self, dt: float, v: np.ndarray) -> np.ndarray:
        if dt < 0:
            raise ValueError(f"dt must be non-negative, got {dt}")
        v = np.asarray(v, dtype=float)
        if dt == 0:
            return v.copy()
        lhs = self.mass + dt * self.stiffness
        rhs = self.mass @ v
        if self.symmetric:
            ab = np.zeros((2, self.n))
            ab[0, 1:] = lhs.diagonal(1)
            ab[1] = lhs.diagonal(0)
            return sla.solveh_banded(ab[-1:] if self.n == 1 else ab, rhs)
        return sla.solve_banded((1, 1), banded(lhs), rhs)

    def expm(self, dt: float, v: np.ndarray) -> np.ndarray:
        if dt < 0:
            raise ValueError(f"dt must be non-negative, got {dt}")
        v = np.asarray(v, dtype=float)
        if dt == 0:
            return v.copy()
        if self.spectral is None:
            return self._dense_expm(dt) @ v
        c = self.spectral.to_modes(v)
        return self.spectral.from_modes(_column_scale(np.exp(-dt * self.eigenvalues), c))

    def phi1(self, dt: float, v: np.ndarray) -> np.ndarray:
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        v = np.asarray(v, dtype=float)
        if self.spectral is None:
            return self._dense_phi1(dt) @ v
        c = self.spectral.to_modes(v)
        return self.spectral.from_modes(_column_scale(phi1(dt * self.eigenvalues), c))

    def expm_plus_phi1(self, dt: float, v: np.ndarray, w: np.ndarray) -> np.ndarray:
        """``exp(-dt A) v + dt phi1(dt A) w`` with a single pair of modal transforms."""
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        if self.spectral is None:
            return self._dense_expm(dt) @ v + dt * (self._dense_phi1(dt) @ w)
        v = np.asarray(v, dtype=float)
        both = self.spectral.to_modes(np.concatenate([v, np.asarray(w, dtype=float)], axis=-1)
                                      if v.ndim == 2 else np.stack([v, w], axis=1))
        k = v.shape[1] if v.ndim == 2 else 1
        z = dt * self.eigenvalues
        c = np.exp(-z)[:, None] * both[:, :k] + (dt * phi1(z))[:, None] * both[:, k:]
        out = self.spectral.from_modes(c)
        return out if v.ndim == 2 else out[:, 0]


def resolvent_step(ctx: KernelContext, dt: float, v: np.ndarray) -> np.ndarray:
    """Solve ``(M + dt K) x = M v``."""
    return ctx.resolvent(dt, v)


def expm_action(ctx: KernelContext, dt: float, v: np.ndarray) -> np.ndarray:
    """``exp(-dt M^{-1} K) v``."""
    return ctx.expm(dt, v)


def phi1_action(ctx: KernelContext, dt: float, v: np.ndarray) -> np.ndarray:
    """``(dt A_h)^{-1} (I - exp(-dt A_h)) v``, evaluated stably."""
    return ctx.phi1(dt, v)
