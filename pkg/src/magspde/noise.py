"""Noise generation: Q-fractional Brownian field and compensated Poisson jumps.

Random streams are derived from a single base seed with a counter scheme:
the stream for sample ``k`` and channel ``c`` is a Philox generator keyed by
``SeedSequence(seed, spawn_key=(k, c))``.  Sample ``k`` is therefore the same
no matter how samples are distributed over workers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .fem import Mesh1D, mass_norm, solve_mass

__all__ = [
    "FBM_CHANNEL",
    "JUMP_CHANNEL",
    "TimeGrid",
    "FbmSpec",
    "JumpSpec",
    "NoisePath",
    "stream",
    "fgn_autocovariance",
    "fbm_covariance",
    "fbm_increment_covariance",
    "fbm_increments",
    "sine_mode",
    "sine_mode_projections",
    "field_increment",
    "field_increments",
    "sample_jump_path",
    "compensated_increment",
    "jump_increments",
    "sample_noise_path",
    "coarsen",
]

FBM_CHANNEL = 0
JUMP_CHANNEL = 1


def stream(seed: int, sample: int, channel: int) -> np.random.Generator:
    """Independent generator for one (sample, channel) pair."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(sample), int(channel)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class TimeGrid:
    T: float
    M: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"step count M must be a positive integer, got {self.M}")

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.M + 1) * self.dt


def _check_hurst(H: float):
    if not 0.5 < H < 1.0:
        raise ValueError(f"Hurst parameter H={H} outside the admissible interval (1/2, 1)")


# -- fractional Brownian motion -------------------------------------------------

def fgn_autocovariance(H: float, n_lags: int, dt: float = 1.0) -> np.ndarray:
    """``gamma(k) = dt^{2H}/2 (|k+1|^{2H} + |k-1|^{2H} - 2|k|^{2H})`` for k < n_lags."""
    k = np.arange(n_lags, dtype=float)
    two_h = 2.0 * H
    return 0.5 * dt**two_h * (np.abs(k + 1) ** two_h + np.abs(k - 1) ** two_h - 2.0 * k**two_h)


def fbm_covariance(H: float, t: np.ndarray, s: np.ndarray) -> np.ndarray:
    """``Cov(B(t), B(s)) = (|t|^{2H} + |s|^{2H} - |t-s|^{2H}) / 2``."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    two_h = 2.0 * H
    return 0.5 * (np.abs(t) ** two_h + np.abs(s) ** two_h - np.abs(t - s) ** two_h)


def fbm_increment_covariance(H: float, M: int, dt: float) -> np.ndarray:
    """Covariance of ``B(t_{m+1}) - B(t_m)`` built directly from the fBm covariance."""
    t = np.arange(M + 1) * dt
    c = fbm_covariance(H, t[:, None], t[None, :])
    # Cov(B_{i+1} - B_i, B_{j+1} - B_j)
    return c[1:, 1:] - c[1:, :-1] - c[:-1, 1:] + c[:-1, :-1]


def _circulant_eigenvalues(H: float, M: int) -> np.ndarray:
    gamma = fgn_autocovariance(H, M + 1)
    row = np.concatenate([gamma[: M + 1], gamma[M - 1:0:-1]])
    return np.fft.fft(row).real


def fbm_increments(H: float, M: int, dt: float, rng: np.random.Generator, size=None) -> np.ndarray:
    """Exact fBm increments on a uniform grid.

    Returns shape ``(M,)`` or ``(*size, M)``.  Davies-Harte circulant
    embedding; Cholesky of the exact covariance if the embedding has a
    negative eigenvalue.
    """
    _check_hurst(H)
    if int(M) != M or M < 1:
        raise ValueError(f"M must be a positive integer, got {M}")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    shape = () if size is None else tuple(np.atleast_1d(size))
    lam = _circulant_eigenvalues(H, M)
    if lam.min() < -1e-12 * lam.max():
        chol = np.linalg.cholesky(fbm_increment_covariance(H, M, 1.0))
        z = rng.standard_normal(shape + (M,))
        return dt**H * (z @ chol.T)
    n = 2 * M
    scale = np.sqrt(np.maximum(lam, 0.0) / n)
    z = rng.standard_normal(shape + (2, n))
    w = np.fft.fft(scale * (z[..., 0, :] + 1j * z[..., 1, :]), axis=-1)
    return dt**H * w.real[..., :M]


@dataclass(frozen=True)
class FbmSpec:
    """Truncated ``B^H = sum_i sqrt(q_i) beta_i^H e_i`` over the Dirichlet sine basis."""

    H: float
    mode_variances: np.ndarray
    basis: str = "sine"

    def __post_init__(self):
        _check_hurst(self.H)
        q = np.asarray(self.mode_variances, dtype=float)
        if q.ndim != 1 or q.size < 1:
            raise ValueError("mode_variances must be a non-empty 1-D array")
        if np.any(q < 0):
            raise ValueError("mode variances must be non-negative")
        if self.basis != "sine":
            raise ValueError(f"unsupported basis {self.basis!r}")
        object.__setattr__(self, "mode_variances", q)

    @property
    def n_modes(self) -> int:
        return self.mode_variances.size

    @classmethod
    def power_law(cls, H, n_modes, decay, amplitude=1.0):
        """``q_i = amplitude^2 * i^{-decay}``."""
        i = np.arange(1, n_modes + 1, dtype=float)
        return cls(H, amplitude**2 * i ** (-float(decay)))


def sine_mode(i: int, a: float, b: float) -> Callable[[np.ndarray], np.ndarray]:
    """``e_i(x) = sqrt(2/(b-a)) sin(i pi (x-a)/(b-a))``."""
    length = b - a
    norm = np.sqrt(2.0 / length)
    return lambda x: norm * np.sin(i * np.pi * (np.asarray(x) - a) / length)


def sine_mode_projections(mesh: Mesh1D, mass: sp.spmatrix, n_modes: int) -> np.ndarray:
    """Columns are the L2 projections of ``e_1 .. e_N`` onto the P1 space.

    Load vectors use the closed-form hat integral
    ``int e_i phi_j = e_i(x_j) * 2 (1 - cos(k h)) / (k^2 h)``, exact for every
    mode; Gauss quadrature would alias modes above the mesh resolution.
    """
    length = mesh.b - mesh.a
    k = np.arange(1, n_modes + 1) * np.pi / length
    xj = mesh.interior_nodes - mesh.a
    h = mesh.h
    kh = k * h
    # 2(1 - cos kh)/(k^2 h) written as h * (sin(kh/2)/(kh/2))^2 to avoid cancellation
    hat = h * np.sinc(kh / (2.0 * np.pi)) ** 2
    loads = np.sqrt(2.0 / length) * np.sin(np.outer(xj, k)) * hat[None, :]
    return solve_mass(mass, loads)


def field_increment(spec: FbmSpec, projections: np.ndarray, mode_increments: np.ndarray) -> np.ndarray:
    """``sum_i sqrt(q_i) d beta_i P_h e_i`` for one step."""
    mode_increments = np.asarray(mode_increments, dtype=float)
    if mode_increments.shape[0] != spec.n_modes or projections.shape[1] != spec.n_modes:
        raise ValueError(
            f"expected {spec.n_modes} mode increments, got {mode_increments.shape[0]} "
            f"(projection has {projections.shape[1]} columns)"
        )
    return projections @ (np.sqrt(spec.mode_variances) * mode_increments)


def field_increments(spec: FbmSpec, projections: np.ndarray, increments: np.ndarray) -> np.ndarray:
    """All steps at once: ``increments`` is ``(n_modes, M)``, result ``(n, M)``."""
    if increments.shape[0] != spec.n_modes:
        raise ValueError(f"expected {spec.n_modes} modes, got {increments.shape[0]}")
    return projections @ (np.sqrt(spec.mode_variances)[:, None] * increments)


# -- compensated Poisson random measure ----------------------------------------

@dataclass(frozen=True)
class JumpSpec:
    """Finite-activity jump measure ``nu = intensity * law(mark)``.

    ``psi`` maps an array of ``k`` marks to an ``(n, k)`` array of FE
    coefficient vectors.  ``compensator_mean`` is ``int psi dnu`` and
    ``second_moment`` is ``int ||psi||_M^2 dnu``.
    """

    intensity: float
    mark_sampler: Callable[[np.random.Generator, int], np.ndarray]
    psi: Callable[[np.ndarray], np.ndarray]
    compensator_mean: np.ndarray
    second_moment: float

    def __post_init__(self):
        if not self.intensity >= 0:
            raise ValueError(f"intensity must be non-negative, got {self.intensity}")

    @property
    def n(self) -> int:
        return np.asarray(self.compensator_mean).shape[0]

    @classmethod
    def gaussian_marks(cls, intensity, profile, mass, mean=0.0, std=1.0):
        """``psi(z) = z * profile`` with marks ``z ~ N(mean, std^2)``."""
        profile = np.asarray(profile, dtype=float)

        def sampler(rng, k):
            return mean + std * rng.standard_normal(k)

        def psi(z):
            return np.outer(profile, np.atleast_1d(z))

        second = intensity * (mean**2 + std**2) * float(mass_norm(mass, profile)) ** 2
        return cls(intensity, sampler, psi, intensity * mean * profile, second)

    @classmethod
    def none(cls, n):
        return cls(0.0, lambda rng, k: np.zeros(k), lambda z: np.zeros((n, np.size(z))),
                   np.zeros(n), 0.0)


@dataclass(frozen=True)
class JumpEvents:
    times: np.ndarray
    marks: np.ndarray

    def __len__(self):
        return self.times.size


def sample_jump_path(spec: JumpSpec, T: float, rng: np.random.Generator) -> JumpEvents:
    """Poisson(intensity*T) events, uniform sorted times, i.i.d. marks."""
    count = rng.poisson(spec.intensity * T) if spec.intensity > 0 else 0
    times = np.sort(rng.uniform(0.0, T, size=count))
    marks = np.asarray(spec.mark_sampler(rng, count), dtype=float)
    return JumpEvents(times, marks)


def compensated_increment(spec: JumpSpec, marks: np.ndarray, dt: float) -> np.ndarray:
    """``sum_k psi(z_k) - dt * int psi dnu`` for the marks of one step."""
    marks = np.atleast_1d(np.asarray(marks, dtype=float))
    total = -dt * np.asarray(spec.compensator_mean, dtype=float)
    if marks.size:
        total = total + spec.psi(marks).sum(axis=1)
    return total


def step_index(times: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Step ``m`` with ``t_m < tau <= t_{m+1}``."""
    return np.clip(np.ceil(times / grid.dt).astype(int) - 1, 0, grid.M - 1)


def jump_increments(spec: JumpSpec, events: JumpEvents, grid: TimeGrid) -> np.ndarray:
    """Compensated increments for every step, shape ``(n, M)``."""
    out = np.repeat(-grid.dt * np.asarray(spec.compensator_mean, dtype=float)[:, None], grid.M, axis=1)
    if len(events):
        np.add.at(out.T, step_index(events.times, grid), spec.psi(events.marks).T)
    return out


# -- paths ---------------------------------------------------------------------

@dataclass(frozen=True)
class NoisePath:
    """Mode-wise fBm increments ``(n_modes, M)`` plus jump events on ``[0, T]``."""

    grid: TimeGrid
    fbm_increments: np.ndarray
    jumps: JumpEvents = field(default_factory=lambda: JumpEvents(np.zeros(0), np.zeros(0)))

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.fbm_increments).tobytes())
        h.update(self.jumps.times.tobytes())
        h.update(self.jumps.marks.tobytes())
        return h.hexdigest()[:16]


def sample_noise_path(fbm: FbmSpec | None, jump: JumpSpec | None, grid: TimeGrid, seed: int, sample: int) -> NoisePath:
    if fbm is None:
        inc = np.zeros((0, grid.M))
    else:
        inc = fbm_increments(fbm.H, grid.M, grid.dt, stream(seed, sample, FBM_CHANNEL), size=fbm.n_modes)
    if jump is None or jump.intensity == 0:
        return NoisePath(grid, inc)
    return NoisePath(grid, inc, sample_jump_path(jump, grid.T, stream(seed, sample, JUMP_CHANNEL)))


def coarsen(path: NoisePath, factor: int) -> NoisePath:
    """Sum fBm increments in blocks of ``factor``; jump events are kept as is."""
    if int(factor) != factor or factor < 1 or path.grid.M % factor:
        raise ValueError(f"factor {factor} does not divide M={path.grid.M}")
    if factor == 1:
        return path
    inc = path.fbm_increments
    coarse = inc.reshape(inc.shape[:-1] + (path.grid.M // factor, factor)).sum(axis=-1)
    return replace(path, grid=TimeGrid(path.grid.T, path.grid.M // factor), fbm_increments=coarse)
