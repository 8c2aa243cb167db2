"""Magnus-type exponential integrator and linear semi-implicit Euler.

Both schemes advance FE coefficient vectors of the semi-discrete problem

    dX + A_h(t) X dt = P_h F(t, X) dt + P_h sigma(t) dB^H + int P_h psi(z) N~(dz, dt)

with ``A_h`` frozen at the left end of each step.  States may carry a trailing
sample axis, ``(n,)`` or ``(n, S)``; every operation is column-wise.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fem import FeMatrices, Mesh1D, generalized_eigendecomposition, mass_norm
from .kernels import KernelContext
from .noise import FbmSpec, JumpSpec, NoisePath, TimeGrid, sine_mode_projections, step_index

__all__ = [
    "SCHEMES",
    "ModelSpec",
    "Trajectory",
    "KernelProvider",
    "smti_step",
    "implicit_step",
    "simulate",
    "simulate_path",
    "reference_solution",
]

SCHEMES = ("smti", "implicit")


@dataclass
class ModelSpec:
    """One discretized SPDE instance on a fixed mesh.

    ``F(t, U)`` acts on nodal coefficient arrays (``(n,)`` or ``(n, S)``);
    ``None`` means no drift.  ``lipschitz`` is checked in the Euclidean norm
    of nodal coefficients.
    """

    fe: FeMatrices
    X0: np.ndarray
    T: float
    fbm: FbmSpec | None = None
    F: Callable[[float, np.ndarray], np.ndarray] | None = None
    lipschitz: float = 0.0
    amplitude: Callable[[float], float] = lambda t: 1.0
    jump: JumpSpec | None = None
    projections: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.X0 = np.asarray(self.X0, dtype=float)
        if self.X0.shape != (self.n,):
            raise ValueError(f"X0 has shape {self.X0.shape}, expected ({self.n},)")
        if self.fbm is not None and self.projections is None:
            self.projections = sine_mode_projections(self.mesh, self.mass, self.fbm.n_modes)
        if self.jump is not None and self.jump.n != self.n:
            raise ValueError("jump specification lives on a different mesh")

    @property
    def mesh(self) -> Mesh1D:
        return self.fe.mesh

    @property
    def mass(self):
        return self.fe.mass

    @property
    def n(self) -> int:
        return self.mesh.n_interior

    @property
    def n_modes(self) -> int:
        return 0 if self.fbm is None else self.fbm.n_modes

    def drift(self, t, U):
        return None if self.F is None else self.F(t, U)

    def validate(self, rng=None, n_pairs=20, n_times=16):
        """Spot-check boundedness of ``F(t, 0)`` and the declared Lipschitz bound."""
        if self.F is None:
            return
        rng = np.random.default_rng(0) if rng is None else rng
        for t in np.linspace(0.0, self.T, n_times):
            if not np.all(np.isfinite(self.F(t, np.zeros(self.n)))):
                raise ValueError(f"F(t, 0) is not finite at t={t}")
        for _ in range(n_pairs):
            t = rng.uniform(0.0, self.T)
            u, v = rng.standard_normal((2, self.n)) * rng.uniform(0.1, 10.0)
            lhs = np.linalg.norm(self.F(t, u) - self.F(t, v))
            if lhs > self.lipschitz * np.linalg.norm(u - v) * (1 + 1e-12) + 1e-14:
                raise ValueError(f"declared Lipschitz constant {self.lipschitz} violated at t={t}")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (M+1, n) or (M+1, n, S)
    scheme: str

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


class KernelProvider:
    """Kernel contexts for ``A_h(t_m)``, rebuilt per time level.

    A separable self-adjoint family ``q0(x) s(t)`` reuses one eigendecomposition
    of the base stiffness and rescales its eigenvalues; anything else is
    decomposed per time level and kept in a small LRU cache keyed on ``t``.
    """

    def __init__(self, fe: FeMatrices, mode: str = "spectral", cache_size: int = 64):
        self.fe = fe
        self.mode = mode
        self.cache_size = cache_size
        self._cache: OrderedDict[float, KernelContext] = OrderedDict()
        self._base = None

    def at(self, t: float) -> KernelContext:
        t = float(t)
        base_k = self.fe.base_stiffness
        if base_k is not None:
            stiffness = self.fe.stiffness_at(t)
            if self.mode == "resolvent-only":
                return KernelContext.build(self.fe.mass, stiffness, t, mode="resolvent-only")
            if self._base is None:
                self._base = generalized_eigendecomposition(self.fe.mass, base_k)
            scale = float(self.fe.ops.time_factor(t))
            return KernelContext.build(self.fe.mass, stiffness, t, base=self._base, scale=scale)
        if t in self._cache:
            self._cache.move_to_end(t)
            return self._cache[t]
        ctx = KernelContext.build(self.fe.mass, self.fe.stiffness_at(t), t, mode=self.mode)
        self._cache[t] = ctx
        if len(self._cache) > self.cache_size:
            self._cache.popitem(last=False)
        return ctx


def _check_time(ctx: KernelContext, t_m: float, dt: float):
    if abs(ctx.t - t_m) > 1e-9 * max(1.0, abs(t_m)) + 1e-6 * dt:
        raise ValueError(f"kernels built at t={ctx.t} used for the step starting at t={t_m}")


def _noise_term(model: ModelSpec, t_m, dB, J):
    noise = 0.0
    if dB is not None:
        noise = float(model.amplitude(t_m)) * dB
    if J is not None:
        noise = noise + J
    return noise


def smti_step(model: ModelSpec, ctx: KernelContext, X, t_m: float, dt: float, dB=None, J=None):
    """``X+ = e^{-dt A} (X + sigma dB + J) + dt phi1(dt A) F(t_m, X)``."""
    _check_time(ctx, t_m, dt)
    lin = X + _noise_term(model, t_m, dB, J)
    f = model.drift(t_m, X)
    if f is None:
        return ctx.expm(dt, lin)
    return ctx.expm_plus_phi1(dt, lin, f)


def implicit_step(model: ModelSpec, ctx: KernelContext, Y, t_m: float, dt: float, dB=None, J=None):
    """``Y+ = (I + dt A)^{-1} (Y + dt F(t_m, Y) + sigma dB + J)``."""
    _check_time(ctx, t_m, dt)
    rhs = Y + _noise_term(model, t_m, dB, J)
    f = model.drift(t_m, Y)
    if f is not None:
        rhs = rhs + dt * f
    return ctx.resolvent(dt, rhs)


class _BatchNoise:
    """Per-step field and jump increments for a batch of noise paths."""

    CHUNK = 128

    def __init__(self, model: ModelSpec, grid: TimeGrid, paths: Sequence[NoisePath]):
        self.S = len(paths)
        self.grid = grid
        self.fbm = None
        if model.fbm is not None:
            for p in paths:
                if p.fbm_increments.shape[0] != model.n_modes:
                    raise ValueError(f"noise has {p.fbm_increments.shape[0]} modes, "
                                     f"model expects {model.n_modes}")
            # (M, N, S): one contiguous (N, S) slab per step
            self.fbm = np.ascontiguousarray(np.stack([p.fbm_increments for p in paths], axis=-1)
                                            .transpose(1, 0, 2))
            self.proj = model.projections * np.sqrt(model.fbm.mode_variances)[None, :]
            self._chunk_start = -1
            self._chunk = None
        self.jump = model.jump if model.jump is not None and model.jump.intensity > 0 else None
        if self.jump is not None:
            steps, samples, marks = [], [], []
            for s, p in enumerate(paths):
                if len(p.jumps):
                    steps.append(step_index(p.jumps.times, grid))
                    samples.append(np.full(len(p.jumps), s))
                    marks.append(p.jumps.marks)
            if steps:
                steps = np.concatenate(steps)
                order = np.argsort(steps, kind="stable")
                self.j_steps = steps[order]
                self.j_samples = np.concatenate(samples)[order]
                self.j_vecs = self.jump.psi(np.concatenate(marks)[order])
            else:
                self.j_steps = np.zeros(0, dtype=int)
                self.j_samples = np.zeros(0, dtype=int)
                self.j_vecs = np.zeros((model.n, 0))
            self.comp = -grid.dt * np.asarray(self.jump.compensator_mean, dtype=float)

    def at(self, m: int):
        dB = None
        if self.fbm is not None:
            start = m - m % self.CHUNK
            if start != self._chunk_start:
                slab = self.fbm[start:start + self.CHUNK]  # (c, N, S)
                c = slab.shape[0]
                flat = slab.transpose(1, 0, 2).reshape(slab.shape[1], c * self.S)
                self._chunk = (self.proj @ flat).reshape(-1, c, self.S)
                self._chunk_start = start
            dB = self._chunk[:, m - start, :]
        J = None
        if self.jump is not None:
            J = np.repeat(self.comp[:, None], self.S, axis=1)
            lo, hi = np.searchsorted(self.j_steps, [m, m + 1])
            if hi > lo:
                np.add.at(J.T, self.j_samples[lo:hi], self.j_vecs[:, lo:hi].T)
        return dB, J


def simulate(model: ModelSpec, scheme: str, grid: TimeGrid, paths: Sequence[NoisePath],
             store: str = "final", kernels: KernelProvider | None = None, store_every: int = 1):
    """Run ``scheme`` for every path at once; returns ``(n, S)`` or ``(K, n, S)``.

    With ``store="all"`` every ``store_every``-th state (``t_0`` included) is kept.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    for p in paths:
        if p.grid != grid:
            raise ValueError(f"noise grid {p.grid} does not match time grid {grid}")
    if kernels is None:
        kernels = KernelProvider(model.fe, "spectral" if scheme == "smti" else "resolvent-only")
    noise = _BatchNoise(model, grid, paths)
    step = smti_step if scheme == "smti" else implicit_step
    X = np.repeat(model.X0[:, None], len(paths), axis=1)
    dt = grid.dt
    saved = [X.copy()] if store == "all" else None
    for m in range(grid.M):
        t_m = m * dt
        dB, J = noise.at(m)
        X = step(model, kernels.at(t_m), X, t_m, dt, dB, J)
        if saved is not None and (m + 1) % store_every == 0:
            saved.append(X.copy())
    return np.stack(saved) if saved is not None else X


def simulate_path(model: ModelSpec, scheme: str, grid: TimeGrid, noise_path: NoisePath | None = None,
                  kernels: KernelProvider | None = None) -> Trajectory:
    """Single trajectory with every state stored."""
    if noise_path is None:
        noise_path = NoisePath(grid, np.zeros((model.n_modes, grid.M)))
    states = simulate(model, scheme, grid, [noise_path], store="all", kernels=kernels)
    return Trajectory(grid.times, states[:, :, 0], scheme)


def reference_solution(model: ModelSpec, M_ref: int, noise_path: NoisePath, coarse=(),
                       kernels: KernelProvider | None = None) -> Trajectory:
    """Fine-grid SMTI trajectory standing in for the exact mild solution."""
    for M in coarse:
        if M_ref % M:
            raise ValueError(f"M_ref={M_ref} is not a multiple of M={M}")
    if noise_path.grid.M != M_ref:
        raise ValueError(f"noise path has {noise_path.grid.M} steps, expected {M_ref}")
    return simulate_path(model, "smti", noise_path.grid, noise_path, kernels=kernels)


def energy(model: ModelSpec, X) -> np.ndarray:
    return mass_norm(model.mass, X)
