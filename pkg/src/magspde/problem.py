"""Mesh-independent problem descriptions and the named coefficient presets."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fem import FeMatrices, Mesh1D, OperatorFamily, l2_project
from .noise import FbmSpec, JumpSpec
from .schemes import ModelSpec

__all__ = [
    "Problem",
    "DIFFUSION_PRESETS",
    "NONLINEARITY_PRESETS",
    "INITIAL_PRESETS",
    "AMPLITUDE_PRESETS",
    "PROFILE_PRESETS",
    "diffusion_preset",
    "nonlinearity_preset",
    "initial_preset",
    "amplitude_preset",
    "profile_preset",
    "default_problem",
    "heat_problem",
]


@dataclass
class Problem:
    """Everything needed to build a :class:`ModelSpec` on any uniform mesh.

    ``jump_profile`` is the function ``g`` in ``psi(z) = z g``; marks are
    Gaussian ``N(jump_mark_mean, jump_mark_std^2)``.
    """

    ops: OperatorFamily
    initial: Callable[[np.ndarray], np.ndarray]
    T: float = 1.0
    a: float = 0.0
    b: float = 1.0
    fbm: FbmSpec | None = None
    amplitude: Callable[[float], float] = lambda t: 1.0
    F: Callable | None = None
    lipschitz: float = 0.0
    jump_intensity: float = 0.0
    jump_profile: Callable[[np.ndarray], np.ndarray] | None = None
    jump_mark_mean: float = 0.0
    jump_mark_std: float = 1.0

    @property
    def stochastic(self) -> bool:
        return self.fbm is not None or self.jump_intensity > 0

    def mesh(self, n_interior: int) -> Mesh1D:
        return Mesh1D(self.a, self.b, n_interior)

    def discretize(self, n_interior: int) -> ModelSpec:
        mesh = self.mesh(n_interior)
        fe = FeMatrices(mesh, self.ops)
        jump = None
        if self.jump_intensity > 0:
            if self.jump_profile is None:
                raise ValueError("jump_intensity > 0 needs a jump_profile")
            profile = l2_project(mesh, fe.mass, self.jump_profile)
            jump = JumpSpec.gaussian_marks(self.jump_intensity, profile, fe.mass,
                                           self.jump_mark_mean, self.jump_mark_std)
        return ModelSpec(
            fe=fe,
            X0=l2_project(mesh, fe.mass, self.initial),
            T=self.T,
            fbm=self.fbm,
            F=self.F,
            lipschitz=self.lipschitz,
            amplitude=self.amplitude,
            jump=jump,
        )


# -- presets ---------------------------------------------------------------------

def _unit(x, a, b):
    return (np.asarray(x, dtype=float) - a) / (b - a)


def diffusion_preset(name: str, scale: float, T: float, a: float, b: float,
                     advection: float = 0.0) -> OperatorFamily:
    """Separable diffusion coefficients ``q0(x) s(t)``; floor is half the minimum."""
    if name == "constant":
        spatial = lambda x: np.full(np.shape(x), scale)
        temporal = lambda t: 1.0
        floor = 0.5 * scale
    elif name == "sinusoidal-in-time":
        spatial = lambda x: np.full(np.shape(x), scale)
        temporal = lambda t: 1.0 + 0.5 * np.sin(2.0 * np.pi * t / T)
        floor = 0.25 * scale
    elif name == "spatially-varying":
        spatial = lambda x: scale * (1.0 + 0.25 * np.sin(2.0 * np.pi * _unit(x, a, b)))
        temporal = lambda t: 1.0 + 0.5 * np.sin(2.0 * np.pi * t / T)
        floor = 0.1875 * scale
    else:
        raise KeyError(name)
    adv = None if advection == 0 else (lambda x, t: np.full(np.shape(x), advection))
    return OperatorFamily.separable(spatial, temporal, ellipticity_floor=floor, advection=adv)


def nonlinearity_preset(name: str, strength: float):
    """``(F, lipschitz)``; ``F`` acts on nodal coefficients."""
    if name == "zero":
        return None, 0.0
    if name == "linear":
        return (lambda t, u: -strength * u), abs(strength)
    if name == "sine":
        return (lambda t, u: strength * np.sin(u)), abs(strength)
    raise KeyError(name)


def initial_preset(name: str, a: float, b: float):
    if name == "sine":
        return lambda x: np.sin(np.pi * _unit(x, a, b))
    if name == "bump":
        return lambda x: 4.0 * _unit(x, a, b) * (1.0 - _unit(x, a, b))
    if name == "zero":
        return lambda x: np.zeros(np.shape(x))
    raise KeyError(name)


def amplitude_preset(name: str, sigma: float, T: float):
    if name == "constant":
        return lambda t: sigma
    if name == "sinusoidal":
        return lambda t: sigma * (1.0 + 0.25 * np.sin(2.0 * np.pi * t / T))
    raise KeyError(name)


def profile_preset(name: str, amplitude: float, a: float, b: float):
    if name == "bump":
        return lambda x: amplitude * 4.0 * _unit(x, a, b) * (1.0 - _unit(x, a, b))
    if name == "sine":
        return lambda x: amplitude * np.sin(np.pi * _unit(x, a, b))
    raise KeyError(name)


DIFFUSION_PRESETS = ("constant", "sinusoidal-in-time", "spatially-varying")
NONLINEARITY_PRESETS = ("zero", "linear", "sine")
INITIAL_PRESETS = ("sine", "bump", "zero")
AMPLITUDE_PRESETS = ("constant", "sinusoidal")
PROFILE_PRESETS = ("bump", "sine")


def default_problem(H=0.75, n_modes=512, decay=1.1, sigma=1.0, diffusion_scale=0.01,
                    jump_intensity=5.0, jump_amplitude=0.5, nonlinearity="sine",
                    nonlinearity_strength=0.5, T=1.0) -> Problem:
    """Non-autonomous self-adjoint test problem used by the rate studies."""
    a, b = 0.0, 1.0
    F, lip = nonlinearity_preset(nonlinearity, nonlinearity_strength)
    return Problem(
        ops=diffusion_preset("spatially-varying", diffusion_scale, T, a, b),
        initial=initial_preset("sine", a, b),
        T=T,
        a=a,
        b=b,
        fbm=FbmSpec.power_law(H, n_modes, decay, sigma),
        amplitude=amplitude_preset("constant", 1.0, T),
        F=F,
        lipschitz=lip,
        jump_intensity=jump_intensity,
        jump_profile=profile_preset("bump", jump_amplitude, a, b) if jump_intensity > 0 else None,
    )


def heat_problem(T=0.1, diffusion=1.0) -> Problem:
    """Deterministic heat equation with ``u0 = sin(pi x)`` on ``[0, 1]``."""
    return Problem(
        ops=diffusion_preset("constant", diffusion, T, 0.0, 1.0),
        initial=initial_preset("sine", 0.0, 1.0),
        T=T,
    )
