"""Run configuration: schema, validation and problem construction."""

from __future__ import annotations

import json
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .harness import StudyConfig
from .noise import FbmSpec
from .problem import (
    Problem,
    amplitude_preset,
    diffusion_preset,
    initial_preset,
    nonlinearity_preset,
    profile_preset,
)

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "build_problem",
           "study_config", "default_band", "theoretical_rate"]


class ConfigError(ValueError):
    """Configuration rejected; the message names the offending field path."""


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Diffusion(_Block):
    preset: Literal["constant", "sinusoidal-in-time", "spatially-varying"] = "spatially-varying"
    scale: float = Field(0.01, gt=0)


class ProblemBlock(_Block):
    domain: tuple[float, float] = (0.0, 1.0)
    diffusion: Diffusion = Diffusion()
    advection: float = 0.0
    nonlinearity: Literal["zero", "linear", "sine"] = "sine"
    nonlinearity_strength: float = Field(0.5, ge=0)
    initial: Literal["sine", "bump", "zero"] = "sine"
    T: float = Field(1.0, gt=0)

    @field_validator("domain")
    @classmethod
    def _ordered(cls, v):
        if not v[1] > v[0]:
            raise ValueError("domain must be [a, b] with b > a")
        return v


class Amplitude(_Block):
    preset: Literal["constant", "sinusoidal"] = "constant"
    sigma: float = Field(1.0, ge=0)


class Jump(_Block):
    intensity: float = Field(5.0, ge=0)
    profile: Literal["bump", "sine"] = "bump"
    amplitude: float = 0.5
    mark_mean: float = 0.0
    mark_std: float = Field(1.0, ge=0)


class NoiseBlock(_Block):
    fbm: bool = True
    H: float = 0.75
    decay: float = Field(1.1, gt=0, description="q_i = sigma^2 * i^(-decay)")
    n_modes: int = Field(512, ge=1)
    amplitude: Amplitude = Amplitude()
    jump: Jump = Jump()

    @field_validator("H")
    @classmethod
    def _hurst(cls, v):
        if not 0.5 < v < 1.0:
            raise ValueError(f"H={v} must lie in the open interval (1/2, 1)")
        return v


class DiscretizationBlock(_Block):
    scheme: Literal["smti", "implicit"] = "smti"
    n_interior: int = Field(255, ge=1)
    M: list[int] = [16, 32, 64, 128, 256]
    M_ref: int = Field(4096, ge=1)
    n_list: list[int] = [15, 31, 63, 127]
    n_ref: int = Field(511, ge=1)
    time_steps: int = Field(4096, ge=1, description="fixed step count of spatial studies")
    block_size: int = Field(10, ge=1)

    @model_validator(mode="after")
    def _nesting(self):
        for m in self.M:
            if m < 1 or m >= self.M_ref or self.M_ref % m:
                raise ValueError(f"M_ref={self.M_ref} must be a strict multiple of every M (offending M={m})")
        for n in self.n_list:
            if n < 1 or n >= self.n_ref or (self.n_ref + 1) % (n + 1):
                raise ValueError(f"mesh n_interior={n} is not nested in n_ref={self.n_ref}")
        return self


class StudyBlock(_Block):
    mode: Literal["temporal", "spatial"] = "temporal"
    samples: int = Field(200, ge=2)
    seed: int = Field(0, ge=0, lt=2**64)
    band: Optional[tuple[Optional[float], Optional[float]]] = None


class ValidationBlock(_Block):
    samples: int = Field(100_000, ge=100)
    steps: int = Field(8, ge=2)
    dt: float = Field(0.25, gt=0)
    field_samples: int = Field(10_000, ge=100)


class OutputBlock(_Block):
    directory: str = "out"
    formats: list[Literal["csv", "json"]] = ["csv", "json"]
    times: Optional[list[float]] = None


class RunConfig(_Block):
    problem: ProblemBlock = ProblemBlock()
    noise: NoiseBlock = NoiseBlock()
    discretization: DiscretizationBlock = DiscretizationBlock()
    study: StudyBlock = StudyBlock()
    validation: ValidationBlock = ValidationBlock()
    output: OutputBlock = OutputBlock()

    def echo(self) -> dict:
        """Fully materialized configuration, defaults included."""
        return self.model_dump(mode="json")


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "; ".join(lines)


def parse_config(text: str | dict) -> RunConfig:
    """Validate a YAML/JSON document (or an already-parsed mapping)."""
    data = text
    if isinstance(text, str):
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed configuration document: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping at the top level")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def build_problem(cfg: RunConfig) -> Problem:
    p, nz = cfg.problem, cfg.noise
    a, b = p.domain
    F, lip = nonlinearity_preset(p.nonlinearity, p.nonlinearity_strength)
    jump = nz.jump
    return Problem(
        ops=diffusion_preset(p.diffusion.preset, p.diffusion.scale, p.T, a, b, p.advection),
        initial=initial_preset(p.initial, a, b),
        T=p.T,
        a=a,
        b=b,
        fbm=FbmSpec.power_law(nz.H, nz.n_modes, nz.decay) if nz.fbm else None,
        amplitude=amplitude_preset(nz.amplitude.preset, nz.amplitude.sigma, p.T),
        F=F,
        lipschitz=lip,
        jump_intensity=jump.intensity,
        jump_profile=profile_preset(jump.profile, jump.amplitude, a, b) if jump.intensity > 0 else None,
        jump_mark_mean=jump.mark_mean,
        jump_mark_std=jump.mark_std,
    )


def noise_regularity(cfg: RunConfig) -> float:
    """Regularity index ``beta`` implied by ``q_i ~ i^{-decay}``, capped at 1."""
    return min(1.0, (cfg.noise.decay + 1.0) / 2.0)


def theoretical_rate(cfg: RunConfig) -> float:
    r = 2.0 * cfg.noise.H + noise_regularity(cfg) - 1.0
    return r / 2.0 if cfg.study.mode == "temporal" else r


def default_band(cfg: RunConfig):
    if cfg.study.band is not None:
        return tuple(cfg.study.band)
    if cfg.study.mode == "spatial":
        return (1.2, 1.8)
    if cfg.discretization.scheme == "smti":
        return (0.60, 0.90)
    return (0.55, None)


def study_config(cfg: RunConfig, problem: Problem | None = None, threads: int = 1) -> StudyConfig:
    d, s = cfg.discretization, cfg.study
    problem = build_problem(cfg) if problem is None else problem
    stochastic = problem.stochastic
    temporal = s.mode == "temporal"
    return StudyConfig(
        problem=problem,
        scheme=d.scheme,
        resolutions=list(d.M if temporal else d.n_list),
        reference_resolution=d.M_ref if temporal else d.n_ref,
        samples=s.samples,
        seed=s.seed,
        mode=s.mode,
        n_interior=d.n_interior,
        time_steps=d.time_steps,
        block_size=d.block_size,
        threads=threads,
        theoretical_rate=theoretical_rate(cfg) if stochastic else None,
        band=default_band(cfg) if stochastic or s.band is not None else None,
    )


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)
