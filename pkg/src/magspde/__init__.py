"""Finite-element Magnus-type and semi-implicit schemes for non-autonomous
parabolic SPDEs with additive fractional Brownian and Poisson jump noise."""

from .fem import (
    FeMatrices,
    Mesh1D,
    OperatorFamily,
    assemble_mass,
    assemble_stiffness,
    fractional_power_apply,
    generalized_eigendecomposition,
    l2_project,
)
from .harness import ErrorTable, StudyConfig, estimate_rate, holder_check, spatial_study, temporal_study
from .kernels import KernelContext, expm_action, phi1_action, resolvent_step
from .noise import (
    FbmSpec,
    JumpSpec,
    NoisePath,
    TimeGrid,
    coarsen,
    compensated_increment,
    fbm_increments,
    field_increment,
    sample_jump_path,
    sample_noise_path,
)
from .problem import Problem, default_problem, heat_problem
from .schemes import ModelSpec, Trajectory, implicit_step, reference_solution, simulate, simulate_path, smti_step

__version__ = "0.1.0"
