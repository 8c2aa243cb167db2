"""Statistical checks of the noise generators, reported as plain dicts."""

from __future__ import annotations

import numpy as np
from scipy import stats

from .fem import FeMatrices, Mesh1D, OperatorFamily, l2_project, mass_norm
from .noise import (
    FbmSpec,
    JumpSpec,
    fbm_increment_covariance,
    fbm_increments,
    fgn_autocovariance,
    field_increments,
    sine_mode_projections,
    stream,
)

__all__ = ["check", "fbm_checks", "jump_checks", "field_checks", "noise_report"]

N_SIGMA = 3.0


def check(name, estimate, expected, stderr, *, n_sigma=N_SIGMA, rtol=None, **extra):
    """One pass/fail record; ``rtol`` switches from a z-test to a relative test."""
    if rtol is not None:
        passed = abs(estimate - expected) <= rtol * abs(expected)
        tol = {"rtol": rtol}
    else:
        passed = abs(estimate - expected) <= n_sigma * stderr
        tol = {"n_sigma": n_sigma}
    return {"name": name, "estimate": float(estimate), "expected": float(expected),
            "stderr": float(stderr), **tol, **extra, "passed": bool(passed)}


def fbm_checks(H, steps, dt, samples, seed):
    x = fbm_increments(H, steps, dt, stream(seed, 0, 0), size=samples)
    gamma = fgn_autocovariance(H, steps, dt)
    out = []
    sq = x[:, 0] ** 2
    out.append(check("fbm.variance", sq.mean(), dt ** (2 * H), sq.std(ddof=1) / np.sqrt(samples)))
    for k in (1, 2, 3):
        if k >= steps:
            break
        prod = x[:, 0] * x[:, k] / gamma[0]
        out.append(check(f"fbm.lag{k}_correlation", prod.mean(), gamma[k] / gamma[0],
                         prod.std(ddof=1) / np.sqrt(samples)))
    cov = fbm_increment_covariance(H, steps, dt)
    prods = x[:, :, None] * x[:, None, :]
    est = prods.mean(axis=0)
    se = prods.std(axis=0, ddof=1) / np.sqrt(samples)
    z = np.abs(est - cov) / se
    worst = np.unravel_index(np.argmax(z), z.shape)
    out.append({
        "name": "fbm.covariance_matrix",
        "steps": steps,
        "max_z": float(z.max()),
        "worst_entry": [int(worst[0]), int(worst[1])],
        "n_sigma": N_SIGMA,
        "passed": bool(np.all(z <= N_SIGMA)),
    })
    brown = fbm_increments(0.5 + 1e-12, 2, dt, stream(seed, 1, 0), size=samples)
    rho = np.corrcoef(brown[:, 0], brown[:, 1])[0, 1]
    out.append(check("fbm.brownian_limit_lag1", rho, 0.0, 1.0 / np.sqrt(samples)))
    return out


def _step_increments(spec: JumpSpec, dt, samples, rng):
    counts = rng.poisson(spec.intensity * dt, size=samples)
    marks = np.asarray(spec.mark_sampler(rng, int(counts.sum())), dtype=float)
    owner = np.repeat(np.arange(samples), counts)
    out = np.tile(-dt * spec.compensator_mean, (samples, 1))
    if marks.size:
        np.add.at(out, owner, spec.psi(marks).T)
    return out  # (samples, n)


def jump_checks(spec: JumpSpec, mass, dt, horizon, samples, seed):
    rng = stream(seed, 0, 1)
    out = []
    lam_t = spec.intensity * horizon
    counts = rng.poisson(lam_t, size=samples)
    out.append(check("jump.event_count_mean", counts.mean(), lam_t,
                     np.sqrt(max(lam_t, 1e-300)) / np.sqrt(samples)))
    # event times are i.i.d. uniform given the count, so the pooled bin totals are multinomial
    times = rng.uniform(0.0, horizon, size=int(counts.sum()))
    owner = np.repeat(np.arange(samples), counts)
    bins = np.minimum((4 * times / horizon).astype(int), 3)
    table = np.zeros((samples, 4))
    np.add.at(table, (owner, bins), 1.0)
    totals = table.sum(axis=0)
    chi2 = stats.chisquare(totals)
    out.append({"name": "jump.bin_uniformity_chi2", "statistic": float(chi2.statistic),
                "p_value": float(chi2.pvalue), "level": 0.01, "passed": bool(chi2.pvalue > 0.01)})
    r = np.corrcoef(table[:, 0], table[:, 1])[0, 1]
    out.append(check("jump.disjoint_bin_correlation", r, 0.0, 1.0 / np.sqrt(samples)))

    inc = _step_increments(spec, dt, samples, rng)
    nxt = _step_increments(spec, dt, samples, rng)
    direction = np.asarray(spec.compensator_mean, dtype=float)
    if not np.any(direction):
        direction = inc[np.argmax(np.abs(inc).sum(axis=1))]
    coord = inc @ (mass @ direction)
    out.append(check("jump.compensated_mean", coord.mean(), 0.0, coord.std(ddof=1) / np.sqrt(samples)))
    energy = mass_norm(mass, inc.T) ** 2
    out.append(check("jump.ito_isometry", energy.mean(), dt * spec.second_moment,
                     energy.std(ddof=1) / np.sqrt(samples), rtol=0.05))
    cross = np.sum(inc.T * (mass @ nxt.T), axis=0)
    out.append(check("jump.cross_step_moment", cross.mean(), 0.0, cross.std(ddof=1) / np.sqrt(samples)))
    return out


def field_checks(H, variances, dt, samples, seed, n_interior=255, max_modes=16):
    mesh = Mesh1D(0.0, 1.0, n_interior)
    fe = FeMatrices(mesh, OperatorFamily(lambda x, t: np.ones_like(x)))
    q = np.asarray(variances, dtype=float)[:max_modes]
    spec = FbmSpec(H, q)
    proj = sine_mode_projections(mesh, fe.mass, spec.n_modes)
    inc = fbm_increments(H, 1, dt, stream(seed, 0, 2), size=(spec.n_modes, samples))[..., 0]
    field = field_increments(spec, proj, inc)
    energy = mass_norm(fe.mass, field) ** 2
    return [check("field.energy", energy.mean(), dt ** (2 * H) * q.sum(),
                  energy.std(ddof=1) / np.sqrt(samples), modes=int(spec.n_modes))]


def noise_report(cfg, seed=None) -> dict:
    """Run every check for the noise settings of a :class:`RunConfig`."""
    nz, val = cfg.noise, cfg.validation
    seed = cfg.study.seed if seed is None else seed
    checks = fbm_checks(nz.H, val.steps, val.dt, val.samples, seed)
    q = FbmSpec.power_law(nz.H, nz.n_modes, nz.decay, nz.amplitude.sigma).mode_variances
    checks += field_checks(nz.H, q, val.dt, val.field_samples, seed)
    jump = nz.jump
    if jump.intensity > 0:
        from .problem import profile_preset

        a, b = cfg.problem.domain
        mesh = Mesh1D(a, b, 63)
        fe = FeMatrices(mesh, OperatorFamily(lambda x, t: np.ones_like(x)))
        profile = l2_project(mesh, fe.mass, profile_preset(jump.profile, jump.amplitude, a, b))
        spec = JumpSpec.gaussian_marks(jump.intensity, profile, fe.mass, jump.mark_mean, jump.mark_std)
        checks += jump_checks(spec, fe.mass, val.dt, val.dt * val.steps, val.samples, seed)
    return {"checks": checks, "passed": all(c["passed"] for c in checks)}
