import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from magspde.fem import FeMatrices, Mesh1D, OperatorFamily, assemble_mass, assemble_stiffness, mass_norm
from magspde.kernels import (
    PHI1_TAYLOR_THRESHOLD,
    KernelContext,
    expm_action,
    phi1,
    phi1_action,
    resolvent_step,
)


def build(n=31, advection=None, q=lambda x, t: 1 + 0.5 * np.sin(3 * x), mode="spectral"):
    mesh = Mesh1D(0.0, 1.0, n)
    ops = OperatorFamily(q, advection=advection)
    return KernelContext.build(assemble_mass(mesh), assemble_stiffness(mesh, ops, 0.0), mode=mode)


@pytest.fixture(scope="module")
def ctx():
    return build()


def dense_generator(c):
    return sla.solve(c.mass.toarray(), c.stiffness.toarray())


def test_phi1_scalar_values():
    z = np.array([0.0, 1e-8, 1e-5, 1e-3, 0.5, 3.0, 50.0])
    with np.errstate(divide="ignore", invalid="ignore"):
        ref = np.where(z > 0, -np.expm1(-z) / z, 1.0)
    np.testing.assert_allclose(phi1(z), ref, rtol=1e-14)


def test_phi1_continuous_at_threshold():
    z = PHI1_TAYLOR_THRESHOLD
    below, above = phi1(np.array([z * (1 - 1e-12)])), phi1(np.array([z * (1 + 1e-12)]))
    assert abs(below[0] - above[0]) < 1e-15


def test_resolvent_dt_zero(ctx):
    v = np.random.default_rng(0).standard_normal(ctx.n)
    np.testing.assert_array_equal(resolvent_step(ctx, 0.0, v), v)


def test_resolvent_scalar():
    c = KernelContext.build(sp.csr_matrix([[1.0]]), sp.csr_matrix([[4.0]]))
    np.testing.assert_allclose(c.resolvent(0.1, np.array([2.0])), [2.0 / 1.4], rtol=1e-15)


def test_resolvent_on_eigenvector(ctx):
    vk, lam = ctx.spectral.vectors[:, 3], ctx.eigenvalues[3]
    out = resolvent_step(ctx, 0.01, vk)
    np.testing.assert_allclose(out, vk / (1 + lam * 0.01), rtol=1e-12, atol=1e-12 * np.abs(vk).max())


def test_negative_dt_rejected(ctx):
    v = np.ones(ctx.n)
    for fn in (resolvent_step, expm_action):
        with pytest.raises(ValueError):
            fn(ctx, -0.1, v)
    for dt in (0.0, -0.1):
        with pytest.raises(ValueError):
            phi1_action(ctx, dt, v)


def test_expm_dt_zero(ctx):
    v = np.random.default_rng(1).standard_normal(ctx.n)
    np.testing.assert_array_equal(expm_action(ctx, 0.0, v), v)


def test_expm_on_eigenvector(ctx):
    vk, lam = ctx.spectral.vectors[:, 2], ctx.eigenvalues[2]
    np.testing.assert_allclose(expm_action(ctx, 0.003, vk), np.exp(-lam * 0.003) * vk,
                               rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("dt", [1e-4, 1e-3, 1e-2])
def test_spectral_matches_dense_oracle(ctx, dt):
    v = np.random.default_rng(2).standard_normal(ctx.n)
    A = dense_generator(ctx)
    ref_e = sla.expm(-dt * A) @ v
    ref_p = sla.solve(dt * A, v - ref_e)
    assert np.linalg.norm(expm_action(ctx, dt, v) - ref_e) <= 1e-10 * np.linalg.norm(ref_e)
    assert np.linalg.norm(phi1_action(ctx, dt, v) - ref_p) <= 1e-10 * np.linalg.norm(ref_p)


@given(s=st.floats(1e-4, 0.05), t=st.floats(1e-4, 0.05), seed=st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_semigroup_property(ctx, s, t, seed):
    v = np.random.default_rng(seed).standard_normal(ctx.n)
    lhs = expm_action(ctx, s, expm_action(ctx, t, v))
    rhs = expm_action(ctx, s + t, v)
    assert np.linalg.norm(lhs - rhs) <= 1e-8 * np.linalg.norm(rhs)


@pytest.mark.parametrize("dt", [1e-3, 1e-2, 0.1])
def test_phi1_identity(ctx, dt):
    v = np.random.default_rng(3).standard_normal(ctx.n)
    p = phi1_action(ctx, dt, v)
    # dt M^{-1} K phi1 v = v - e^{-dt A} v
    lhs = dt * sla.solve(ctx.mass.toarray(), ctx.stiffness @ p)
    rhs = v - expm_action(ctx, dt, v)
    assert np.linalg.norm(lhs - rhs) <= 1e-9 * np.linalg.norm(rhs)


def test_phi1_zero_operator():
    mesh = Mesh1D(0.0, 1.0, 10)
    c = KernelContext.build(assemble_mass(mesh), sp.csr_matrix((10, 10)))
    v = np.arange(10.0)
    np.testing.assert_allclose(phi1_action(c, 0.5, v), v, rtol=1e-14, atol=1e-14)
    np.testing.assert_allclose(expm_action(c, 0.5, v), v, rtol=1e-14, atol=1e-14)


def test_phi1_on_eigenvector(ctx):
    dt, k = 0.02, 4
    vk, lam = ctx.spectral.vectors[:, k], ctx.eigenvalues[k]
    z = lam * dt
    np.testing.assert_allclose(phi1_action(ctx, dt, vk), (1 - np.exp(-z)) / z * vk, rtol=1e-10, atol=1e-13)


@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_phi1_linear(ctx, a, b, seed):
    u, v = np.random.default_rng(seed).standard_normal((2, ctx.n))
    lhs = phi1_action(ctx, 0.01, a * u + b * v)
    rhs = a * phi1_action(ctx, 0.01, u) + b * phi1_action(ctx, 0.01, v)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * (np.linalg.norm(rhs) + np.linalg.norm(u) + np.linalg.norm(v))


@given(dt=st.floats(1e-5, 1.0), seed=st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_expm_contracts_mass_norm(ctx, dt, seed):
    v = np.random.default_rng(seed).standard_normal(ctx.n)
    assert mass_norm(ctx.mass, expm_action(ctx, dt, v)) <= mass_norm(ctx.mass, v) * (1 + 1e-12)


def test_resolvent_vs_exponential_second_order(ctx):
    # smooth data in the discrete sense: a few low modes of A_h
    v = ctx.spectral.vectors[:, :3] @ np.array([1.0, 0.3, -0.2])
    dts = 1e-3 * 0.5 ** np.arange(5)
    d = [mass_norm(ctx.mass, resolvent_step(ctx, dt, v) - expm_action(ctx, dt, v)) for dt in dts]
    ratios = np.array(d[:-1]) / np.array(d[1:])
    assert np.all(np.abs(ratios - 4) <= 0.8), ratios


def test_batched_columns(ctx):
    V = np.random.default_rng(4).standard_normal((ctx.n, 5))
    for fn in (expm_action, phi1_action, resolvent_step):
        out = fn(ctx, 0.01, V)
        np.testing.assert_allclose(out[:, 2], fn(ctx, 0.01, V[:, 2]), rtol=1e-12, atol=1e-14)


def test_expm_plus_phi1_matches_separate(ctx):
    rng = np.random.default_rng(5)
    v, w = rng.standard_normal((2, ctx.n))
    both = ctx.expm_plus_phi1(0.01, v, w)
    np.testing.assert_allclose(both, ctx.expm(0.01, v) + 0.01 * ctx.phi1(0.01, w), rtol=1e-12, atol=1e-14)
    V, W = rng.standard_normal((2, ctx.n, 3))
    np.testing.assert_allclose(ctx.expm_plus_phi1(0.01, V, W)[:, 1], ctx.expm_plus_phi1(0.01, V[:, 1], W[:, 1]),
                               rtol=1e-12, atol=1e-14)


def test_advection_dense_fallback():
    c = build(n=20, advection=lambda x, t: 2 * np.ones_like(x))
    assert not c.symmetric and c.spectral is None
    v = np.random.default_rng(6).standard_normal(20)
    A = dense_generator(c)
    dt = 0.01
    e = expm_action(c, dt, v)
    np.testing.assert_allclose(e, sla.expm(-dt * A) @ v, rtol=1e-10)
    p = phi1_action(c, dt, v)
    assert np.linalg.norm(dt * A @ p - (v - e)) <= 1e-9 * np.linalg.norm(v - e)
    r = resolvent_step(c, dt, v)
    np.testing.assert_allclose(r, np.linalg.solve(np.eye(20) + dt * A, v), rtol=1e-10)


def test_rescaled_base_matches_direct():
    mesh = Mesh1D(0.0, 1.0, 25)
    ops = OperatorFamily.separable(lambda x: 1 + x, lambda t: 2.0 + t, ellipticity_floor=0.5)
    fe = FeMatrices(mesh, ops)
    base = build(25, q=lambda x, t: 1 + x).spectral
    fast = KernelContext.build(fe.mass, fe.stiffness_at(0.5), 0.5, base=base, scale=2.5)
    slow = KernelContext.build(fe.mass, fe.stiffness_at(0.5), 0.5)
    v = np.random.default_rng(7).standard_normal(25)
    np.testing.assert_allclose(fast.expm(0.01, v), slow.expm(0.01, v), rtol=1e-10)


def test_resolvent_only_mode():
    c = build(mode="resolvent-only")
    v = np.ones(c.n)
    assert c.resolvent(0.1, v).shape == v.shape
    with pytest.raises(RuntimeError):
        c.expm(0.1, v)
