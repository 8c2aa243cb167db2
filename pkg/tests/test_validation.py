import numpy as np
import pytest

from magspde.config import parse_config
from magspde.fem import Mesh1D
from magspde.problem import (
    AMPLITUDE_PRESETS,
    DIFFUSION_PRESETS,
    amplitude_preset,
    diffusion_preset,
    initial_preset,
    nonlinearity_preset,
    profile_preset,
)
from magspde.validation import check, noise_report


def test_check_z_and_relative_modes():
    assert check("a", 1.05, 1.0, 0.02)["passed"]
    assert not check("a", 1.07, 1.0, 0.02)["passed"]
    rec = check("b", 1.04, 1.0, 0.0, rtol=0.05)
    assert rec["passed"] and rec["rtol"] == 0.05
    assert not check("b", 1.06, 1.0, 0.0, rtol=0.05)["passed"]


def test_report_at_small_sample_size():
    cfg = parse_config({"validation": {"samples": 2000, "field_samples": 500, "steps": 4}})
    report = noise_report(cfg)
    assert len(report["checks"]) >= 10
    assert all(isinstance(c["passed"], bool) for c in report["checks"])


def test_report_without_jumps():
    cfg = parse_config({"noise": {"jump": {"intensity": 0.0}},
                        "validation": {"samples": 500, "field_samples": 200}})
    names = [c["name"] for c in noise_report(cfg)["checks"]]
    assert not any(n.startswith("jump.") for n in names)


@pytest.mark.parametrize("name", DIFFUSION_PRESETS)
def test_diffusion_presets_respect_floor(name):
    ops = diffusion_preset(name, 0.01, 1.0, 0.0, 1.0)
    x = Mesh1D(0.0, 1.0, 63).quadrature()[0]
    for t in np.linspace(0.0, 1.0, 17):
        assert np.min(ops.diffusion(x, t)) >= ops.ellipticity_floor
    assert ops.is_separable and ops.self_adjoint


@pytest.mark.parametrize("name", AMPLITUDE_PRESETS)
def test_amplitude_presets_positive(name):
    sigma = amplitude_preset(name, 2.0, 1.0)
    assert all(sigma(t) > 0 for t in np.linspace(0, 1, 9))


def test_nonlinearity_lipschitz_constants():
    rng = np.random.default_rng(0)
    u, v = rng.standard_normal((2, 50))
    for name in ("linear", "sine"):
        F, L = nonlinearity_preset(name, 0.7)
        assert np.linalg.norm(F(0.0, u) - F(0.0, v)) <= L * np.linalg.norm(u - v)
    assert nonlinearity_preset("zero", 1.0) == (None, 0.0)


def test_presets_vanish_on_boundary():
    for f in (initial_preset("sine", 0.0, 2.0), initial_preset("bump", 0.0, 2.0),
              profile_preset("bump", 0.5, 0.0, 2.0), profile_preset("sine", 0.5, 0.0, 2.0)):
        np.testing.assert_allclose(f(np.array([0.0, 2.0])), 0.0, atol=1e-15)


@pytest.mark.parametrize("fn", [diffusion_preset, nonlinearity_preset, initial_preset])
def test_unknown_preset_names(fn):
    with pytest.raises(KeyError):
        if fn is diffusion_preset:
            fn("nope", 1.0, 1.0, 0.0, 1.0)
        elif fn is nonlinearity_preset:
            fn("nope", 1.0)
        else:
            fn("nope", 0.0, 1.0)
