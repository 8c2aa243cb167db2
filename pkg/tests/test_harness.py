import numpy as np
import pytest

from magspde.harness import (
    ErrorRow,
    ErrorTable,
    StudyConfig,
    default_threads,
    estimate_rate,
    holder_check,
    run_study,
    spatial_study,
    temporal_study,
)
from magspde.noise import TimeGrid
from magspde.problem import default_problem, heat_problem


def small_problem(**kw):
    kw.setdefault("n_modes", 16)
    return default_problem(**kw)


def small_cfg(**kw):
    base = dict(problem=small_problem(), scheme="smti", resolutions=[8, 16, 32], reference_resolution=128,
                samples=6, seed=3, n_interior=15, block_size=4)
    base.update(kw)
    return StudyConfig(**base)


def test_estimate_rate_exact_power_law():
    dt = 2.0 ** -np.arange(4, 9)
    slope, se = estimate_rate(dt, 3.7 * dt**0.75)
    assert abs(slope - 0.75) <= 1e-12
    assert se <= 1e-12


def test_estimate_rate_two_point_formula():
    slope, se = estimate_rate([0.1, 0.05], [0.3, 0.2])
    assert slope == pytest.approx(np.log(0.3 / 0.2) / np.log(2.0), rel=1e-15)
    assert se == 0.0


@pytest.mark.parametrize("errors", [[0.1, 0.0, 0.2], [0.1, -1.0, 0.2], [0.1, np.nan, 0.2]])
def test_estimate_rate_rejects_bad_errors(errors):
    with pytest.raises(ValueError):
        estimate_rate([0.1, 0.05, 0.025], errors)


def test_estimate_rate_noisy_recovery():
    rng = np.random.default_rng(0)
    dt = 2.0 ** -np.arange(4, 9)
    hits = 0
    for _ in range(500):
        e = dt**0.75 * (1 + 0.05 * rng.standard_normal(dt.size))
        hits += abs(estimate_rate(dt, e)[0] - 0.75) <= 0.1
    assert hits / 500 >= 0.95


def test_config_validation():
    with pytest.raises(ValueError, match="strictly coarser"):
        small_cfg(resolutions=[8, 128]).validate()
    with pytest.raises(ValueError, match="divisible"):
        small_cfg(resolutions=[8, 24]).validate()
    with pytest.raises(ValueError, match="nested"):
        small_cfg(mode="spatial", resolutions=[6], reference_resolution=31).validate()
    with pytest.raises(ValueError, match="2 samples"):
        small_cfg(samples=1).validate()
    with pytest.raises(ValueError, match="scheme"):
        small_cfg(scheme="euler").validate()


def test_study_entry_points_check_mode():
    with pytest.raises(ValueError):
        spatial_study(small_cfg())
    with pytest.raises(ValueError):
        temporal_study(small_cfg(mode="spatial", resolutions=[3, 7], reference_resolution=15))


def test_temporal_table_structure():
    table = temporal_study(small_cfg(resolutions=[32, 8, 16]))
    assert [r.resolution for r in table.rows] == [8, 16, 32]
    assert all(r.rms_error > 0 and r.samples == 6 for r in table.rows)
    assert table.rows[0].step == pytest.approx(1 / 8)
    assert len(table.checksums) == 6 and len(set(table.checksums)) == 6


def test_common_random_numbers_across_schemes_and_threads():
    a = run_study(small_cfg())
    b = run_study(small_cfg(scheme="implicit", threads=3, block_size=2))
    assert a.checksums == b.checksums


def test_deterministic_problem_is_floor_limited():
    problem = heat_problem()
    cfg = StudyConfig(problem=problem, scheme="smti", resolutions=[4, 8, 16], reference_resolution=64,
                      samples=2, n_interior=15)
    table = run_study(cfg)
    assert table.floor_limited
    assert table.passed
    assert max(r.rms_error for r in table.rows) < 1e-12


def test_table_bytes_independent_of_threads():
    csvs = {run_study(small_cfg(samples=9, threads=k)).to_csv(["x"]) for k in (1, 2, 4)}
    assert len(csvs) == 1


def test_stderr_shrinks_like_sqrt_samples():
    kw = dict(resolutions=[8, 16], reference_resolution=64, block_size=250)
    a = run_study(small_cfg(samples=1000, **kw))
    b = run_study(small_cfg(samples=2000, **kw))
    for ra, rb in zip(a.rows, b.rows):
        assert abs(ra.stderr / rb.stderr - np.sqrt(2)) <= 0.15 * np.sqrt(2)


def test_spatial_heat_rate():
    cfg = StudyConfig(problem=heat_problem(), scheme="smti", resolutions=[7, 15, 31], reference_resolution=127,
                      samples=2, mode="spatial", time_steps=8)
    table = spatial_study(cfg)
    assert abs(table.fitted_slope - 2.0) <= 0.2


def test_csv_format():
    rows = [ErrorRow(8, 0.125, 0.01, 0.001, 10), ErrorRow(16, 0.0625, 0.005, 0.0005, 10)]
    t = ErrorTable("temporal", "smti", rows, 1.0, 0.0, band=(0.5, 1.5))
    text = t.to_csv(["magspde test", "config: {}"])
    assert text.splitlines() == [
        "# magspde test",
        "# config: {}",
        "resolution,dt_or_h,rms_error,stderr,samples",
        "8,0.125,0.01,0.001,10",
        "16,0.0625,0.005,0.0005,10",
    ]
    assert "\r" not in text
    s = t.summary()
    assert s["passed"] and s["slope"] == 1.0 and s["band"] == [0.5, 1.5]


@pytest.mark.parametrize("slope,band,ok", [(0.7, (0.6, 0.9), True), (0.95, (0.6, 0.9), False),
                                           (0.9, (0.55, None), True), (0.5, (0.55, None), False)])
def test_band_checks(slope, band, ok):
    assert ErrorTable("temporal", "smti", [], slope, 0.0, band=band).passed is ok


def test_default_threads_env(monkeypatch):
    monkeypatch.delenv("MAGSPDE_THREADS", raising=False)
    assert default_threads() == 1
    monkeypatch.setenv("MAGSPDE_THREADS", "3")
    assert default_threads() == 3
    monkeypatch.setenv("MAGSPDE_THREADS", "lots")
    assert default_threads() == 1


def test_holder_smooth_deterministic_path():
    res = holder_check(heat_problem(T=0.5), 31, TimeGrid(0.5, 256), samples=2, n_lags=4, lag_start=0)
    assert res.slope >= 1.9


def test_holder_jump_only_model():
    problem = default_problem(n_modes=4, nonlinearity="zero")
    problem.fbm = None
    res = holder_check(problem, 31, TimeGrid(1.0, 1024), samples=20, n_lags=5)
    assert abs(res.slope - 1.0) <= 0.2
