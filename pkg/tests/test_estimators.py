import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rgbvlp.config import config_from_dict, distance_scene, position_scene
from rgbvlp.estimators import (
    CorrelationTable,
    DelayGrid,
    NonPositiveStatisticError,
    ReceivedFrame,
    SearchGrid,
    SingularEnergyError,
    WindowError,
    _lag_search,
    correlate,
    grid_search,
    lag_of,
    ml_distance_s1,
    ml_distance_s1_modified,
    ml_distance_s2,
    ml_distance_s3,
    ml_position_s1,
    ml_position_s2,
    ml_position_s3,
    sample_templates,
    template_length,
)
from rgbvlp.geometry import SPEED_OF_LIGHT
from rgbvlp.simulator import noiseless_frames, synchronized
from rgbvlp.waveform import RaisedCosineWaveform, closed_form_cross_energies

DT = 5e-10


# ------------------------------------------------------------ sampling and correlation


def test_template_length_covers_support():
    w = RaisedCosineWaveform(0.1, 1e-6, 1e7)
    assert template_length(w, 5e-10) == 2001
    assert template_length(w, 3e-10) == 3334


def test_lag_rounds_to_nearest():
    assert list(lag_of(np.array([0.74e-9, 0.76e-9, 1.25e-9]), 0.5e-9)) == [1, 2, 2]


def test_correlator_reproduces_energy():
    # 20 samples per carrier period
    w = RaisedCosineWaveform(0.1, 1e-6, 1e7)
    dt = w.duration / 2000
    n = 3000
    y = w(dt * np.arange(n) - 200 * dt)[None, :]
    E = closed_form_cross_energies([w]).E[0, 0]
    assert correlate(y[0], 0, dt, w, 200 * dt) == pytest.approx(E, rel=2e-3)


def test_correlation_table_matches_direct_sums(rng):
    ws = [RaisedCosineWaveform(0.1, 2e-8, f) for f in (9e7, 1e8, 1.1e8)]
    frame = ReceivedFrame(rng.standard_normal((3, 120)), DT, start_index=30)
    tmpl = sample_templates(ws, DT)
    table = CorrelationTable(frame, tmpl, 35, 100)
    for q in (35, 61, 100):
        for j in range(3):
            for i, w in enumerate(ws):
                direct = correlate(frame.samples[j], 30, DT, w, q * DT)
                assert table(q)[j, i] == pytest.approx(direct, rel=1e-10, abs=1e-18)
    with pytest.raises(WindowError):
        table(101)
    with pytest.raises(WindowError):
        CorrelationTable(frame, tmpl, 10, 40)


def test_frame_window():
    f = ReceivedFrame(np.zeros((3, 11)), 1e-9, start_index=5)
    assert f.window == pytest.approx((5e-9, 15e-9))


# ------------------------------------------------------------ grids


def test_grid_search_finds_peak():
    grid = SearchGrid([0, 0], [1, 1], 0.1, levels=3)
    res = grid_search(lambda p: -np.sum((p - [0.3712, 0.6045]) ** 2, axis=1), grid)
    np.testing.assert_allclose(res.point, [0.3712, 0.6045], atol=0.1 * 0.2**3)


def test_grid_search_ties_prefer_smallest():
    res = grid_search(lambda p: np.zeros(len(p)), SearchGrid([0, 0], [1, 1], 0.5, levels=1))
    np.testing.assert_array_equal(res.point, [0, 0])


def test_grid_floor_limits_refinement():
    grid = SearchGrid([3.0], [7.0], 0.05).with_floor(0.15)
    assert grid.step[0] == pytest.approx(0.15)
    res = grid_search(lambda p: -np.abs(p[:, 0] - 5.02), grid)
    assert res.point[0] == pytest.approx(5.1, abs=1e-12) or res.point[0] == pytest.approx(4.95, abs=1e-12)


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(0.01, 0.5))
def test_grid_search_never_decreases(coefs, step):
    a, b, c = coefs

    def f(p):
        x = p[:, 0]
        return np.sin(7 * a * x) + b * np.cos(3 * x) - c * x**2

    res = grid_search(f, SearchGrid([-2.0], [2.0], step, levels=3))
    assert all(h2 >= h1 for h1, h2 in zip(res.history, res.history[1:]))
    assert res.value == pytest.approx(float(f(res.point[None, :])[0]))


def test_boundary_flags():
    grid = SearchGrid([0, 0, 0], [8, 8, 4.9], 0.25)
    assert list(grid.on_boundary([0.0, 4.0, 4.9])) == [True, False, True]


@pytest.mark.parametrize("kwargs", [{"step": 0}, {"shrink": 1.0}, {"levels": -1}, {"upper": [-1.0]}])
def test_search_grid_validation(kwargs):
    args = {"lower": [0.0], "upper": [1.0], "step": 0.1, **kwargs}
    with pytest.raises(ValueError):
        SearchGrid(**args)


@given(st.integers(0, 400), st.integers(1, 8))
def test_lag_search_finds_unimodal_peak(peak, step):
    def stat(rows, lags):
        lags = np.broadcast_to(lags, (len(rows),) + np.shape(lags)[-1:])
        return -np.abs(lags - peak).astype(float)

    best, val, _ = _lag_search(stat, 0, 400, DelayGrid(0, 1, step, levels=3), 1)
    assert best[0] == peak and val[0] == 0.0


def test_delay_grid_lags():
    assert DelayGrid(1.01e-9, 3.99e-9).lags(1e-9) == (1, 4)
    with pytest.raises(ValueError):
        DelayGrid(2.0, 1.0)


# ------------------------------------------------------------ distance estimators


def short_distance_scene(**scene):
    cfg = config_from_dict({"waveform": {"duration": 1e-6}, "scene": scene, "dt": DT})
    return distance_scene(cfg)


@pytest.fixture(scope="module")
def dscene():
    return short_distance_scene(distance=5.0, clock_offset=3e-9, offset_range=[0.0, 2e-8])


def test_noise_free_distance_estimates(dscene):
    sync = synchronized(dscene)
    frame = noiseless_frames(sync)[0]
    cdt = SPEED_OF_LIGHT * DT
    for est in (ml_distance_s1, ml_distance_s3):
        assert est(frame, sync.model, sync.grid).value == pytest.approx(5.0, abs=cdt)
    e2 = ml_distance_s2(noiseless_frames(dscene)[0], dscene.model, dscene.tau_grid)
    assert e2.value == pytest.approx(5.0, rel=2e-3)
    assert e2.tau_hat == pytest.approx(dscene.true_delay, abs=DT)
    em = ml_distance_s1_modified(frame, sync.model, sync.grid)
    assert em.value == pytest.approx(5.0, rel=2e-3)


def test_modified_estimator_equals_async_at_same_delay():
    scene = short_distance_scene(distance=5.0, offset_range=[0.0, 0.0])
    frame = noiseless_frames(scene)[0]
    a = ml_distance_s1_modified(frame, scene.model, scene.grid)
    b = ml_distance_s2(frame, scene.model, scene.tau_grid)
    assert lag_of(a.tau_hat, DT) == lag_of(b.tau_hat, DT)
    assert a.value == pytest.approx(b.value, rel=1e-12)


def test_s3_recovers_gains(dscene):
    sync = synchronized(dscene)
    est = ml_distance_s3(noiseless_frames(sync)[0], sync.model, sync.grid)
    assert est.identifiable
    np.testing.assert_allclose(est.gains_hat, sync.true_gains(), rtol=0.02, atol=1e-3 * sync.true_gains().max())


def test_zero_frame_has_no_rss(dscene):
    frame = noiseless_frames(dscene)[0].scaled(0.0)
    with pytest.raises(NonPositiveStatisticError):
        ml_distance_s2(frame, dscene.model, dscene.tau_grid)


def test_identical_colors_not_identifiable(dscene):
    ws = (RaisedCosineWaveform(0.1, 1e-6, 1e7),) * 3
    model = dataclasses.replace(dscene.model, waveforms=ws, energies=closed_form_cross_energies(ws))
    scene = synchronized(dataclasses.replace(dscene, model=model))
    with pytest.raises(SingularEnergyError):
        ml_distance_s3(noiseless_frames(scene)[0], scene.model, scene.grid)


# ------------------------------------------------------------ position estimators


@pytest.fixture(scope="module")
def pscene():
    cfg = config_from_dict(
        {
            "waveform": {"duration": 1e-6},
            "scene": {
                "offset_range": [-1e-8, 1e-8],
                "leds": [
                    {"location": [2, 2, 5], "angles_deg": [150, 45], "clock_offset": 3e-9},
                    {"location": [6, 2, 5], "angles_deg": [150, 135], "clock_offset": -2e-9},
                    {"location": [2, 6, 5], "angles_deg": [150, -45], "clock_offset": 5e-9},
                    {"location": [6, 6, 5], "angles_deg": [150, -135], "clock_offset": 1e-9},
                ],
            },
            "grids": {"position": {"lower": [0, 0, 0], "upper": [8, 8, 4.9], "step": 0.25, "levels": 0}},
            "dt": DT,
        }
    )
    return position_scene(cfg)


def test_noise_free_position_on_grid(pscene):
    # the truth (4, 4, 1) is a coarse grid node, so the estimators return it exactly
    sync = synchronized(pscene)
    frames = noiseless_frames(sync)
    for est in (ml_position_s1, ml_position_s3):
        res = est(frames, sync.model, sync.grid)
        np.testing.assert_allclose(res.value, [4, 4, 1], atol=1e-12)
    res = ml_position_s2(noiseless_frames(pscene), pscene.model, pscene.grid, pscene.tau_grids())
    np.testing.assert_allclose(res.value, [4, 4, 1], atol=1e-12)
    # levels=0 leaves the delay search at its coarse 4-sample step
    np.testing.assert_allclose(res.tau_hat, pscene.true_delays(), atol=2 * DT + 1e-15)


def test_position_evaluation_counts(pscene):
    sync = synchronized(pscene)
    res = ml_position_s1(noiseless_frames(sync), sync.model, sync.grid)
    n_candidates = 33 * 33 * 21
    assert res.evaluations == n_candidates * 3 * 3 * 4
    assert not res.boundary_flag
