import dataclasses

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from rgbvlp.bounds import (
    SINGULAR_CONDITION,
    SingularBlockError,
    axial_gains,
    crlb_distance,
    crlb_distance_s1,
    crlb_distance_s2,
    crlb_distance_s2_closed_form,
    crlb_distance_s3,
    crlb_position,
    crlb_position_s2,
    crlb_position_s3,
    crlb_position_s3_single_color,
    dense_crlb,
    equivalent_fim_position_s3,
    fim_distance_s3,
    fim_position_s1,
    fim_position_s2,
    fim_position_s3,
    kappas,
    scaled_condition,
    trace_inverse,
)
from rgbvlp.config import build_energies, build_leds, build_receiver, config_from_dict
from rgbvlp.geometry import LedTransmitter, VlcReceiver, gamma_matrix, orientation_from_angles
from rgbvlp.waveform import CrossEnergies, RaisedCosineWaveform, closed_form_cross_energies, raised_cosine_set

from . import oracles

SIGMA2 = np.full(3, 1.336e-22)


def short_scene(**waveform):
    cfg = config_from_dict({"waveform": {"duration": 1e-6, **waveform}})
    leds = build_leds(cfg)
    return cfg, leds, build_receiver(cfg), tuple(build_energies(l.waveforms) for l in leds)


def scaled_diff(J, Jref):
    d = np.sqrt(np.outer(np.diag(Jref), np.diag(Jref)))
    return np.abs((J - Jref) / d).max()


# ------------------------------------------------------------ kappas


def test_kappas_match_brute_force(gammas, energies):
    k = kappas(gammas, SIGMA2, energies[0])
    ref = oracles.brute_kappas(gammas, SIGMA2, energies[0])
    assert (k.kappa, k.kappa_prime, k.kappa_dprime) == pytest.approx(ref, rel=1e-12)


@given(fc=st.floats(1e5, 1e9), T=st.floats(1e-6, 1e-2), led=st.integers(1, 4))
def test_kappa_cauchy_schwarz(fc, T, led):
    ce = closed_form_cross_energies(raised_cosine_set(0.1, T, fc, led))
    g = gamma_matrix(VlcReceiver([0, 0, 0], [0, 0, 1], [1e-4] * 3, np.eye(3) * 0.4 + 0.01, SIGMA2), 1, 2.5)
    k = kappas(g, SIGMA2, ce)
    assert k.kappa_prime**2 <= k.kappa * k.kappa_dprime * (1 + 1e-9)


def test_identical_colors_zero_kappa_prime(gammas):
    ce = closed_form_cross_energies([RaisedCosineWaveform(0.1, 1e-6, 1e7)] * 3)
    k = kappas(gammas, SIGMA2, ce)
    assert abs(k.kappa_prime) <= 1e-12 * np.sqrt(k.kappa * k.kappa_dprime)


# ------------------------------------------------------------ distance vs oracle


@pytest.fixture(scope="module")
def distance_oracle():
    cfg, leds, rx, _ = short_scene()
    ws = leds[0].waveforms
    g = gamma_matrix(rx, 1.0, 2.5)
    dt = 1e-6 / 8000
    t = np.arange(0, 1e-6 + 40e-9, dt)
    return ws, g, closed_form_cross_energies(ws), oracles.distance_mean_fns(ws, g, 1.0, t), dt


@pytest.mark.parametrize("x", [3.0, 5.0, 8.0])
def test_distance_bounds_match_numeric_fim(distance_oracle, x):
    ws, g, ce, fns, dt = distance_oracle
    k = kappas(g, SIGMA2, ce)
    J1 = oracles.numeric_fim(fns["s1"], [x], [1e-5], SIGMA2, dt)
    assert crlb_distance_s1(x, 1.0, k).variance_bound == pytest.approx(1 / J1[0, 0], rel=1e-5)
    J2 = oracles.numeric_fim(fns["s2"], [x, 0.0], [1e-5, 1e-14], SIGMA2, dt)
    assert crlb_distance_s2(x, 1.0, k).variance_bound == pytest.approx(oracles.crlb_block(J2, 1), rel=1e-4)
    h = axial_gains(g, x, 1.0)
    theta = np.concatenate([[x], h.ravel()])
    steps = np.concatenate([[1e-5], 1e-3 * h.ravel()])
    J3 = oracles.numeric_fim(fns["s3"], theta, steps, SIGMA2, dt)
    assert scaled_diff(fim_distance_s3(h, SIGMA2, ce).matrix, J3) < 1e-5
    assert crlb_distance_s3(h, SIGMA2, ce).variance_bound == pytest.approx(oracles.crlb_block(J3, 1), rel=1e-4)


def test_distance_s2_closed_form(gammas, energies):
    k = kappas(gammas, SIGMA2, energies[0])
    for x in (2.0, 5.0, 10.0):
        assert crlb_distance_s2(x, 1.0, k).variance_bound == pytest.approx(crlb_distance_s2_closed_form(x, 1.0, k), rel=1e-10)


def test_distance_s3_schur_matches_dense(gammas, energies):
    h = axial_gains(gammas, 5.0, 1.0)
    schur = crlb_distance_s3(h, SIGMA2, energies[0]).variance_bound
    assert schur == pytest.approx(dense_crlb(fim_distance_s3(h, SIGMA2, energies[0]), 1).variance_bound, rel=1e-10)


def test_distance_s3_without_ep_is_inverse_a(gammas, energies):
    ce = energies[0]
    flat = CrossEnergies(ce.E, np.zeros_like(ce.Ep), ce.Epp)
    h = axial_gains(gammas, 5.0, 1.0)
    A = float(np.einsum("j,ji,il,jl->", 1 / SIGMA2, h, ce.Epp, h)) / oracles.C_LIGHT**2
    assert crlb_distance_s3(h, SIGMA2, flat).variance_bound == pytest.approx(1 / A, rel=1e-12)


def test_distance_s3_singular_gain_block(gammas):
    ce = closed_form_cross_energies([RaisedCosineWaveform(0.1, 1e-6, 1e7)] * 3)
    with pytest.raises(SingularBlockError, match="PD r"):
        crlb_distance_s3(axial_gains(gammas, 5.0, 1.0), SIGMA2, ce)


def test_unknown_scenario_rejected(gammas, energies):
    with pytest.raises(ValueError):
        crlb_distance("s4", 5.0, 1.0, gammas, SIGMA2, energies[0])


# ------------------------------------------------------------ position vs oracle


@pytest.fixture(scope="module")
def position_oracle():
    _, leds, rx, energies = short_scene()
    dt = 1e-6 / 8000
    t = np.arange(0, 1e-6 + 40e-9, dt)
    return leds, rx, energies, oracles.position_mean_fns(leds, rx, t), dt


@pytest.mark.parametrize("loc", [(4.0, 4.0, 1.0), (2.5, 5.5, 1.7)])
def test_position_fims_match_numeric(position_oracle, loc):
    leds, rx, energies, fns, dt = position_oracle
    p = np.array(loc)
    J1 = oracles.numeric_fim(fns["s1"], p, [1e-5] * 3, rx.noise_psd, dt)
    assert scaled_diff(fim_position_s1(leds, rx, energies, p).matrix, J1) < 1e-5

    theta2 = np.concatenate([p, np.zeros(len(leds))])
    J2 = oracles.numeric_fim(fns["s2"], theta2, [1e-5] * 3 + [1e-14] * len(leds), rx.noise_psd, dt)
    assert crlb_position_s2(leds, rx, energies, p).variance_bound == pytest.approx(oracles.crlb_block(J2, 3), rel=1e-4)

    H = np.array([oracles.gains_at(led, rx, p) for led in leds])
    theta3 = np.concatenate([p, H.ravel()])
    J3 = oracles.numeric_fim(fns["s3"], theta3, np.concatenate([[1e-5] * 3, 1e-3 * H.ravel()]), rx.noise_psd, dt)
    assert scaled_diff(fim_position_s3(leds, rx, energies, p).matrix, J3) < 1e-5
    assert crlb_position_s3(leds, rx, energies, p).variance_bound == pytest.approx(oracles.crlb_block(J3, 3), rel=1e-4)


def test_position_schur_matches_dense(leds, rx, energies):
    s2 = crlb_position_s2(leds, rx, energies).variance_bound
    s3 = crlb_position_s3(leds, rx, energies).variance_bound
    assert s2 == pytest.approx(dense_crlb(fim_position_s2(leds, rx, energies), 3).variance_bound, rel=1e-10)
    assert s3 == pytest.approx(dense_crlb(fim_position_s3(leds, rx, energies), 3).variance_bound, rel=1e-10)
    assert fim_position_s3(leds, rx, energies).matrix.shape == (39, 39)


def test_single_color_reduction():
    rx = VlcReceiver([4, 4, 1], [0, 0, 1], [1e-4], [[0.4]], [1.336e-22])
    leds = [
        LedTransmitter(loc, orientation_from_angles(150, phi), 1.0, (RaisedCosineWaveform(0.1, 1e-6, k * 1e7),))
        for k, (loc, phi) in enumerate(zip([(2, 2, 5), (6, 2, 5), (2, 6, 5), (6, 6, 5)], [45, 135, -45, -135]), 1)
    ]
    energies = [closed_form_cross_energies(l.waveforms) for l in leds]
    full = crlb_position_s3(leds, rx, energies).variance_bound
    assert crlb_position_s3_single_color(leds, rx, energies).variance_bound == pytest.approx(full, rel=1e-12)


def test_s2_skips_led_without_timing_information(leds, rx, energies):
    # receiver tilted away from LED 1 only: its link carries no information
    blocked = dataclasses.replace(leds[0], location=np.array([4.0, 4.0, 0.5]), orientation=np.array([0.0, 0.0, -1.0]))
    res = crlb_position_s2([blocked, *leds[1:]], rx, energies)
    ref = crlb_position_s2(leds[1:], rx, energies[1:])
    assert res.variance_bound == pytest.approx(ref.variance_bound, rel=1e-12)


def test_single_led_position_is_singular(leds, rx, energies):
    res = crlb_position_s3(leds[:1], rx, energies[:1])
    assert res.singular_flag and res.variance_bound == np.inf


def test_s3_singular_gain_block_names_led(leds, rx):
    ce = closed_form_cross_energies([RaisedCosineWaveform(0.1, 1e-6, 1e7)] * 3)
    with pytest.raises(SingularBlockError, match="LED 1"):
        equivalent_fim_position_s3(leds, rx, [ce] * 4)


# ------------------------------------------------------------ inversion helpers


def test_trace_inverse_flags_singular():
    res = trace_inverse(np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert res.singular_flag and res.variance_bound == np.inf
    assert scaled_condition(np.diag([1.0, 0.0])) == np.inf


def test_trace_inverse_ignores_units():
    J = np.array([[4e20, 3e10], [3e10, 9.0]])
    assert trace_inverse(J).variance_bound == pytest.approx(np.trace(np.linalg.inv(J)), rel=1e-12)
    assert trace_inverse(J).condition_number < SINGULAR_CONDITION


def test_trace_inverse_rejects_asymmetric():
    with pytest.raises(ValueError):
        trace_inverse(np.array([[1.0, 0.5], [0.0, 1.0]]))


# ------------------------------------------------------------ properties

room = st.tuples(st.floats(0.5, 7.5), st.floats(0.5, 7.5), st.floats(0.2, 3.0))


@st.composite
def scenes(draw):
    power = draw(st.floats(0.01, 2.0))
    T = draw(st.sampled_from([1e-6, 1e-5, 1e-4, 1e-3, 1e-2]))
    fc = draw(st.floats(1e5, 1e9))
    cfg = config_from_dict(
        {
            "waveform": {"power": power, "duration": T, "center_frequency": fc},
            "scene": {"lambertian_order": draw(st.sampled_from([1.0, 2.0, 3.0]))},
        }
    )
    leds = build_leds(cfg)
    rx = build_receiver(cfg).moved_to(draw(room))
    return cfg, leds, rx, tuple(build_energies(l.waveforms) for l in leds)


@given(scenes(), st.floats(2.6, 10.0))
def test_information_ordering(scene, x):
    cfg, leds, rx, energies = scene
    m = cfg.scene.lambertian_order
    g = gamma_matrix(rx, m, 2.5)
    d = {s: crlb_distance(s, x, m, g, rx.noise_psd, energies[0]).variance_bound for s in ("s1", "s2", "s3")}
    assert d["s1"] <= d["s2"] * (1 + 1e-9)
    assert d["s1"] <= d["s3"] * (1 + 1e-9)
    p = {s: crlb_position(s, leds, rx, energies) for s in ("s1", "s2", "s3")}
    assume(not any(r.singular_flag for r in p.values()))
    assert p["s1"].variance_bound <= p["s2"].variance_bound * (1 + 1e-9)
    assert p["s1"].variance_bound <= p["s3"].variance_bound * (1 + 1e-9)


@given(scenes())
def test_fims_symmetric_psd(scene):
    _, leds, rx, energies = scene
    for J in (fim_position_s1(leds, rx, energies).matrix, fim_position_s2(leds, rx, energies).matrix):
        assert np.abs(J - J.T).max() <= 1e-12 * np.abs(J).max()
        s = 1 / np.sqrt(np.where(np.diag(J) > 0, np.diag(J), 1.0))
        assert np.linalg.eigvalsh(J * np.outer(s, s)).min() > -1e-8


@given(st.floats(0.1, 100.0))
def test_bounds_scale_with_noise(c):
    cfg = config_from_dict({})
    leds, rx = build_leds(cfg), build_receiver(cfg)
    energies = tuple(build_energies(l.waveforms) for l in leds)
    noisy = dataclasses.replace(rx, noise_psd=rx.noise_psd * c)
    for s in ("s1", "s2", "s3"):
        a = crlb_position(s, leds, rx, energies).variance_bound
        assert crlb_position(s, leds, noisy, energies).variance_bound == pytest.approx(c * a, rel=1e-9)


@pytest.mark.parametrize("scenario", ["s1", "s2", "s3"])
def test_bounds_scale_inverse_square_power(scenario):
    def bound(power):
        _, leds, rx, energies = short_scene(power=power)
        return crlb_position(scenario, leds, rx, energies).variance_bound

    assert bound(1.0) == pytest.approx(bound(0.1) / 100, rel=1e-9)
