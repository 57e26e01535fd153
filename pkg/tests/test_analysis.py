import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from pilead import analysis, lti
from pilead.errors import OutOfRange, TooShort
from pilead.simulation import Trace

DT = 1e-3


def make_trace(x, dt=DT, x_ref=1.0, onset=0):
    n = len(x)
    r = np.full(n, x_ref)
    u = np.ones(n)
    u[:onset] = 0.0
    return Trace(dt=dt, t0=0.0, r=r, u=u, x=np.asarray(x, float), d=np.zeros(n))


def second_order_step(zeta, wn, t):
    wd = wn * math.sqrt(1 - zeta**2)
    phi = math.acos(zeta)
    return 1 - np.exp(-zeta * wn * t) / math.sqrt(1 - zeta**2) * np.sin(wd * t + phi)


# ------------------------------------------------------------------ overshoot

def test_first_order_has_no_overshoot():
    t = np.arange(0, 10, DT)
    m = analysis.overshoot(make_trace(1 - np.exp(-t)), 1.0)
    assert m.overshoot_M == 0.0
    assert m.settling_time_2pct == pytest.approx(-math.log(0.02), abs=2 * DT)
    assert abs(m.steady_state_error) < 1e-4


def test_second_order_overshoot_oracle():
    t = np.arange(0, 10, DT)
    m = analysis.overshoot(make_trace(second_order_step(0.3579, 10.0, t)), 1.0)
    assert m.overshoot_M == pytest.approx(0.30, abs=2e-4)
    assert m.peak_time == pytest.approx(math.pi / (10 * math.sqrt(1 - 0.3579**2)), abs=6 * DT)


def test_overshoot_invariant_to_onset_shift():
    t = np.arange(0, 6, DT)
    y = second_order_step(0.4, 8.0, t)
    a = analysis.overshoot(make_trace(y))
    shift = 700
    b = analysis.overshoot(make_trace(np.concatenate([np.zeros(shift), y]), onset=shift))
    assert b.overshoot_M == pytest.approx(a.overshoot_M, abs=1e-12)
    assert b.peak_time == pytest.approx(a.peak_time, abs=1e-9)
    assert b.settling_time_2pct == pytest.approx(a.settling_time_2pct, abs=1e-9)


def test_unsettled_and_negative_reference():
    t = np.arange(0, 3, DT)
    m = analysis.overshoot(make_trace(1 + 0.5 * np.sin(5 * t)), 1.0)
    assert m.settling_time_2pct is None
    y = -second_order_step(0.3579, 10.0, t)
    m = analysis.overshoot(make_trace(y, x_ref=-1.0), -1.0)
    assert m.overshoot_M == pytest.approx(0.30, abs=2e-4)


def test_recovery_time():
    t = np.arange(0, 4, DT)
    x = np.ones_like(t)
    after = t >= 1.0
    x[after] = 1 + 0.5 * np.exp(-(t[after] - 1.0) / 0.2)
    tr = make_trace(x)
    oracle = 0.2 * math.log(0.5 / 0.05)
    assert analysis.recovery_time(tr, 1.0, band=0.05) == pytest.approx(oracle, abs=3 * DT)
    assert analysis.recovery_time(make_trace(np.ones_like(t)), 1.0) == 0.0
    assert analysis.recovery_time(make_trace(1 + 0.2 * np.sin(5 * t)), 1.0) is None


# ------------------------------------------------------------------ detector

def test_pure_tone_is_sustained():
    t = np.arange(0, 10, DT)
    v = analysis.detect_sustained(make_trace(np.sin(10 * t) + 3.0))
    assert v.sustained and not v.diverging
    assert v.period == pytest.approx(2 * math.pi / 10, rel=2e-3)
    assert v.omega * v.period == pytest.approx(2 * math.pi, rel=1e-15)
    assert v.n_peaks >= 4


def test_decaying_tone_is_not_sustained():
    t = np.arange(0, 10, DT)
    v = analysis.detect_sustained(make_trace(np.exp(-t) * np.sin(10 * t)))
    assert not v.sustained
    assert v.amplitude_ratio < 0.8 or v.n_peaks < 4


def test_growing_tone_is_diverging():
    t = np.arange(0, 10, DT)
    v = analysis.detect_sustained(make_trace(np.exp(0.3 * t) * np.sin(10 * t)))
    assert v.diverging and not v.sustained and v.amplitude_ratio > 1.25


def test_noise_and_ramps_are_not_oscillations():
    rng = np.random.default_rng(1)
    t = np.arange(0, 10, DT)
    assert not analysis.detect_sustained(make_trace(1e-3 * rng.standard_normal(len(t)))).sustained
    assert not analysis.detect_sustained(make_trace(1 - np.exp(-t))).sustained
    assert analysis.detect_sustained(make_trace(np.ones_like(t))).n_peaks == 0


def test_noisy_tone_still_sustained():
    rng = np.random.default_rng(2)
    t = np.arange(0, 10, DT)
    x = 1 + 0.05 * np.sin(20 * t) + 1e-3 * rng.standard_normal(len(t))
    v = analysis.detect_sustained(make_trace(x))
    assert v.sustained and v.period == pytest.approx(2 * math.pi / 20, rel=5e-3)


@settings(max_examples=25, deadline=None)
@given(st.floats(-100, 100), st.floats(0.01, 100), st.floats(3.0, 40.0), st.floats(-1.0, 0.4))
def test_detector_offset_and_scale_invariance(offset, scale, w, growth):
    t = np.arange(0, 10, DT)
    base = np.exp(growth * t) * np.sin(w * t)
    a = analysis.detect_sustained(make_trace(base))
    b = analysis.detect_sustained(make_trace(scale * base + offset))
    assert (a.sustained, a.diverging, a.n_peaks) == (b.sustained, b.diverging, b.n_peaks)
    if a.period is not None:
        assert b.period == pytest.approx(a.period, rel=1e-9)


def test_detector_too_short():
    with pytest.raises(TooShort):
        analysis.detect_sustained(make_trace(np.zeros(80)))


def test_analyze_trace_on_sine():
    t = np.arange(0, 5, DT)
    out = analysis.analyze_trace(make_trace(1 + np.sin(30 * t)))
    assert out["verdict"]["sustained"] is True
    assert set(out["step"]) == {"overshoot_M", "peak_time", "settling_time_2pct",
                                "steady_state_error"}


# --------------------------------------------------------------- conversions

def _zeta_by_bisection(M):
    return optimize.brentq(lambda z: analysis.overshoot_from_zeta(z) - M, 1e-12, 1 - 1e-12,
                           xtol=1e-15)


def test_zeta_examples():
    assert analysis.zeta_from_overshoot(0.30) == pytest.approx(0.3579, abs=5e-5)
    assert analysis.zeta_from_overshoot(0.40) == pytest.approx(0.2800, abs=5e-5)
    assert analysis.zeta_from_overshoot(0.35) == pytest.approx(0.3169, abs=5e-5)
    for M in (0.3, 0.35, 0.4):
        assert analysis.zeta_from_overshoot(M) == pytest.approx(_zeta_by_bisection(M), abs=1e-12)
    assert analysis.zeta_from_overshoot(1 - 1e-12) < 1e-6


def test_phase_margin_examples():
    for M, pm in ((0.30, 39.1), (0.35, 35.0), (0.40, 31.2)):
        assert analysis.phase_margin_from_overshoot(M) == pytest.approx(pm, abs=0.05)
    assert analysis.phase_margin_from_zeta(1e-9) < 1e-6


def test_conversion_domains():
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(OutOfRange):
            analysis.zeta_from_overshoot(bad)
    for bad in (0.0, 1.0):
        with pytest.raises(OutOfRange):
            analysis.phase_margin_from_zeta(bad)
    with pytest.raises(OutOfRange):
        analysis.overshoot_from_zeta(1.0)


def test_round_trip_and_monotonicity():
    zetas = np.round(np.arange(0.05, 0.951, 0.01), 10)
    Ms = np.array([analysis.overshoot_from_zeta(z) for z in zetas])
    back = np.array([analysis.zeta_from_overshoot(M) for M in Ms])
    assert np.max(np.abs(back - zetas)) < 1e-9
    assert np.all(np.diff(Ms) < 0)
    pms = np.array([analysis.phase_margin_from_zeta(z) for z in zetas])
    assert np.all(np.diff(pms) > 0)


@pytest.mark.parametrize("zeta", [0.2, 0.3579, 0.5, 0.7])
@pytest.mark.parametrize("wn", [0.5, 10.0, 300.0])
def test_phase_margin_matches_prototype_loop(zeta, wn):
    loop = lti.TransferFunction((wn**2,), (1.0, 2 * zeta * wn, 0.0))
    m = lti.margins(loop, wn / 100, wn * 100)
    assert m.crossover_found
    assert m.phase_margin_deg == pytest.approx(analysis.phase_margin_from_zeta(zeta), abs=0.1)
