"""Measurements taken from step-experiment traces.

All detectors work on the measured output only; nothing here looks at a
plant model.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import ndimage, signal

from .errors import OutOfRange, TooShort
from .simulation import Trace

MEDIAN_WINDOW = 11
SETTLING_BAND = 0.02
MIN_WINDOW_SAMPLES = 64


@dataclass(frozen=True)
class StepMetrics:
    overshoot_M: float
    peak_time: float
    settling_time_2pct: Optional[float]
    steady_state_error: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class OscillationVerdict:
    sustained: bool
    period: Optional[float]
    omega: Optional[float]
    amplitude_ratio: float
    n_peaks: int
    diverging: bool = False

    @property
    def oscillatory(self) -> bool:
        return self.period is not None

    def to_dict(self) -> dict:
        return asdict(self)


def median_smooth(x: np.ndarray, window: int = MEDIAN_WINDOW) -> np.ndarray:
    return ndimage.median_filter(np.asarray(x, float), size=window, mode="nearest")


def _onset(trace: Trace) -> int:
    nz = np.flatnonzero(trace.u != 0)
    return int(nz[0]) if nz.size else 0


def overshoot(trace: Trace, x_ref: Optional[float] = None) -> StepMetrics:
    """Overshoot, peak time, 2 % settling time and steady-state error.

    Times are measured from the first sample with a nonzero control input,
    on a median-filtered copy of the output.
    """
    if x_ref is None:
        x_ref = trace.x_ref
    if x_ref == 0:
        raise ValueError("x_ref must be nonzero")
    xf = median_smooth(trace.x)
    i0 = _onset(trace)
    sgn = 1.0 if x_ref > 0 else -1.0
    seg = sgn * xf[i0:]
    ipk = int(np.argmax(seg))
    M = max(0.0, (seg[ipk] - abs(x_ref)) / abs(x_ref))
    t = trace.t
    peak_time = float(t[i0 + ipk] - t[i0])

    outside = np.flatnonzero(np.abs(xf[i0:] - x_ref) > SETTLING_BAND * abs(x_ref))
    if outside.size == 0:
        settling = 0.0
    elif outside[-1] == len(seg) - 1:
        settling = None
    else:
        settling = float(t[i0 + outside[-1] + 1] - t[i0])
    tail = xf[-max(MEDIAN_WINDOW, len(xf) // 50):]
    return StepMetrics(float(M), peak_time, settling, float(x_ref - np.median(tail)))


def recovery_time(trace: Trace, t_release: float, band: float = 0.05,
                  x_ref: Optional[float] = None) -> Optional[float]:
    """Time after ``t_release`` until the output stays within ``band*|x_ref|``.

    Returns ``None`` if the output is still outside the band at the end.
    """
    if x_ref is None:
        x_ref = trace.x_ref
    xf = median_smooth(trace.x)
    t = trace.t
    i_rel = int(np.searchsorted(t, t_release - 0.5 * trace.dt))
    outside = np.flatnonzero(np.abs(xf[i_rel:] - x_ref) > band * abs(x_ref))
    if outside.size == 0:
        return 0.0
    if outside[-1] == len(xf) - i_rel - 1:
        return None
    return float(t[i_rel + outside[-1] + 1] - t[i_rel])


def _refine_peak(y: np.ndarray, i: int) -> float:
    # vertex of the parabola through three samples, as a fractional index
    if i <= 0 or i >= len(y) - 1:
        return float(i)
    a, b, c = y[i - 1], y[i], y[i + 1]
    den = a - 2 * b + c
    if den == 0:
        return float(i)
    return i + 0.5 * (a - c) / den


def _alternating(maxima: np.ndarray, minima: np.ndarray,
                 y: np.ndarray) -> list[tuple[int, int]]:
    ev = sorted([(int(i), 1) for i in maxima] + [(int(i), -1) for i in minima])
    out: list[tuple[int, int]] = []
    for i, s in ev:
        if out and out[-1][1] == s:
            j = out[-1][0]
            if s * y[i] > s * y[j]:
                out[-1] = (i, s)
        else:
            out.append((i, s))
    return out


def detect_sustained(trace: Trace, transient_skip: float = 0.3,
                     low: float = 0.8, high: float = 1.25) -> OscillationVerdict:
    """Decide whether the output carries a non-decaying oscillation.

    The first ``transient_skip`` fraction of the trace is ignored. The rest is
    detrended with a moving mean (a quarter of the window wide) and scanned for
    alternating extrema whose prominence beats three times the noise level,
    estimated from the median absolute deviation of the first difference.
    With at least four extrema, the peak-to-peak amplitude of the last pair
    over the first pair decides: inside ``[low, high]`` is sustained, above
    ``high`` is diverging.
    """
    return detect_sustained_signal(trace.x, trace.dt, transient_skip, low, high)


def detect_sustained_signal(x: np.ndarray, dt: float, transient_skip: float = 0.3,
                            low: float = 0.8, high: float = 1.25) -> OscillationVerdict:
    x = np.asarray(x, float)
    start = int(transient_skip * len(x))
    w = x[start:]
    if len(w) < MIN_WINDOW_SAMPLES:
        raise TooShort(f"analysis window has {len(w)} samples, need {MIN_WINDOW_SAMPLES}")
    dw = np.diff(w)
    sigma = 1.4826 * np.median(np.abs(dw - np.median(dw))) / math.sqrt(2.0)
    floor = 1e-6 * float(np.ptp(x))
    prominence = max(3.0 * sigma, floor)

    wf = median_smooth(w)
    trend = ndimage.uniform_filter1d(wf, size=max(3, len(wf) // 4), mode="reflect")
    y = wf - trend
    if prominence <= 0:
        return OscillationVerdict(False, None, None, math.nan, 0)
    maxima, _ = signal.find_peaks(y, prominence=prominence)
    minima, _ = signal.find_peaks(-y, prominence=prominence)
    ext = _alternating(maxima, minima, y)
    n = len(ext)
    if n < 3:
        return OscillationVerdict(False, None, None, math.nan, n)

    tpk = np.array([_refine_peak(s * y, i) for i, s in ext]) * dt
    spacing = np.concatenate([np.diff(tpk[0::2]), np.diff(tpk[1::2])])
    period = float(np.mean(spacing))
    amps = np.abs(np.diff(y[[i for i, _ in ext]]))
    ratio = float(amps[-1] / amps[0])
    sustained = n >= 4 and low <= ratio <= high
    diverging = n >= 4 and ratio > high
    return OscillationVerdict(sustained, period, 2 * math.pi / period, ratio, n, diverging)


def overshoot_from_zeta(zeta: float) -> float:
    if not 0 <= zeta < 1:
        raise OutOfRange("zeta must lie in [0, 1)")
    return math.exp(-math.pi * zeta / math.sqrt(1 - zeta * zeta))


def zeta_from_overshoot(M: float) -> float:
    """Damping ratio of the second-order pole pair with step overshoot ``M``."""
    if not 0 < M < 1:
        raise OutOfRange(f"overshoot must lie in (0, 1), got {M}")
    lm = math.log(M)
    return -lm / math.sqrt(math.pi**2 + lm * lm)


def phase_margin_from_zeta(zeta: float) -> float:
    """Phase margin in degrees of the loop ``wn^2 / (s (s + 2 zeta wn))``."""
    if not 0 < zeta < 1:
        raise OutOfRange(f"zeta must lie in (0, 1), got {zeta}")
    z2 = zeta * zeta
    return math.degrees(math.atan(2 * zeta / math.sqrt(math.sqrt(1 + 4 * z2 * z2) - 2 * z2)))


def phase_margin_from_overshoot(M: float) -> float:
    return phase_margin_from_zeta(zeta_from_overshoot(M))


def analyze_trace(trace: Trace, transient_skip: float = 0.3, low: float = 0.8,
                  high: float = 1.25, t_release: Optional[float] = None,
                  band: float = 0.05) -> dict:
    """Step metrics, oscillation verdict and (optionally) recovery time as a dict."""
    out = {"samples": len(trace), "step": overshoot(trace).to_dict()}
    try:
        out["verdict"] = detect_sustained(trace, transient_skip, low, high).to_dict()
    except TooShort:
        out["verdict"] = None
    if t_release is not None:
        out["recovery_time"] = recovery_time(trace, t_release, band)
    return out
