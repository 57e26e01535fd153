"""Rational transfer functions with optional dead time.

Polynomials are dense coefficient sequences in descending powers of ``s``.
Nothing here cancels common factors: a pole-zero pair that cancels algebraically
stays in the model, so an unstable cancellation cannot hide.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import optimize, signal

from .errors import DegreeZero, DelayNotClosable, IllConditioned, PoleOnAxis

MAX_ROOT_DEGREE = 10
GRID_POINTS = 512


def _trim(coeffs: Sequence[float]) -> tuple[float, ...]:
    arr = np.atleast_1d(np.asarray(coeffs, dtype=float))
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("coefficients must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(arr)):
        raise ValueError("coefficients must be finite")
    nz = np.flatnonzero(arr)
    if nz.size == 0:
        return (0.0,)
    return tuple(float(c) for c in arr[nz[0]:])


@dataclass(frozen=True)
class TransferFunction:
    """``num(s)/den(s) * exp(-s*dead_time)``.

    Leading zeros are stripped from both polynomials; coefficients are not
    rescaled.
    """

    num: tuple[float, ...]
    den: tuple[float, ...]
    dead_time: float = 0.0

    def __post_init__(self):
        num = _trim(self.num)
        den = _trim(self.den)
        if den == (0.0,):
            raise ValueError("denominator must have a nonzero coefficient")
        dead_time = float(self.dead_time)
        if not dead_time >= 0.0:
            raise ValueError(f"dead_time must be >= 0, got {self.dead_time!r}")
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)
        object.__setattr__(self, "dead_time", dead_time)

    @classmethod
    def gain(cls, k: float) -> "TransferFunction":
        return cls((k,), (1.0,))

    @property
    def num_degree(self) -> int:
        return len(self.num) - 1

    @property
    def den_degree(self) -> int:
        return len(self.den) - 1

    @property
    def is_proper(self) -> bool:
        return self.num_degree <= self.den_degree

    @property
    def n_integrators(self) -> int:
        """Number of denominator roots at the origin (trailing zeros)."""
        n = 0
        for c in reversed(self.den):
            if c != 0.0:
                break
            n += 1
        return n

    def __call__(self, s: complex) -> complex:
        return complex(np.polyval(self.num, s) / np.polyval(self.den, s)
                       * np.exp(-s * self.dead_time))

    def __mul__(self, other: "TransferFunction") -> "TransferFunction":
        if not isinstance(other, TransferFunction):
            return NotImplemented
        return series(self, other)

    def to_dict(self) -> dict:
        return {"num": list(self.num), "den": list(self.den),
                "dead_time": self.dead_time}

    @classmethod
    def from_dict(cls, d: dict) -> "TransferFunction":
        return cls(tuple(d["num"]), tuple(d["den"]), float(d.get("dead_time", 0.0)))


class FrequencyPoint(NamedTuple):
    omega: float
    magnitude_db: float
    phase_deg: float


@dataclass(frozen=True)
class MarginReport:
    omega_gc: float
    phase_margin_deg: float
    crossover_found: bool
    n_crossovers: int = 0


def series(a: TransferFunction, b: TransferFunction) -> TransferFunction:
    return TransferFunction(tuple(np.convolve(a.num, b.num)),
                            tuple(np.convolve(a.den, b.den)),
                            a.dead_time + b.dead_time)


def unity_feedback(loop: TransferFunction) -> TransferFunction:
    """Close ``loop`` with negative unity feedback: ``L / (1 + L)``."""
    if loop.dead_time > 0.0:
        raise DelayNotClosable(
            "a loop with dead time has no rational closure; simulate it instead")
    return TransferFunction(loop.num, tuple(np.polyadd(loop.den, loop.num)))


def freq_response(tf: TransferFunction, omega: float | np.ndarray):
    """Evaluate ``tf(j*omega)``. Scalars in, complex out; arrays broadcast."""
    w = np.asarray(omega, dtype=float)
    if np.any(w <= 0):
        raise ValueError("omega must be > 0")
    s = 1j * w
    den = np.polyval(tf.den, s)
    if np.any(np.abs(den) < 1e-300):
        raise PoleOnAxis(f"denominator vanishes on the imaginary axis near omega={omega}")
    h = np.polyval(tf.num, s) / den * np.exp(-s * tf.dead_time)
    return complex(h) if h.ndim == 0 else h


def poles(tf: TransferFunction) -> np.ndarray:
    return _roots(tf.den, "denominator")


def zeros(tf: TransferFunction) -> np.ndarray:
    if tf.num_degree == 0:
        return np.empty(0, dtype=complex)
    return _roots(tf.num, "numerator")


def _roots(coeffs: tuple[float, ...], what: str) -> np.ndarray:
    degree = len(coeffs) - 1
    if degree < 1:
        raise DegreeZero(f"{what} is constant and has no roots")
    if degree > MAX_ROOT_DEGREE:
        raise IllConditioned(
            f"{what} degree {degree} exceeds the supported {MAX_ROOT_DEGREE}")
    # np.roots solves the companion-matrix eigenproblem
    return np.roots(coeffs).astype(complex)


def _factor_phase_deg(tf: TransferFunction, w: float) -> float:
    """Phase at one frequency as a sum of per-root angles.

    Each factor is continuous in w, so the sum is the natural unwrapped branch
    and anchors the grid unwrapping in :func:`bode`.
    """
    s = 1j * w
    lead = tf.num[0] / tf.den[0]
    phase = 0.0 if lead > 0 else 180.0
    if tf.num_degree:
        phase += np.degrees(np.angle(s - zeros(tf))).sum()
    if tf.den_degree:
        phase -= np.degrees(np.angle(s - poles(tf))).sum()
    return float(phase - np.degrees(w * tf.dead_time))


def _unwrapped_phase(tf: TransferFunction, omega: np.ndarray) -> np.ndarray:
    h = freq_response(tf, omega)
    ph = np.unwrap(np.angle(h))
    anchor = math.radians(_factor_phase_deg(tf, float(omega[0])))
    ph += 2 * np.pi * np.round((anchor - ph[0]) / (2 * np.pi))
    return np.degrees(ph)


def bode(tf: TransferFunction, omega_lo: float, omega_hi: float,
         n: int = GRID_POINTS, max_refine: int = 4):
    """Magnitude (dB) and unwrapped phase (deg) on a log grid.

    The grid is densified four-fold while any adjacent phase step exceeds
    90 degrees. Returns ``(omega, mag_db, phase_deg)``.
    """
    if not 0 < omega_lo < omega_hi:
        raise ValueError("need 0 < omega_lo < omega_hi")
    n = max(int(n), 2)
    for _ in range(max_refine + 1):
        omega = np.geomspace(omega_lo, omega_hi, n)
        phase = _unwrapped_phase(tf, omega)
        if np.all(np.abs(np.diff(phase)) < 90.0):
            break
        n *= 4
    mag_db = 20 * np.log10(np.abs(freq_response(tf, omega)))
    return omega, mag_db, phase


def frequency_point(tf: TransferFunction, omega: float) -> FrequencyPoint:
    h = freq_response(tf, omega)
    return FrequencyPoint(float(omega), 20 * math.log10(abs(h)),
                          _factor_phase_deg(tf, float(omega)))


def _phase_at(tf: TransferFunction, omega_lo: float, omega: float) -> float:
    if omega <= omega_lo:
        return _factor_phase_deg(tf, omega)
    return float(bode(tf, omega_lo, omega)[2][-1])


def margins(loop: TransferFunction, omega_lo: float = 1e-2,
            omega_hi: float = 1e4) -> MarginReport:
    """Gain crossover and phase margin of an open loop.

    The lowest-frequency crossover of ``|L| = 1`` on the search interval is
    reported; ``n_crossovers`` counts all of them.
    """
    if not 0 < omega_lo < omega_hi:
        raise ValueError("need 0 < omega_lo < omega_hi")
    grid = np.geomspace(omega_lo, omega_hi, GRID_POINTS)
    logmag = np.log(np.abs(freq_response(loop, grid)))
    sign = np.sign(logmag)
    idx = np.flatnonzero(sign[:-1] * sign[1:] <= 0)
    # a grid point exactly on 0 dB shows up in two consecutive intervals
    idx = [i for i in idx if not (sign[i] == 0 and i > 0 and (i - 1) in idx)]
    if not idx:
        return MarginReport(math.nan, math.nan, False, 0)

    def f(logw):
        return math.log(abs(freq_response(loop, math.exp(logw))))

    i = idx[0]
    if logmag[i] == 0.0:
        w_gc = float(grid[i])
    else:
        w_gc = math.exp(optimize.brentq(f, math.log(grid[i]), math.log(grid[i + 1]),
                                        xtol=1e-12, rtol=1e-12))
    pm = 180.0 + _phase_at(loop, omega_lo, w_gc)
    return MarginReport(w_gc, pm, True, len(idx))


def phase_crossover(loop: TransferFunction, omega_lo: float = 1e-2,
                    omega_hi: float = 1e4):
    """First frequency where the unwrapped phase reaches -180 deg.

    Returns ``(omega_pc, gain_margin)`` with the gain margin as a plain ratio,
    or ``(nan, inf)`` when the phase never gets there.
    """
    omega, _, phase = bode(loop, omega_lo, omega_hi)
    d = phase + 180.0
    idx = np.flatnonzero((d[:-1] > 0) & (d[1:] <= 0))
    if idx.size == 0:
        return math.nan, math.inf
    i = int(idx[0])
    base = phase[i] - _factor_phase_deg(loop, float(omega[i]))

    def g(logw):
        return _factor_phase_deg(loop, math.exp(logw)) + base + 180.0

    w = math.exp(optimize.brentq(g, math.log(omega[i]), math.log(omega[i + 1]),
                                 xtol=1e-12, rtol=1e-12))
    return w, 1.0 / abs(freq_response(loop, w))


def make_pi(Kp: float, Ti: float) -> TransferFunction:
    """PI controller ``Kp (Ti s + 1) / (Ti s)``."""
    if Kp <= 0 or Ti <= 0:
        raise ValueError("Kp and Ti must be positive")
    return TransferFunction((Kp * Ti, Kp), (Ti, 0.0))


def make_lead(alpha: float, tau: float, K_L: float = 1.0) -> TransferFunction:
    """Lead compensator ``K_L (tau s + 1) / (alpha tau s + 1)``."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if tau <= 0 or K_L <= 0:
        raise ValueError("tau and K_L must be positive")
    return TransferFunction((K_L * tau, K_L), (alpha * tau, 1.0))


def lead_peak_frequency(alpha: float, tau: float) -> float:
    return 1.0 / (math.sqrt(alpha) * tau)


def lead_peak_phase_deg(alpha: float) -> float:
    return math.degrees(math.asin((1 - alpha) / (1 + alpha)))


def make_pid(Kp: float, Ti: float, Td: float) -> TransferFunction:
    """Ideal PID ``Kp (1 + 1/(Ti s) + Td s)``; improper on its own."""
    return TransferFunction((Kp * Ti * Td, Kp * Ti, Kp), (Ti, 0.0))


def butterworth_lowpass(order: int, omega_c: float) -> TransferFunction:
    b, a = signal.butter(order, omega_c, btype="low", analog=True)
    return TransferFunction(tuple(b), tuple(a))


def zn_pid_parameters(Ku: float, Tu: float) -> tuple[float, float, float]:
    """Classic ultimate-sensitivity PID rules: ``(Kp, Ti, Td)``."""
    if Ku <= 0 or Tu <= 0:
        raise ValueError("Ku and Tu must be positive")
    return 0.6 * Ku, 0.5 * Tu, 0.125 * Tu


def make_zn_pid(Ku: float, Tu: float, f_c: float = 1000.0,
                order: int = 2) -> TransferFunction:
    """Ziegler-Nichols PID in series with a Butterworth low-pass at ``f_c`` Hz."""
    Kp, Ti, Td = zn_pid_parameters(Ku, Tu)
    if order < 1:
        raise ValueError("filter order must be >= 1 to make the PID proper")
    return series(make_pid(Kp, Ti, Td), butterworth_lowpass(order, 2 * math.pi * f_c))


def format_tf(tf: TransferFunction, var: str = "s") -> str:
    """Render as ``(139.5 s + 450) / (0.31 s)``."""
    return f"({_format_poly(tf.num, var)}) / ({_format_poly(tf.den, var)})"


def _format_poly(coeffs: tuple[float, ...], var: str) -> str:
    deg = len(coeffs) - 1
    terms = []
    for i, c in enumerate(coeffs):
        p = deg - i
        if c == 0.0 and deg > 0:
            continue
        mag = f"{abs(c):.6g}"
        if p == 0:
            body = mag
        else:
            pw = var if p == 1 else f"{var}^{p}"
            body = pw if mag == "1" else f"{mag} {pw}"
        if not terms:
            terms.append(body if c >= 0 else f"-{body}")
        else:
            terms.append(f"{'+' if c >= 0 else '-'} {body}")
    return " ".join(terms) if terms else "0"
