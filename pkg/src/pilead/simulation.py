"""Fixed-step closed-loop simulation of type-one plants.

Linear plants run as exact zero-order-hold difference equations; the
VCM-like plant is integrated with RK4. Controllers are realized with the
bilinear (Tustin) map. Everything is deterministic given the plant seed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Protocol, Union

import numpy as np
from scipy import signal

from . import _kernels
from .errors import ImproperTf, InvalidPlant, UnknownPlant
from .lti import TransferFunction

DEFAULT_DT = 1e-4
DIVERGENCE_FACTOR = 1e6
NOISE_CLAMP = 4.0


# ---------------------------------------------------------------- data types

@dataclass(frozen=True)
class LinearTf:
    tf: TransferFunction


@dataclass(frozen=True)
class Resonance:
    stiffness: float
    damping: float
    appendage_mass: float


@dataclass(frozen=True)
class VcmLike:
    """Moving mass driven through a nonlinear voltage-to-force map.

    ``input_gain`` is a table of ``(u, force)`` breakpoints, extrapolated
    linearly outside its range.
    """

    mass: float = 1.0
    viscous: float = 10.0
    coulomb: float = 0.5
    input_gain: tuple[tuple[float, float], ...] = ((-1.0, -5.0), (1.0, 5.0))
    resonance: Optional[Resonance] = None
    delay: float = 0.0
    gravity: float = 0.0
    stiction_eps: float = 1e-5


@dataclass(frozen=True)
class PlantSpec:
    variant: Union[LinearTf, VcmLike]
    noise_sigma: float = 0.0
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if not self.noise_sigma >= 0:
            raise InvalidPlant("noise_sigma must be >= 0")
        v = self.variant
        if isinstance(v, LinearTf):
            tf = v.tf
            if tf.n_integrators != 1:
                raise InvalidPlant(
                    f"linear plant must have exactly one pole at the origin, "
                    f"found {tf.n_integrators}")
            if tf.num_degree >= tf.den_degree:
                raise InvalidPlant("linear plant must be strictly proper")
        elif isinstance(v, VcmLike):
            if not v.mass > 0:
                raise InvalidPlant("mass must be > 0")
            if v.coulomb < 0 or v.viscous < 0 or v.delay < 0:
                raise InvalidPlant("coulomb, viscous and delay must be >= 0")
            if v.stiction_eps <= 0:
                raise InvalidPlant("stiction_eps must be > 0")
            us = [p[0] for p in v.input_gain]
            fs = [p[1] for p in v.input_gain]
            if len(us) < 2 or np.any(np.diff(us) <= 0) or np.any(np.diff(fs) < 0):
                raise InvalidPlant("input_gain table must have >= 2 points, "
                                   "increasing u and non-decreasing force")
            if v.resonance is not None and v.resonance.appendage_mass <= 0:
                raise InvalidPlant("appendage_mass must be > 0")
        else:
            raise InvalidPlant(f"unknown plant variant {type(v).__name__}")

    def to_dict(self) -> dict:
        v = self.variant
        if isinstance(v, LinearTf):
            body = {"kind": "linear_tf", "tf": v.tf.to_dict()}
        else:
            body = {"kind": "vcm_like", **asdict(v)}
            body["input_gain"] = [list(p) for p in v.input_gain]
        return {"variant": body, "noise_sigma": self.noise_sigma,
                "seed": self.seed, "name": self.name}

    @classmethod
    def from_dict(cls, d: dict) -> "PlantSpec":
        body = dict(d["variant"])
        kind = body.pop("kind")
        if kind == "linear_tf":
            variant = LinearTf(TransferFunction.from_dict(body["tf"]))
        elif kind == "vcm_like":
            res = body.pop("resonance", None)
            body["input_gain"] = tuple(tuple(map(float, p)) for p in body["input_gain"])
            variant = VcmLike(resonance=Resonance(**res) if res else None, **body)
        else:
            raise InvalidPlant(f"unknown plant kind {kind!r}")
        return cls(variant, float(d.get("noise_sigma", 0.0)), int(d.get("seed", 0)),
                   str(d.get("name", "")))


@dataclass(frozen=True)
class Disturbance:
    t_on: float
    t_off: float
    magnitude: float


@dataclass(frozen=True)
class ScenarioSpec:
    """One step experiment.

    ``abort_amplitude`` (a multiple of ``|x_ref|``) stops the run early when
    the measured output leaves the safe range.
    """

    x_ref: float = 1.0
    t_end: float = 5.0
    dt: float = DEFAULT_DT
    disturbance: Optional[Disturbance] = None
    gravity_feedforward: float = 0.0
    t_step: float = 0.0
    abort_amplitude: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.dt <= self.t_end:
            raise ValueError("need 0 < dt <= t_end")
        if not 0 <= self.t_step < self.t_end:
            raise ValueError("need 0 <= t_step < t_end")
        d = self.disturbance
        if d is not None and not (0 <= d.t_on < d.t_off <= self.t_end):
            raise ValueError("disturbance needs 0 <= t_on < t_off <= t_end")
        if self.abort_amplitude is not None and self.abort_amplitude <= 0:
            raise ValueError("abort_amplitude must be positive")

    @property
    def n_samples(self) -> int:
        return int(round(self.t_end / self.dt)) + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        if d.get("disturbance") is not None:
            d["disturbance"] = Disturbance(**d["disturbance"])
        return cls(**d)


@dataclass
class Trace:
    dt: float
    t0: float
    r: np.ndarray
    u: np.ndarray
    x: np.ndarray
    d: np.ndarray
    x_clean: Optional[np.ndarray] = None
    aborted: bool = False
    diverged: bool = False

    def __post_init__(self):
        n = len(self.r)
        arrays = [self.u, self.x, self.d] + ([self.x_clean] if self.x_clean is not None else [])
        if n < 2 or any(len(a) != n for a in arrays):
            raise ValueError("trace arrays must share a length >= 2")

    def __len__(self):
        return len(self.r)

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.r))

    @property
    def x_ref(self) -> float:
        return float(self.r[-1])


class PlantSession(Protocol):
    """The only view of a plant the tuner gets."""

    def run(self, controller: TransferFunction, scenario: ScenarioSpec) -> Trace: ...

    def reset(self) -> None: ...


# -------------------------------------------------------------- discretizing

@dataclass(frozen=True)
class DiscreteFilter:
    """``y[n] = sum b[i] u[n-i] - sum a[i] y[n-i]`` with ``a[0] == 1``."""

    b: np.ndarray
    a: np.ndarray
    delay: int = 0

    def dc_gain(self) -> float:
        return float(np.sum(self.b) / np.sum(self.a))

    def lfilter(self, u: np.ndarray) -> np.ndarray:
        y = signal.lfilter(self.b, self.a, u)
        if self.delay:
            y = np.concatenate([np.zeros(self.delay), y[:-self.delay]])
        return y


def _tustin(tf: TransferFunction, dt: float):
    # s^k -> c^k (z-1)^k (z+1)^(n-k), all over the common (z+1)^n
    n = tf.den_degree
    c = 2.0 / dt

    def expand(coeffs):
        out = np.zeros(n + 1)
        deg = len(coeffs) - 1
        for i, coef in enumerate(coeffs):
            k = deg - i
            p = np.array([1.0])
            for _ in range(k):
                p = np.convolve(p, [1.0, -1.0])
            for _ in range(n - k):
                p = np.convolve(p, [1.0, 1.0])
            out += coef * c**k * p
        return out

    b = expand(tf.num)
    a = expand(tf.den)
    return b / a[0], a / a[0]


def discretize(tf: TransferFunction, dt: float, method: str = "tustin") -> DiscreteFilter:
    """Difference-equation realization of a proper transfer function.

    ``method="tustin"`` substitutes ``s = (2/dt)(z-1)/(z+1)``; ``"zoh"`` is the
    exact sampled response to a held input (used for linear plants). Dead time
    becomes a delay line of ``round(dead_time/dt)`` samples.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if not tf.is_proper:
        raise ImproperTf(f"numerator degree {tf.num_degree} exceeds "
                         f"denominator degree {tf.den_degree}")
    delay = int(round(tf.dead_time / dt))
    if tf.den_degree == 0:
        return DiscreteFilter(np.array([tf.num[0] / tf.den[0]]), np.array([1.0]), delay)
    if method == "tustin":
        b, a = _tustin(tf, dt)
    elif method == "zoh":
        num, den, _ = signal.cont2discrete((tf.num, tf.den), dt, method="zoh")
        b = np.atleast_2d(num)[0]
        a = np.asarray(den, dtype=float)
        b = np.concatenate([np.zeros(len(a) - len(b)), b])
        if tf.num_degree < tf.den_degree:
            b[0] = 0.0
        b, a = b / a[0], a / a[0]
    else:
        raise ValueError(f"unknown discretization method {method!r}")
    return DiscreteFilter(np.asarray(b, float), np.asarray(a, float), delay)


def sgn_with_stiction(v, eps: float = 1e-5):
    """Regularized sign: ``v/eps`` clamped to ``[-1, 1]``."""
    if eps <= 0:
        raise ValueError("eps must be > 0")
    out = np.clip(np.asarray(v, dtype=float) / eps, -1.0, 1.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- simulating

def _noise(plant: PlantSpec, n: int, rng: Optional[np.random.Generator]) -> np.ndarray:
    if plant.noise_sigma == 0:
        return np.zeros(n)
    if rng is None:
        rng = np.random.default_rng(plant.seed)
    e = rng.standard_normal(n)
    return plant.noise_sigma * np.clip(e, -NOISE_CLAMP, NOISE_CLAMP)


def _signals(scenario: ScenarioSpec):
    n = scenario.n_samples
    t = scenario.dt * np.arange(n)
    r = np.where(t >= scenario.t_step - 0.5 * scenario.dt, scenario.x_ref, 0.0)
    d = np.zeros(n)
    dist = scenario.disturbance
    if dist is not None:
        on = (t >= dist.t_on - 0.5 * scenario.dt) & (t < dist.t_off - 0.5 * scenario.dt)
        d[on] = dist.magnitude
    return t, r, d


def _vcm_substeps(v: VcmLike, dt: float) -> int:
    # RK4 stays monotone for linear decay while rate*h <= 2
    rate = (v.coulomb / v.stiction_eps + v.viscous) / v.mass
    if v.resonance is not None:
        res = v.resonance
        m_eff = min(v.mass, res.appendage_mass)
        rate = max(rate, res.damping / m_eff + math.sqrt(res.stiffness / m_eff))
    return max(1, int(math.ceil(rate * dt / 2.0)))


def _run(plant: PlantSpec, scenario: ScenarioSpec, controller: Optional[TransferFunction],
         u_open: Optional[np.ndarray], rng: Optional[np.random.Generator],
         with_velocity: bool = False):
    dt = scenario.dt
    _, r, d = _signals(scenario)
    n = len(r)
    noise = _noise(plant, n, rng)
    closed = controller is not None
    if closed:
        cf = discretize(controller, dt, "tustin")
        bc = np.concatenate([np.zeros(len(cf.a) - len(cf.b)), cf.b])
        ac, c_delay = cf.a, cf.delay
        u_arr = np.zeros(n)
    else:
        bc = ac = np.ones(1)
        c_delay = 0
        u_arr = np.asarray(u_open, dtype=float)
        if u_arr.shape != (n,):
            raise ValueError(f"open-loop input must have {n} samples")
    scale = abs(scenario.x_ref) if scenario.x_ref != 0 else 1.0
    abort = scenario.abort_amplitude * scale if scenario.abort_amplitude else math.inf
    diverge = DIVERGENCE_FACTOR * scale
    ff = float(scenario.gravity_feedforward)
    v = plant.variant
    vel = None
    if isinstance(v, LinearTf):
        pf = discretize(replace(v.tf, dead_time=0.0), dt, "zoh")
        delay_n = int(round(v.tf.dead_time / dt)) + c_delay
        u, x, xc, last, status = _kernels.run_linear(
            r, d, noise, u_arr, closed, ff, bc, ac, pf.b, pf.a, delay_n, abort, diverge)
    else:
        delay_n = int(round(v.delay / dt)) + c_delay
        gu = np.array([p[0] for p in v.input_gain], float)
        gf = np.array([p[1] for p in v.input_gain], float)
        res = v.resonance
        u, x, xc, vel, last, status = _kernels.run_vcm(
            r, d, noise, u_arr, closed, ff, bc, ac, delay_n, dt, _vcm_substeps(v, dt),
            v.mass, v.viscous, v.coulomb, v.stiction_eps, v.gravity, gu, gf,
            res is not None, res.stiffness if res else 0.0, res.damping if res else 0.0,
            res.appendage_mass if res else 1.0, abort, diverge)
    stop = max(int(last), 1) + 1
    trace = Trace(dt=dt, t0=0.0, r=r[:stop].copy(), u=u[:stop], x=x[:stop], d=d[:stop],
                  x_clean=xc[:stop], aborted=status == _kernels.ABORTED,
                  diverged=status == _kernels.DIVERGED)
    if with_velocity:
        return trace, (vel[:stop] if vel is not None else None)
    return trace


def simulate_closed_loop(plant: PlantSpec, controller: TransferFunction,
                         scenario: ScenarioSpec,
                         rng: Optional[np.random.Generator] = None) -> Trace:
    """Run one step experiment under unity feedback.

    Per sample: ``e = r - x``, ``u = C(e) + gravity_feedforward``, then the
    plant advances one step. Noise is drawn from ``rng`` (default: a fresh
    generator seeded with ``plant.seed``). A run whose output exceeds
    ``1e6 * |x_ref|`` stops early with ``trace.diverged`` set.
    """
    return _run(plant, scenario, controller, None, rng)


def simulate_open_loop(plant: PlantSpec, u: np.ndarray, scenario: ScenarioSpec,
                       rng: Optional[np.random.Generator] = None,
                       return_velocity: bool = False):
    """Drive the plant with a prescribed input sequence (no feedback)."""
    return _run(plant, scenario, None, u, rng, with_velocity=return_velocity)


class LocalSession:
    """In-process plant session. Noise continues across runs until ``reset``."""

    def __init__(self, plant: PlantSpec):
        self._plant = plant
        self._rng = np.random.default_rng(plant.seed)

    def run(self, controller: TransferFunction, scenario: ScenarioSpec) -> Trace:
        return simulate_closed_loop(self._plant, controller, scenario, self._rng)

    def reset(self) -> None:
        self._rng = np.random.default_rng(self._plant.seed)


def make_session(plant: PlantSpec) -> LocalSession:
    return LocalSession(plant)


# ------------------------------------------------------------------- catalog

def _vcm_gain_table(gain: float, nonlinearity: float, u_max: float = 10.0,
                    n: int = 41) -> tuple[tuple[float, float], ...]:
    u = np.linspace(-u_max, u_max, n)
    f = gain * u * (1.0 + nonlinearity * np.cos(np.pi * u / 5.0))
    return tuple((float(a), float(b)) for a, b in zip(u, f))


def _pure_integrator(gain=1.0):
    return LinearTf(TransferFunction((gain,), (1.0, 0.0)))


def _second_order_type_one(tau=0.1, gain=1.0):
    return LinearTf(TransferFunction((gain,), (tau, 1.0, 0.0)))


def _fourth_order_resonant(tau=0.05, omega_r=150.0, zeta_r=0.15, gain=1.0):
    # gain / (s (tau s + 1) (s^2/wr^2 + 2 zeta s/wr + 1))
    den = np.polymul([tau, 1.0, 0.0], [1 / omega_r**2, 2 * zeta_r / omega_r, 1.0])
    return LinearTf(TransferFunction((gain,), tuple(den)))


def _delayed_type_one(tau=0.1, dead_time=0.005, gain=1.0):
    return LinearTf(TransferFunction((gain,), (tau, 1.0, 0.0), dead_time))


def _vcm_like(mass=1.0, viscous=10.0, coulomb=0.5, gain=5.0, nonlinearity=0.02,
              delay=0.001, gravity=9.81, resonance=None, stiction_eps=1e-5):
    res = Resonance(**resonance) if isinstance(resonance, dict) else resonance
    return VcmLike(mass=mass, viscous=viscous, coulomb=coulomb,
                   input_gain=_vcm_gain_table(gain, nonlinearity),
                   resonance=res, delay=delay, gravity=gravity, stiction_eps=stiction_eps)


_CATALOG = {
    "pure_integrator": (_pure_integrator, 0.0),
    "second_order_type_one": (_second_order_type_one, 0.0),
    "fourth_order_resonant": (_fourth_order_resonant, 0.0),
    "delayed_type_one": (_delayed_type_one, 0.0),
    "vcm_like": (_vcm_like, 5e-5),
}

CATALOG_NAMES = tuple(_CATALOG)

# displacement range the vcm_like defaults are scaled for, in metres
VCM_RANGE = 0.02


def catalog(name: str, overrides: Optional[dict] = None) -> PlantSpec:
    """Named test plants.

    ``overrides`` may set ``noise_sigma``, ``seed`` and any keyword of the
    plant builder (e.g. ``tau`` or ``coulomb``).
    """
    try:
        builder, sigma = _CATALOG[name]
    except KeyError:
        raise UnknownPlant(f"unknown plant {name!r}; choose from {', '.join(_CATALOG)}")
    kw = dict(overrides or {})
    sigma = float(kw.pop("noise_sigma", sigma))
    seed = int(kw.pop("seed", 0))
    try:
        variant = builder(**kw)
    except TypeError as exc:
        raise ValueError(f"bad override for {name}: {exc}") from None
    return PlantSpec(variant, noise_sigma=sigma, seed=seed, name=name)


def nominal_feedforward(plant: PlantSpec) -> float:
    """Constant input that balances the static gravity load of a VCM-like plant.

    This is what a practitioner computes from the known moving mass and the
    nominal voltage-to-force gain before any tuning starts.
    """
    v = plant.variant
    if not isinstance(v, VcmLike) or v.gravity == 0:
        return 0.0
    us = np.array([p[0] for p in v.input_gain])
    fs = np.array([p[1] for p in v.input_gain])
    nominal_gain = float(us @ fs / (us @ us))  # least-squares slope through the origin
    return v.gravity / nominal_gain


def suggested_experiment(plant: PlantSpec) -> ScenarioSpec:
    """A step experiment sized for the plant's working range.

    VCM-like plants get a half-range step with the gravity feed-forward
    applied; linear plants a unit step over 10 s.
    """
    if isinstance(plant.variant, VcmLike):
        return ScenarioSpec(x_ref=VCM_RANGE / 2, t_end=2.0,
                            gravity_feedforward=nominal_feedforward(plant))
    return ScenarioSpec(x_ref=1.0, t_end=10.0)
