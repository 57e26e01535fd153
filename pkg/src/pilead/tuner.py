"""Model-free PI-Lead tuning and the ultimate-gain PID baseline.

Every decision here is made from step experiments run through a
:class:`~pilead.simulation.PlantSession`; the plant itself is never
inspected. The pipeline is

1. find a pre-gain ``k`` that makes the proportional loop respond,
2. shrink the integrator time constant until the PI loop oscillates
   permanently and set ``Ti = 10 / max(w_gc, 1/Ti_ultimate)``,
3. scale the gain until the step overshoot lands in the target band,
4. add a lead element whose peak phase sits 1.5 decades above ``1/Ti``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import analysis
from .errors import (BudgetExhausted, NoOscillation, NoOscillationFound, TooShort,
                     TunerError, Unresponsive, UnstablePlant)
from .lti import TransferFunction, make_lead, make_pi, make_zn_pid, series, zn_pid_parameters
from .simulation import PlantSession, ScenarioSpec, Trace

logger = logging.getLogger(__name__)

LEAD_ALPHA = 0.1
LEAD_DECADES = 1.5


@dataclass(frozen=True)
class TuneConfig:
    Ti_start: float = 0.1
    Ti_decay: float = 0.9
    Ti_refine: float = 0.97
    Kp_grid_points: int = 25
    Kp_delta_range: tuple[float, float] = (0.1, 10.0)
    Kp_max_bisections: int = 8
    M_band: tuple[float, float] = (0.30, 0.40)
    k_start: float = 1.0
    k_factor: float = 10.0
    k_max: float = 1e6
    responsive_fraction: float = 0.63
    experiment: ScenarioSpec = field(default_factory=lambda: ScenarioSpec(t_end=10.0))
    abort_amplitude: float = 5.0
    max_experiments: int = 400
    transient_skip: float = 0.3
    sustained_low: float = 0.8
    sustained_high: float = 1.25
    zn_gain_factor: float = 1.5
    zn_max_bisections: int = 10
    zn_rel_width: float = 0.02
    zn_filter_hz: float = 1000.0
    zn_filter_order: int = 2

    def __post_init__(self):
        if not (0 < self.Ti_decay < 1 and 0 < self.Ti_refine < 1):
            raise ValueError("Ti_decay and Ti_refine must lie in (0, 1)")
        lo, hi = self.M_band
        if not 0 < lo < hi < 1:
            raise ValueError("M_band must satisfy 0 < low < high < 1")
        if self.Kp_grid_points < 3:
            raise ValueError("Kp grid needs at least 3 points")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["experiment"] = self.experiment.to_dict()
        d["Kp_delta_range"] = list(self.Kp_delta_range)
        d["M_band"] = list(self.M_band)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TuneConfig":
        d = dict(d)
        if "experiment" in d:
            d["experiment"] = ScenarioSpec.from_dict(d["experiment"])
        for key in ("Kp_delta_range", "M_band"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


# ---------------------------------------------------------------- bookkeeping

@dataclass(frozen=True)
class Experiment:
    index: int
    stage: str
    params: dict
    controller: TransferFunction
    metrics: analysis.StepMetrics
    verdict: Optional[analysis.OscillationVerdict]
    aborted: bool
    diverged: bool
    responsive: bool

    @property
    def unstable(self) -> bool:
        """Permanent or growing oscillation, or a run cut short for safety."""
        v = self.verdict
        return (self.aborted or self.diverged
                or (v is not None and (v.sustained or v.diverging)))

    @property
    def omega(self) -> float:
        v = self.verdict
        return v.omega if v is not None and v.omega is not None else 0.0

    def to_dict(self) -> dict:
        return {"index": self.index, "stage": self.stage, "params": self.params,
                "controller": self.controller.to_dict(),
                "metrics": self.metrics.to_dict(),
                "verdict": self.verdict.to_dict() if self.verdict else None,
                "aborted": self.aborted, "diverged": self.diverged,
                "responsive": self.responsive}


class TuneLog:
    """Running record of every experiment, with the experiment budget."""

    def __init__(self, session: PlantSession, cfg: TuneConfig,
                 on_experiment: Optional[Callable[[Experiment, Trace], None]] = None):
        self.session = session
        self.cfg = cfg
        self.experiments: list[Experiment] = []
        self.on_experiment = on_experiment

    def __len__(self):
        return len(self.experiments)

    def run(self, controller: TransferFunction, stage: str, **params) -> Experiment:
        cfg = self.cfg
        if len(self.experiments) >= cfg.max_experiments:
            raise BudgetExhausted(
                f"experiment budget of {cfg.max_experiments} used up during {stage}",
                self.experiments)
        scenario = replace(cfg.experiment, abort_amplitude=cfg.abort_amplitude)
        trace = self.session.run(controller, scenario)
        metrics = analysis.overshoot(trace, scenario.x_ref)
        try:
            skip = cfg.transient_skip if not (trace.aborted or trace.diverged) else 0.0
            verdict = analysis.detect_sustained(trace, skip, cfg.sustained_low,
                                                cfg.sustained_high)
        except TooShort:
            verdict = None
        xf = analysis.median_smooth(trace.x)
        sgn = 1.0 if scenario.x_ref > 0 else -1.0
        responsive = bool(np.max(sgn * xf) >= cfg.responsive_fraction * abs(scenario.x_ref))
        exp = Experiment(len(self.experiments), stage, params, controller, metrics,
                         verdict, trace.aborted, trace.diverged, responsive)
        self.experiments.append(exp)
        logger.debug("experiment %d %s %s M=%.4f unstable=%s", exp.index, stage, params,
                     metrics.overshoot_M, exp.unstable)
        if self.on_experiment is not None:
            self.on_experiment(exp, trace)
        return exp

    def to_list(self) -> list[dict]:
        return [e.to_dict() for e in self.experiments]


def _log(session, cfg, log):
    return log if log is not None else TuneLog(session, cfg)


# ------------------------------------------------------------------- stage 0

def find_responsive_gain(session: PlantSession, cfg: TuneConfig,
                         log: Optional[TuneLog] = None) -> float:
    """Smallest decade gain under which the proportional loop follows the step.

    A gain qualifies once the output reaches ``responsive_fraction`` of the
    reference within the horizon without oscillating permanently. If the first
    responsive gain oscillates, one half-decade step back is tried.
    """
    log = _log(session, cfg, log)
    k = cfg.k_start
    while k <= cfg.k_max:
        e = log.run(TransferFunction.gain(k), "responsive_gain", k=k)
        if e.responsive and not e.unstable:
            return k
        if e.unstable:
            k_back = k / math.sqrt(cfg.k_factor)
            e2 = log.run(TransferFunction.gain(k_back), "responsive_gain", k=k_back)
            if e2.responsive and not e2.unstable:
                return k_back
            raise UnstablePlant(
                f"proportional loop oscillates at k={k:g} and is unresponsive or "
                f"oscillating at k={k_back:g}", log.experiments)
        k *= cfg.k_factor
    raise Unresponsive(f"no response up to k_max={cfg.k_max:g}", log.experiments)


# ------------------------------------------------------------------- stage 1

@dataclass(frozen=True)
class IntegratorResult:
    Ti: float
    Ti_ultimate: float
    omega_gc_bar: float
    omega_c_pi_bar: float
    sweep_log: tuple[tuple[float, float, float], ...]

    def to_dict(self) -> dict:
        return {"Ti": self.Ti, "Ti_ultimate": self.Ti_ultimate,
                "omega_gc_bar": self.omega_gc_bar, "omega_c_pi_bar": self.omega_c_pi_bar,
                "sweep_log": [list(r) for r in self.sweep_log]}


def integrator_time_constant(omega_c_pi_bar: float, omega_gc_bar: float) -> float:
    """One decade below the faster of the two ultimate frequencies."""
    return 10.0 / max(omega_gc_bar, omega_c_pi_bar)


def tune_integrator(session: PlantSession, k: float, cfg: TuneConfig,
                    log: Optional[TuneLog] = None) -> IntegratorResult:
    """Shrink ``Ti`` of ``PI(k, Ti)`` until permanent oscillation appears.

    A coarse geometric descent (``Ti_decay``) brackets the ultimate value, a
    fine descent (``Ti_refine``) from the last quiet point pins it down.
    """
    log = _log(session, cfg, log)
    Ti_floor = 100 * cfg.experiment.dt
    rows: dict[float, Experiment] = {}

    def run(Ti):
        e = log.run(make_pi(k, Ti), "integrator", Kp=k, Ti=Ti)
        rows[Ti] = e
        return e

    Ti = cfg.Ti_start
    quiet = None
    e = run(Ti)
    if e.unstable:
        # already past the ultimate point: climb back to a quiet loop
        loud = Ti
        for _ in range(60):
            Ti /= cfg.Ti_decay
            if not run(Ti).unstable:
                quiet = Ti
                break
            loud = Ti
        else:
            raise UnstablePlant("PI loop oscillates for every integrator time tried",
                                log.experiments)
    else:
        quiet = Ti
        while True:
            Ti *= cfg.Ti_decay
            if Ti < Ti_floor:
                raise NoOscillationFound(
                    f"no permanent oscillation down to Ti={Ti_floor:g} s; the plant "
                    f"behaves like a first-order lag under PI control", log.experiments)
            if run(Ti).unstable:
                loud = Ti
                break
            quiet = Ti

    ultimate = rows[loud]
    Ti = quiet * cfg.Ti_refine
    while Ti > loud * (1 + 1e-9):
        e = run(Ti)
        if e.unstable:
            ultimate = e
            loud = Ti
            break
        Ti *= cfg.Ti_refine

    omega_gc = ultimate.omega
    omega_pi = 1.0 / loud
    sweep = tuple((t, 1.0 / t, rows[t].omega) for t in sorted(rows, reverse=True))
    return IntegratorResult(integrator_time_constant(omega_pi, omega_gc), loud,
                            omega_gc, omega_pi, sweep)


# ------------------------------------------------------------------- stage 2

@dataclass(frozen=True)
class GainResult:
    Kp: float
    achieved_M: float
    band_reached: bool
    evaluations: tuple[tuple[float, float], ...]

    def to_dict(self) -> dict:
        return {"Kp": self.Kp, "achieved_M": self.achieved_M,
                "band_reached": self.band_reached,
                "evaluations": [list(r) for r in self.evaluations]}


def tune_gain(session: PlantSession, k: float, Ti: float, cfg: TuneConfig,
              log: Optional[TuneLog] = None) -> GainResult:
    """Scale ``Kp = delta * k`` until the step overshoot falls inside ``M_band``.

    The log-spaced ``delta`` grid is walked upward from 1 and, if that does not
    bracket the band, downward; a bracketing pair is then bisected in log
    space. Unsafe runs count as infinite overshoot. If the band cannot be
    reached the grid point closest to it is returned with
    ``band_reached=False``.
    """
    log = _log(session, cfg, log)
    lo_b, hi_b = cfg.M_band
    evals: dict[float, float] = {}

    def M_of(delta):
        if delta not in evals:
            e = log.run(make_pi(delta * k, Ti), "gain", Kp=delta * k, Ti=Ti)
            evals[delta] = math.inf if e.unstable else e.metrics.overshoot_M
        return evals[delta]

    def side(M):
        return -1 if M < lo_b else (1 if M > hi_b else 0)

    def result(delta, reached):
        return GainResult(delta * k, evals[delta], reached,
                          tuple((d * k, evals[d]) for d in sorted(evals)))

    if side(M_of(1.0)) == 0:
        return result(1.0, True)

    lo_d, hi_d = cfg.Kp_delta_range
    grid = np.geomspace(lo_d, hi_d, cfg.Kp_grid_points)
    grid[np.argmin(np.abs(np.log(grid)))] = 1.0
    up = [float(d) for d in grid if d > 1.0]
    down = [float(d) for d in grid[::-1] if d < 1.0]

    def walk(deltas):
        prev = 1.0
        for d in deltas:
            m, mp = M_of(d), M_of(prev)
            if side(m) == 0:
                return d, None
            if side(m) != side(mp):
                return None, (prev, d)
            if side(m) == 1 and m >= mp:
                return None, None
            prev = d
        return None, None

    hit, pair = walk(up)
    if hit is None and pair is None:
        hit, pair = walk(down)
    if hit is not None:
        return result(hit, True)
    if pair is not None:
        a, b = pair
        for _ in range(cfg.Kp_max_bisections):
            mid = math.sqrt(a * b)
            s = side(M_of(mid))
            if s == 0:
                return result(mid, True)
            if s == side(M_of(a)):
                a = mid
            else:
                b = mid

    def distance(d):
        m = evals[d]
        return max(lo_b - m, m - hi_b, 0.0)

    best = min(sorted(evals), key=lambda d: (distance(d), abs(math.log(d))))
    logger.warning("overshoot band %s not reached; closest M=%.3f at Kp=%g",
                   cfg.M_band, evals[best], best * k)
    return result(best, False)


# ------------------------------------------------------------------- stage 3

@dataclass(frozen=True)
class LeadParams:
    alpha: float
    tau: float
    K_L: float = 1.0

    @property
    def tf(self) -> TransferFunction:
        return make_lead(self.alpha, self.tau, self.K_L)


def assign_lead(Ti: float) -> LeadParams:
    """Lead element for a PI loop with integrator time ``Ti``.

    Peak phase (about 55 deg for ``alpha = 0.1``) is placed at
    ``10**1.5 / Ti``; with ``tau = 1/(sqrt(alpha) * w_peak)`` this gives
    ``tau = Ti/10`` and a pole time constant of ``Ti/100``.
    """
    if Ti <= 0:
        raise ValueError("Ti must be positive")
    return LeadParams(LEAD_ALPHA, Ti / 10.0, 1.0)


# ------------------------------------------------------------------ pipeline

@dataclass
class PiLeadResult:
    k: float
    Kp: float
    Ti: float
    lead: LeadParams
    achieved_M: float
    band_reached: bool
    predicted_phase_margin_deg: float
    lead_M: float
    lead_metrics: Optional[analysis.StepMetrics]
    integrator: IntegratorResult
    gain: GainResult
    n_experiments: int
    log: list[Experiment]

    @property
    def pi(self) -> TransferFunction:
        return make_pi(self.Kp, self.Ti)

    @property
    def controller(self) -> TransferFunction:
        """PI in series with the lead element."""
        return series(self.pi, self.lead.tf)

    def to_dict(self) -> dict:
        return {
            "k": self.k, "Kp": self.Kp, "Ti": self.Ti,
            "lead": {"alpha": self.lead.alpha, "tau": self.lead.tau, "K_L": self.lead.K_L},
            "achieved_M": self.achieved_M, "band_reached": self.band_reached,
            "predicted_phase_margin_deg": self.predicted_phase_margin_deg,
            "lead_M": self.lead_M,
            "lead_metrics": self.lead_metrics.to_dict() if self.lead_metrics else None,
            "integrator": self.integrator.to_dict(), "gain": self.gain.to_dict(),
            "n_experiments": self.n_experiments,
            "pi": self.pi.to_dict(), "lead_tf": self.lead.tf.to_dict(),
        }


def tune_pi_lead(session: PlantSession, cfg: TuneConfig = TuneConfig(),
                 log: Optional[TuneLog] = None) -> PiLeadResult:
    """Run the three tuning stages and a verification run with the lead added.

    ``achieved_M`` is the overshoot of the PI loop selected by the gain stage;
    the phase margin it implies is reported as ``predicted_phase_margin_deg``.
    On any stage failure the raised :class:`TunerError` carries the partial log.
    """
    log = _log(session, cfg, log)
    try:
        k = find_responsive_gain(session, cfg, log)
        integ = tune_integrator(session, k, cfg, log)
        gain = tune_gain(session, k, integ.Ti, cfg, log)
        lead = assign_lead(integ.Ti)
        ver = log.run(series(make_pi(gain.Kp, integ.Ti), lead.tf), "verification",
                      Kp=gain.Kp, Ti=integ.Ti, alpha=lead.alpha, tau=lead.tau)
    except TunerError as exc:
        exc.log = log.experiments
        raise
    M = gain.achieved_M
    predicted = analysis.phase_margin_from_overshoot(M) if 0 < M < 1 else math.nan
    return PiLeadResult(k, gain.Kp, integ.Ti, lead, M, gain.band_reached, predicted,
                        math.inf if ver.unstable else ver.metrics.overshoot_M,
                        ver.metrics, integ, gain, len(log), log.experiments)


# ------------------------------------------------------------ ZN baseline

@dataclass(frozen=True)
class ZnUltimate:
    Ku: float
    Tu: float


@dataclass(frozen=True)
class ZnResult:
    Ku: float
    Tu: float
    Kp: float
    Ti: float
    Td: float
    pid: TransferFunction

    def to_dict(self) -> dict:
        return {"Ku": self.Ku, "Tu": self.Tu, "Kp": self.Kp, "Ti": self.Ti,
                "Td": self.Td, "pid": self.pid.to_dict()}


def zn_ultimate(session: PlantSession, cfg: TuneConfig,
                log: Optional[TuneLog] = None) -> ZnUltimate:
    """Ultimate gain and period of the proportional loop.

    The gain grows by ``zn_gain_factor`` until permanent oscillation, then the
    last quiet/oscillating pair is bisected to ``zn_rel_width``.
    """
    log = _log(session, cfg, log)
    K = cfg.k_start
    quiet = None
    while True:
        e = log.run(TransferFunction.gain(K), "zn_ultimate", Kp=K)
        if e.unstable:
            loud_exp = e
            break
        quiet = K
        K *= cfg.zn_gain_factor
        if K > cfg.k_max:
            raise NoOscillation(f"proportional loop never oscillates up to "
                                f"Kp={cfg.k_max:g}", log.experiments)
    loud = K
    if quiet is None:
        for _ in range(60):
            K /= cfg.zn_gain_factor
            e = log.run(TransferFunction.gain(K), "zn_ultimate", Kp=K)
            if not e.unstable:
                quiet = K
                break
            loud, loud_exp = K, e
        else:
            raise NoOscillation("proportional loop oscillates at every gain tried",
                                log.experiments)
    for _ in range(cfg.zn_max_bisections):
        if loud / quiet - 1 <= cfg.zn_rel_width:
            break
        mid = math.sqrt(quiet * loud)
        e = log.run(TransferFunction.gain(mid), "zn_ultimate", Kp=mid)
        if e.unstable:
            loud, loud_exp = mid, e
        else:
            quiet = mid
    Ku = 0.5 * (quiet + loud)
    e = log.run(TransferFunction.gain(Ku), "zn_ultimate", Kp=Ku)
    period = None
    for cand in (e, loud_exp):
        if cand.verdict is not None and cand.verdict.period is not None:
            period = cand.verdict.period
            break
    if period is None:
        raise NoOscillation("could not measure the oscillation period at the "
                            "ultimate gain", log.experiments)
    return ZnUltimate(Ku, period)


def zn_pid(session: PlantSession, cfg: TuneConfig,
           log: Optional[TuneLog] = None) -> ZnResult:
    log = _log(session, cfg, log)
    try:
        u = zn_ultimate(session, cfg, log)
    except TunerError as exc:
        exc.log = log.experiments
        raise
    return zn_from_ultimate(u.Ku, u.Tu, cfg.zn_filter_hz, cfg.zn_filter_order)


def zn_from_ultimate(Ku: float, Tu: float, f_c: float = 1000.0, order: int = 2) -> ZnResult:
    Kp, Ti, Td = zn_pid_parameters(Ku, Tu)
    return ZnResult(Ku, Tu, Kp, Ti, Td, make_zn_pid(Ku, Tu, f_c, order))
