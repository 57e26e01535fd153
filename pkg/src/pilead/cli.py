"""``ut``: tune, simulate, analyze, compare and serve from the shell.

Exit codes: 0 success, 1 usage or malformed input, 2 tuner or analysis
failure, 3 transport failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, analysis
from .campaign import clean_json, run_campaign
from .errors import (InvalidPlant, OutOfRange, PiLeadError, TooShort, TransportError,
                     TunerError, UnknownPlant)
from .io import (FileFormatError, load_controller, load_plant, load_scenario,
                 load_tune_config, read_trace_csv, write_trace_csv)
from .lti import TransferFunction, format_tf, make_lead, make_pi, make_zn_pid, series
from .simulation import (Disturbance, PlantSpec, ScenarioSpec, catalog, make_session,
                         nominal_feedforward, simulate_closed_loop, suggested_experiment)
from .tuner import TuneConfig, assign_lead

EXIT_OK, EXIT_USAGE, EXIT_TUNER, EXIT_TRANSPORT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str, n: Optional[int] = None, what: str = "value") -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise UsageError(f"{what}: expected {n} numbers, got {len(vals)}")
    return vals


def _seed(args) -> Optional[int]:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("UT_SEED")
    if env is None or env == "":
        return None
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"UT_SEED must be an integer, got {env!r}") from None


def _plant(args) -> PlantSpec:
    seed = _seed(args)
    if args.plant and args.plant_file:
        raise UsageError("give either --plant or --plant-file, not both")
    if args.plant:
        return catalog(args.plant, {"seed": seed} if seed is not None else None)
    if args.plant_file:
        plant = load_plant(args.plant_file)
        return replace(plant, seed=seed) if seed is not None else plant
    raise UsageError("a plant is required (--plant NAME or --plant-file FILE)")


def _scenario(args, plant: Optional[PlantSpec], base: Optional[ScenarioSpec] = None
              ) -> ScenarioSpec:
    if getattr(args, "scenario", None):
        sc = load_scenario(args.scenario)
    elif base is not None:
        sc = base
    elif plant is not None:
        sc = suggested_experiment(plant)
    else:
        sc = ScenarioSpec()
    changes = {}
    if args.x_ref is not None:
        changes["x_ref"] = args.x_ref
    if args.t_end is not None:
        changes["t_end"] = args.t_end
    if args.dt is not None:
        changes["dt"] = args.dt
    if args.feedforward is not None:
        if args.feedforward == "auto":
            changes["gravity_feedforward"] = nominal_feedforward(plant) if plant else 0.0
        else:
            changes["gravity_feedforward"] = _floats(args.feedforward, 1, "--feedforward")[0]
    if getattr(args, "disturbance", None):
        t_on, t_off, mag = _floats(args.disturbance, 3, "--disturbance")
        changes["disturbance"] = Disturbance(t_on, t_off, mag)
    try:
        return replace(sc, **changes)
    except ValueError as exc:
        raise UsageError(f"bad scenario: {exc}") from None


def _controller(args) -> TransferFunction:
    given = [a for a in ("controller", "pi", "zn_pid") if getattr(args, a)]
    if len(given) != 1:
        raise UsageError("give exactly one of --controller, --pi or --zn-pid")
    if args.controller:
        return load_controller(args.controller)
    if args.zn_pid:
        Ku, Tu = _floats(args.zn_pid, 2, "--zn-pid")
        return make_zn_pid(Ku, Tu)
    Kp, Ti = _floats(args.pi, 2, "--pi")
    c = make_pi(Kp, Ti)
    if args.lead:
        alpha, tau = _floats(args.lead, 2, "--lead")
        c = series(c, make_lead(alpha, tau))
    return c


def _parse_ctrl(spec: str) -> tuple[str, TransferFunction]:
    """``LABEL=pi:Kp,Ti``, ``LABEL=pilead:Kp,Ti[,alpha,tau]``, ``LABEL=zn:Ku,Tu``
    or ``LABEL=file:PATH``."""
    label, sep, rest = spec.partition("=")
    kind, sep2, vals = rest.partition(":")
    if not sep or not sep2 or not label:
        raise UsageError(f"--ctrl expects LABEL=KIND:VALUES, got {spec!r}")
    if kind == "file":
        return label, load_controller(vals)
    if kind == "pi":
        return label, make_pi(*_floats(vals, 2, label))
    if kind == "pilead":
        v = _floats(vals, None, label)
        if len(v) == 2:
            lead = assign_lead(v[1])
            return label, series(make_pi(*v), lead.tf)
        if len(v) == 4:
            return label, series(make_pi(v[0], v[1]), make_lead(v[2], v[3]))
        raise UsageError(f"{label}: pilead takes Kp,Ti or Kp,Ti,alpha,tau")
    if kind == "zn":
        return label, make_zn_pid(*_floats(vals, 2, label))
    raise UsageError(f"{label}: unknown controller kind {kind!r}")


def _print_json(obj, out: Optional[str] = None) -> None:
    text = json.dumps(clean_json(obj), indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


# ------------------------------------------------------------------ commands

def cmd_tune(args) -> int:
    cfg = load_tune_config(args.config) if args.config else TuneConfig()
    if args.max_experiments is not None:
        cfg = replace(cfg, max_experiments=args.max_experiments)
    seed = _seed(args)
    if args.connect:
        if args.plant or args.plant_file:
            raise UsageError("--connect replaces --plant/--plant-file")
        host, _, port = args.connect.rpartition(":")
        if not host or not port.isdigit():
            raise UsageError(f"--connect expects HOST:PORT, got {args.connect!r}")
        from .wire import session_client

        if args.feedforward == "auto":
            raise UsageError("--feedforward auto needs a known plant; give the value")
        # the remote plant is opaque, so the config's experiment is the template
        cfg = replace(cfg, experiment=_scenario(args, None, cfg.experiment))
        session = session_client(host, int(port))
        descriptor = "external"
    else:
        plant = _plant(args)
        session = make_session(plant)
        descriptor = plant.name or "file"
        seed = plant.seed
        base = cfg.experiment if args.config else None
        cfg = replace(cfg, experiment=_scenario(args, plant, base))
    try:
        run_campaign(session, args.output, cfg, plant=descriptor, seed=seed, zn=args.zn,
                     echo=print)
    finally:
        close = getattr(session, "close", None)
        if close is not None:
            close()
    print(f"report written to {Path(args.output) / 'report.json'}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    plant = _plant(args)
    controller = _controller(args)
    scenario = _scenario(args, plant)
    trace = simulate_closed_loop(plant, controller, scenario)
    write_trace_csv(trace, args.output)
    d = scenario.disturbance
    # metrics come from the file so that `ut analyze` reproduces them exactly
    out = analysis.analyze_trace(read_trace_csv(args.output), t_release=d.t_off if d else None)
    out.update(controller=format_tf(controller), trace=str(args.output),
               aborted=trace.aborted, diverged=trace.diverged)
    _print_json(out)
    return EXIT_OK


def cmd_analyze(args) -> int:
    trace = read_trace_csv(args.trace)
    out = analysis.analyze_trace(trace, args.transient_skip, args.low, args.high,
                                 args.t_release, args.band)
    _print_json(out, args.output)
    return EXIT_OK


COMPARE_COLUMNS = ("controller", "x_ref", "overshoot_M", "peak_time", "settling_time_2pct",
                   "steady_state_error", "recovery_time", "max_abs_u", "aborted")


def compare_rows(plant: PlantSpec, controllers: Sequence[tuple[str, TransferFunction]],
                 x_refs: Sequence[float], scenario: ScenarioSpec,
                 trace_dir: Optional[Path] = None) -> list[dict]:
    rows = []
    d = scenario.disturbance
    for label, c in controllers:
        for x_ref in x_refs:
            trace = simulate_closed_loop(plant, c, replace(scenario, x_ref=x_ref))
            if trace_dir is not None:
                write_trace_csv(trace, trace_dir / f"{label}_{x_ref:g}.csv")
            m = analysis.overshoot(trace)
            rec = analysis.recovery_time(trace, d.t_off) if d else None
            rows.append({"controller": label, "x_ref": x_ref, "overshoot_M": m.overshoot_M,
                         "peak_time": m.peak_time, "settling_time_2pct": m.settling_time_2pct,
                         "steady_state_error": m.steady_state_error, "recovery_time": rec,
                         "max_abs_u": float(abs(trace.u).max()), "aborted": trace.aborted})
    return rows


def cmd_compare(args) -> int:
    plant = _plant(args)
    if not args.ctrl:
        raise UsageError("give at least one --ctrl LABEL=KIND:VALUES")
    controllers = [_parse_ctrl(s) for s in args.ctrl]
    scenario = _scenario(args, plant)
    if scenario.disturbance is not None and args.t_end is None:
        t_end = max(scenario.t_end, scenario.disturbance.t_off + 1.5)
        scenario = replace(scenario, t_end=t_end)
    x_refs = _floats(args.x_refs, None, "--x-refs")
    trace_dir = None
    if args.traces:
        trace_dir = Path(args.traces)
        trace_dir.mkdir(parents=True, exist_ok=True)
    rows = compare_rows(plant, controllers, x_refs, scenario, trace_dir)
    fmt = lambda v: "" if v is None else (f"{v:.6g}" if isinstance(v, float) else str(v))
    if args.output:
        with open(args.output, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COMPARE_COLUMNS)
            for r in rows:
                w.writerow([fmt(r[c]) for c in COMPARE_COLUMNS])
    widths = [max(len(c), *(len(fmt(r[c])) for r in rows)) for c in COMPARE_COLUMNS]
    print("  ".join(c.ljust(w) for c, w in zip(COMPARE_COLUMNS, widths)))
    for r in rows:
        print("  ".join(fmt(r[c]).ljust(w) for c, w in zip(COMPARE_COLUMNS, widths)))
    return EXIT_OK


def cmd_serve(args) -> int:
    from .wire import plant_server

    plant = _plant(args)
    server = plant_server(plant, args.host, args.port)
    host, port = server.server_address[:2]
    print(f"listening on {host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


# -------------------------------------------------------------------- parser

def _add_plant(p):
    p.add_argument("--plant", help="catalog plant name")
    p.add_argument("--plant-file", help="JSON plant document")
    p.add_argument("--seed", type=int, help="noise seed (default: $UT_SEED, else the plant's)")


def _add_scenario(p):
    p.add_argument("--scenario", help="JSON scenario document")
    p.add_argument("--x-ref", type=float)
    p.add_argument("--t-end", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--feedforward", help="constant input offset, or 'auto' for gravity")


def _add_controller(p):
    p.add_argument("--controller", help="JSON controller document")
    p.add_argument("--pi", help="Kp,Ti")
    p.add_argument("--lead", help="alpha,tau (with --pi)")
    p.add_argument("--zn-pid", help="Ku,Tu for a filtered ultimate-gain PID")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ut", description="Model-free PI-Lead tuning toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("tune", help="run a tuning campaign")
    _add_plant(p)
    p.add_argument("--connect", help="HOST:PORT of a plant server")
    p.add_argument("--config", help="JSON tune_config document")
    p.add_argument("--max-experiments", type=int)
    p.add_argument("--zn", action="store_true", help="also run the ultimate-gain PID campaign")
    p.add_argument("-o", "--output", default="ut_out", help="output directory")
    _add_scenario(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("simulate", help="simulate one closed-loop step")
    _add_plant(p)
    _add_controller(p)
    _add_scenario(p)
    p.add_argument("--disturbance", help="t_on,t_off,magnitude of an input pulse")
    p.add_argument("-o", "--output", default="trace.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="recompute metrics from a trace file")
    p.add_argument("trace")
    p.add_argument("--transient-skip", type=float, default=0.3)
    p.add_argument("--low", type=float, default=0.8)
    p.add_argument("--high", type=float, default=1.25)
    p.add_argument("--t-release", type=float, help="disturbance release time")
    p.add_argument("--band", type=float, default=0.05, help="recovery band, fraction of x_ref")
    p.add_argument("-o", "--output", help="also write the JSON here")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compare", help="tabulate several controllers on one plant")
    _add_plant(p)
    _add_scenario(p)
    p.add_argument("--ctrl", action="append",
                   help="LABEL=pi:Kp,Ti | LABEL=pilead:Kp,Ti[,alpha,tau] | LABEL=zn:Ku,Tu "
                        "| LABEL=file:PATH (repeatable)")
    p.add_argument("--x-refs", default="0.005,0.01,0.015")
    p.add_argument("--disturbance", help="t_on,t_off,magnitude of an input pulse")
    p.add_argument("--traces", help="directory for the simulated traces")
    p.add_argument("-o", "--output", help="CSV metrics table")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("serve", help="serve a simulated plant over TCP")
    _add_plant(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, FileFormatError, UnknownPlant, InvalidPlant, ValueError) as exc:
        print(f"ut: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TunerError as exc:
        print(f"ut: tuning failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_TUNER
    except (TooShort, OutOfRange) as exc:
        print(f"ut: analysis failed: {exc}", file=sys.stderr)
        return EXIT_TUNER
    except TransportError as exc:
        print(f"ut: transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except FileNotFoundError as exc:
        print(f"ut: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PiLeadError as exc:
        print(f"ut: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
