"""Tuning campaigns that leave a reproducible trail on disk.

A campaign writes one ``trace_NNN.csv`` per experiment, a ``report.json``
whose per-experiment metrics are recomputed from those files, Bode data of
the final controller and a small SVG of the verification steps.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__, analysis
from .errors import TunerError
from .io import SCHEMA_VERSION, read_trace_csv, write_trace_csv
from .lti import bode, format_tf
from .simulation import PlantSession, Trace
from .tuner import PiLeadResult, TuneConfig, TuneLog, ZnResult, tune_pi_lead, zn_pid


def clean_json(obj):
    """Replace non-finite floats by None so the report is strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    if isinstance(obj, np.generic):
        return clean_json(obj.item())
    return obj


def dumps_report(report: dict) -> str:
    return json.dumps(clean_json(report), indent=2, sort_keys=True, allow_nan=False) + "\n"


def trace_metrics(trace: Trace, cfg: TuneConfig) -> dict:
    return analysis.analyze_trace(trace, cfg.transient_skip, cfg.sustained_low,
                                  cfg.sustained_high)


def write_bode_csv(tf, path, omega_lo: float, omega_hi: float) -> None:
    w, mag, ph = bode(tf, omega_lo, omega_hi)
    rows = ["omega,mag_db,phase_deg"]
    rows += [f"{a:.9g},{b:.9g},{c:.9g}" for a, b, c in zip(w, mag, ph)]
    Path(path).write_text("\n".join(rows) + "\n", encoding="ascii")


def step_svg(traces: dict[str, Trace], width: int = 640, height: int = 360) -> str:
    """Output-versus-time polylines, one per labelled trace, with the reference."""
    pad = 40
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    t_max = max(float(tr.t[-1]) for tr in traces.values())
    ys = np.concatenate([tr.x for tr in traces.values()] + [tr.r for tr in traces.values()])
    y_lo, y_hi = float(min(ys.min(), 0.0)), float(ys.max())
    y_hi = y_hi if y_hi > y_lo else y_lo + 1.0

    def pts(t, y):
        step = max(1, len(t) // 1500)
        px = pad + (t[::step] / t_max) * (width - 2 * pad)
        py = height - pad - (y[::step] - y_lo) / (y_hi - y_lo) * (height - 2 * pad)
        return " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(px, py))

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
             'fill="none" stroke="#888"/>']
    first = next(iter(traces.values()))
    parts.append(f'<polyline fill="none" stroke="#888" stroke-dasharray="4 3" '
                 f'points="{pts(first.t, first.r)}"/>')
    for i, (label, tr) in enumerate(traces.items()):
        c = colors[i % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{c}" points="{pts(tr.t, tr.x)}"/>')
        parts.append(f'<text x="{pad + 8}" y="{pad + 16 + 14 * i}" font-size="12" '
                     f'fill="{c}">{label}</text>')
    parts.append(f'<text x="{pad}" y="{height - 12}" font-size="11">0 s</text>')
    parts.append(f'<text x="{width - pad - 40}" y="{height - 12}" font-size="11">'
                 f'{t_max:g} s</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


class _TraceWriter:
    def __init__(self, outdir: Path, cfg: TuneConfig):
        self.outdir = outdir
        self.cfg = cfg
        self.rows: list[dict] = []

    def callback(self, campaign: str) -> Callable:
        def on_experiment(exp, trace):
            name = f"trace_{len(self.rows):03d}.csv"
            write_trace_csv(trace, self.outdir / name)
            self.rows.append({"campaign": campaign, "index": exp.index, "stage": exp.stage,
                              "params": exp.params, "controller": exp.controller.to_dict(),
                              "aborted": exp.aborted, "diverged": exp.diverged,
                              "trace": name})
        return on_experiment

    def finish(self) -> list[dict]:
        for row in self.rows:
            row["metrics"] = trace_metrics(read_trace_csv(self.outdir / row["trace"]), self.cfg)
        return self.rows


def run_campaign(session: PlantSession, outdir, cfg: TuneConfig = TuneConfig(),
                 plant: str = "external", seed: Optional[int] = None, zn: bool = False,
                 echo: Callable[[str], None] = lambda s: None) -> dict:
    """Tune, write every artifact into ``outdir`` and return the report.

    A tuner failure still writes the report (with ``error`` set and the
    experiments run so far) before the :class:`TunerError` propagates.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    writer = _TraceWriter(outdir, cfg)
    report = {"ut_schema": SCHEMA_VERSION, "kind": "campaign_report",
              "tool_version": __version__, "plant": plant, "seed": seed,
              "config": cfg.to_dict(), "pi_lead": None, "zn": None, "error": None}
    result: Optional[PiLeadResult] = None
    failure: Optional[TunerError] = None
    try:
        result = tune_pi_lead(session, cfg, TuneLog(session, cfg, writer.callback("pi_lead")))
        report["pi_lead"] = result.to_dict()
        echo(f"C(s) = {format_tf(result.pi)}")
        echo(f"L(s) = {format_tf(result.lead.tf)}")
        echo(f"achieved M = {result.achieved_M:.4f} after {result.n_experiments} experiments")
        if zn:
            session.reset()
            z: ZnResult = zn_pid(session, cfg, TuneLog(session, cfg, writer.callback("zn")))
            report["zn"] = z.to_dict()
            echo(f"ZN-PID: Ku={z.Ku:.6g} Tu={z.Tu:.6g} Kp={z.Kp:.6g} "
                 f"Ti={z.Ti:.6g} Td={z.Td:.6g}")
    except TunerError as exc:
        failure = exc
        report["error"] = f"{type(exc).__name__}: {exc}"
    report["experiments"] = writer.finish()

    if result is not None:
        write_bode_csv(result.controller, outdir / "bode.csv",
                       1e-2 / result.Ti, 1e4 / result.Ti)
        gain_rows = [r for r in writer.rows if r["stage"] == "gain"]
        pi_row = next((r for r in reversed(gain_rows) if r["params"].get("Kp") == result.Kp),
                      gain_rows[-1])
        ver_row = next(r for r in reversed(writer.rows) if r["stage"] == "verification")
        svg = step_svg({"C": read_trace_csv(outdir / pi_row["trace"]),
                        "C L": read_trace_csv(outdir / ver_row["trace"])})
        (outdir / "step.svg").write_text(svg, encoding="ascii")
        report["files"] = {"bode": "bode.csv", "step": "step.svg",
                           "selected_pi_trace": pi_row["trace"],
                           "verification_trace": ver_row["trace"]}
    (outdir / "report.json").write_text(dumps_report(report), encoding="utf-8")
    if failure is not None:
        raise failure
    return report
