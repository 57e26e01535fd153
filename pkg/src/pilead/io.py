"""Trace CSV files and versioned JSON documents."""

from __future__ import annotations

import csv
import io as _io
import json
import math
from pathlib import Path
from typing import Union

import numpy as np

from .errors import PiLeadError
from .lti import TransferFunction
from .simulation import PlantSpec, ScenarioSpec, Trace

SCHEMA_VERSION = 1
CSV_HEADER = ("t", "r", "u", "x", "d", "x_clean")

PathLike = Union[str, Path]


class FileFormatError(PiLeadError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def trace_to_csv(trace: Trace) -> str:
    cols = [trace.t, trace.r, trace.u, trace.x, trace.d,
            trace.x_clean if trace.x_clean is not None else np.full(len(trace), math.nan)]
    lines = [",".join(CSV_HEADER)]
    lines.extend(",".join(map(_fmt, row)) for row in zip(*(c.tolist() for c in cols)))
    return "\n".join(lines) + "\n"


def write_trace_csv(trace: Trace, path: PathLike) -> None:
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        fh.write(trace_to_csv(trace))


def read_trace_csv(path: PathLike) -> Trace:
    """Parse a trace file; errors name the offending line."""
    try:
        text = Path(path).read_text(encoding="ascii")
    except UnicodeDecodeError as exc:
        raise FileFormatError(path, 1, f"not an ASCII trace file ({exc.reason})") from None
    return trace_from_csv(text, str(path))


def trace_from_csv(text: str, name: str = "<trace>") -> Trace:
    first, _, body = text.partition("\n")
    if not first:
        raise FileFormatError(name, 1, "empty file")
    if tuple(h.strip() for h in first.split(",")) != CSV_HEADER:
        raise FileFormatError(name, 1, f"expected header {','.join(CSV_HEADER)}")
    if not body.strip():
        raise FileFormatError(name, 1, "a trace needs at least two samples")
    try:
        data = np.loadtxt(_io.StringIO(body), delimiter=",", ndmin=2)
        if data.shape[1] != len(CSV_HEADER):
            raise ValueError
    except ValueError:
        data = _parse_rows(body, name)
    if len(data) < 2:
        raise FileFormatError(name, len(data) + 1, "a trace needs at least two samples")
    t = data[:, 0]
    n = len(t)
    dt = float(f"{(t[-1] - t[0]) / (n - 1):.12g}")
    if dt <= 0:
        raise FileFormatError(name, 3, "time column must increase")
    steps = np.diff(t)
    # 9 significant digits leave at most ~1e-8 relative error on each stamp
    tol = 0.01 * dt + 1e-8 * float(np.max(np.abs(t)))
    bad = np.flatnonzero(np.abs(steps - dt) > tol)
    if bad.size:
        raise FileFormatError(name, int(bad[0]) + 3, "samples are not uniformly spaced")
    x_clean = data[:, 5]
    return Trace(dt=dt, t0=float(t[0]), r=data[:, 1], u=data[:, 2], x=data[:, 3],
                 d=data[:, 4], x_clean=None if np.all(np.isnan(x_clean)) else x_clean)


def _parse_rows(body: str, name: str) -> np.ndarray:
    # slow path, only taken to point at the offending line
    rows = []
    for lineno, row in enumerate(csv.reader(_io.StringIO(body)), start=2):
        if len(row) != len(CSV_HEADER):
            raise FileFormatError(name, lineno,
                                  f"expected {len(CSV_HEADER)} fields, got {len(row)}")
        try:
            rows.append([float(v) for v in row])
        except ValueError as exc:
            raise FileFormatError(name, lineno, str(exc)) from None
    return np.array(rows).reshape(-1, len(CSV_HEADER))


def dump_document(kind: str, body: dict) -> str:
    doc = {"ut_schema": SCHEMA_VERSION, "kind": kind, **body}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def save_document(path: PathLike, kind: str, body: dict) -> None:
    Path(path).write_text(dump_document(kind, body), encoding="utf-8")


def load_document(path: PathLike, kind: str | None = None) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FileFormatError(path, exc.lineno, exc.msg) from None
    if not isinstance(doc, dict):
        raise FileFormatError(path, 1, "top level must be a JSON object")
    if doc.get("ut_schema") != SCHEMA_VERSION:
        raise FileFormatError(path, 1, f"unsupported ut_schema {doc.get('ut_schema')!r}")
    if kind is not None and doc.get("kind", kind) != kind:
        raise FileFormatError(path, 1, f"expected a {kind} document, got {doc.get('kind')!r}")
    return doc


def _body(doc: dict) -> dict:
    return {k: v for k, v in doc.items() if k not in ("ut_schema", "kind")}


def save_plant(plant: PlantSpec, path: PathLike) -> None:
    save_document(path, "plant", plant.to_dict())


def load_plant(path: PathLike) -> PlantSpec:
    doc = load_document(path, "plant")
    try:
        return PlantSpec.from_dict(_body(doc))
    except (KeyError, TypeError, ValueError, PiLeadError) as exc:
        raise FileFormatError(path, 1, f"invalid plant: {exc}") from None


def save_scenario(scenario: ScenarioSpec, path: PathLike) -> None:
    save_document(path, "scenario", scenario.to_dict())


def load_scenario(path: PathLike) -> ScenarioSpec:
    doc = load_document(path, "scenario")
    try:
        return ScenarioSpec.from_dict(_body(doc))
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(path, 1, f"invalid scenario: {exc}") from None


def save_controller(tf: TransferFunction, path: PathLike) -> None:
    save_document(path, "controller", tf.to_dict())


def load_controller(path: PathLike) -> TransferFunction:
    doc = load_document(path, "controller")
    try:
        return TransferFunction.from_dict(_body(doc))
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(path, 1, f"invalid controller: {exc}") from None


def save_tune_config(cfg, path: PathLike) -> None:
    save_document(path, "tune_config", cfg.to_dict())


def load_tune_config(path: PathLike):
    from .tuner import TuneConfig

    doc = load_document(path, "tune_config")
    try:
        return TuneConfig.from_dict(_body(doc))
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(path, 1, f"invalid tune config: {exc}") from None
