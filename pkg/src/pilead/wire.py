"""Plant sessions over TCP.

Frames are single-key JSON objects, one per line::

    -> {"hello": {"schema": 1}}          <- {"hello": {"schema": 1}}
    -> {"run": {"controller": {...}, "scenario": {...}}}
                                         <- {"chunk": {"t0", "dt", "r", "u", "x", "d", "x_clean"}} ...
                                         <- {"done": {"aborted": false, "diverged": false}}
    -> {"reset": {}}                     <- {"reset": {}}
                                         <- {"err": "bad_frame" | "busy" | message}

The server holds one session at a time. A second client is told ``busy``
and disconnected. Any malformed frame ends the connection with an error
frame. Floats travel as shortest round-trip decimals, so a remote trace is
bit-identical to a local one.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading
from typing import Optional

import numpy as np

from .errors import ProtocolError, TransportError
from .lti import TransferFunction
from .simulation import LocalSession, PlantSpec, ScenarioSpec, Trace

SCHEMA = 1
CHUNK = 1024

log = logging.getLogger(__name__)


def encode(kind: str, body) -> bytes:
    return (json.dumps({kind: body}, separators=(",", ":")) + "\n").encode()


def decode(line: bytes) -> tuple[str, object]:
    try:
        msg = json.loads(line)
    except (ValueError, UnicodeDecodeError):
        raise ProtocolError("bad_frame") from None
    if not isinstance(msg, dict) or len(msg) != 1:
        raise ProtocolError("bad_frame")
    (kind, body), = msg.items()
    return kind, body


def _chunks(trace: Trace):
    n = len(trace)
    for i in range(0, n, CHUNK):
        sl = slice(i, min(i + CHUNK, n))
        body = {"t0": trace.t0 + i * trace.dt, "dt": trace.dt,
                "r": trace.r[sl].tolist(), "u": trace.u[sl].tolist(),
                "x": trace.x[sl].tolist(), "d": trace.d[sl].tolist()}
        if trace.x_clean is not None:
            body["x_clean"] = trace.x_clean[sl].tolist()
        yield encode("chunk", body)


class _Handler(socketserver.StreamRequestHandler):
    server: "PlantServer"

    def handle(self):
        if not self.server.lock.acquire(blocking=False):
            self._send("err", "busy")
            return
        try:
            self._session()
        finally:
            self.server.lock.release()

    def _send(self, kind, body):
        try:
            self.wfile.write(encode(kind, body))
            self.wfile.flush()
        except OSError:
            pass

    def _session(self):
        session = LocalSession(self.server.plant)
        greeted = False
        for line in self.rfile:
            if not line.strip():
                continue
            try:
                kind, body = decode(line)
                if not greeted:
                    if kind != "hello" or not isinstance(body, dict) or body.get("schema") != SCHEMA:
                        raise ProtocolError("bad_frame")
                    greeted = True
                    self._send("hello", {"schema": SCHEMA})
                elif kind == "run":
                    controller, scenario = _parse_run(body)
                    trace = session.run(controller, scenario)
                    for frame in _chunks(trace):
                        self.wfile.write(frame)
                    self._send("done", {"aborted": trace.aborted, "diverged": trace.diverged})
                elif kind == "reset":
                    session.reset()
                    self._send("reset", {})
                else:
                    raise ProtocolError("bad_frame")
            except ProtocolError as exc:
                self._send("err", str(exc))
                return
            except Exception as exc:  # simulation failure: report, then close
                log.warning("run failed: %s", exc)
                self._send("err", f"{type(exc).__name__}: {exc}")
                return


def _parse_run(body) -> tuple[TransferFunction, ScenarioSpec]:
    try:
        return (TransferFunction.from_dict(body["controller"]),
                ScenarioSpec.from_dict(body["scenario"]))
    except (KeyError, TypeError, ValueError):
        raise ProtocolError("bad_frame") from None


class PlantServer(socketserver.ThreadingTCPServer):
    """Serve one simulated plant. ``server_address`` holds the bound port."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, plant: PlantSpec, host: str = "127.0.0.1", port: int = 0):
        self.plant = plant
        self.lock = threading.Lock()
        super().__init__((host, port), _Handler)


def plant_server(plant: PlantSpec, host: str = "127.0.0.1", port: int = 0) -> PlantServer:
    return PlantServer(plant, host, port)


class RemoteSession:
    """PlantSession backed by a plant server."""

    def __init__(self, host: str, port: int, timeout: Optional[float] = 60.0):
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from None
        self._rfile = self._sock.makefile("rb")
        self._send("hello", {"schema": SCHEMA})
        kind, body = self._recv()
        if kind != "hello" or not isinstance(body, dict) or body.get("schema") != SCHEMA:
            self.close()
            raise ProtocolError(f"unexpected handshake {kind!r}")

    def _send(self, kind, body):
        try:
            self._sock.sendall(encode(kind, body))
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from None

    def _recv(self):
        try:
            line = self._rfile.readline()
        except OSError as exc:
            raise TransportError(f"receive failed: {exc}") from None
        if not line:
            raise TransportError("server closed the connection")
        kind, body = decode(line)
        if kind == "err":
            if body == "busy":
                raise TransportError("server is busy with another session")
            raise ProtocolError(str(body))
        return kind, body

    def run(self, controller: TransferFunction, scenario: ScenarioSpec) -> Trace:
        self._send("run", {"controller": controller.to_dict(), "scenario": scenario.to_dict()})
        parts = {k: [] for k in ("r", "u", "x", "d", "x_clean")}
        t0 = dt = None
        while True:
            kind, body = self._recv()
            if kind == "done":
                break
            if kind != "chunk":
                raise ProtocolError(f"unexpected frame {kind!r}")
            if t0 is None:
                t0, dt = body["t0"], body["dt"]
            for k in parts:
                if k in body:
                    parts[k].extend(body[k])
        if t0 is None:
            raise ProtocolError("run produced no samples")
        arrays = {k: np.array(v, dtype=float) for k, v in parts.items()}
        return Trace(dt=dt, t0=t0, r=arrays["r"], u=arrays["u"], x=arrays["x"], d=arrays["d"],
                     x_clean=arrays["x_clean"] if parts["x_clean"] else None,
                     aborted=bool(body.get("aborted", False)),
                     diverged=bool(body.get("diverged", False)))

    def reset(self) -> None:
        self._send("reset", {})
        kind, _ = self._recv()
        if kind != "reset":
            raise ProtocolError(f"unexpected frame {kind!r}")

    def close(self) -> None:
        try:
            self._rfile.close()
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def session_client(host: str, port: int, timeout: Optional[float] = 60.0) -> RemoteSession:
    return RemoteSession(host, port, timeout)
