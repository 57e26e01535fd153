import json

import numpy as np
import pytest

from pilead import io
from pilead.io import FileFormatError
from pilead.lti import TransferFunction as TF, make_pi
from pilead.simulation import (Disturbance, ScenarioSpec, catalog, make_session,
                               simulate_closed_loop)
from pilead.tuner import TuneConfig


@pytest.fixture(scope="module")
def noisy_trace():
    plant = catalog("vcm_like", {"seed": 4})
    sc = ScenarioSpec(x_ref=0.01, t_end=0.5, disturbance=Disturbance(0.2, 0.3, -1.0))
    return make_session(plant).run(make_pi(56.23, 0.451), sc)


def test_csv_round_trip_is_byte_identical(tmp_path, noisy_trace):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    io.write_trace_csv(noisy_trace, a)
    back = io.read_trace_csv(a)
    io.write_trace_csv(back, b)
    assert a.read_bytes() == b.read_bytes()
    assert b"\r" not in a.read_bytes()
    assert a.read_text().splitlines()[0] == "t,r,u,x,d,x_clean"
    assert back.dt == noisy_trace.dt and len(back) == len(noisy_trace)
    assert np.allclose(back.x, noisy_trace.x, rtol=1e-8, atol=0)


def test_csv_without_clean_column(tmp_path):
    tr = simulate_closed_loop(catalog("second_order_type_one"), make_pi(1, 1),
                              ScenarioSpec(t_end=0.2, dt=1e-3))
    p = tmp_path / "t.csv"
    io.write_trace_csv(tr, p)
    back = io.read_trace_csv(p)
    assert back.x_clean is None or np.allclose(back.x_clean, tr.x_clean, rtol=1e-8)
    io.write_trace_csv(back, tmp_path / "u.csv")
    assert p.read_bytes() == (tmp_path / "u.csv").read_bytes()


def _lines(text):
    return text.splitlines(keepends=True)


@pytest.mark.parametrize("mutate,line,needle", [
    (lambda L: ["t,r,u,x,d\n"] + L[1:], 1, "header"),
    (lambda L: L[:4] + ["0.003,1,2,3\n"] + L[5:], 5, "fields"),
    (lambda L: L[:6] + ["0.005,1,abc,3,0,0\n"] + L[7:], 7, "abc"),
    (lambda L: L[:3] + L[4:], 3, "uniformly"),
    (lambda L: L[:1], 1, "two samples"),
    (lambda L: [], 1, "empty"),
])
def test_csv_errors_are_line_precise(tmp_path, mutate, line, needle):
    tr = simulate_closed_loop(catalog("second_order_type_one"), make_pi(1, 1),
                              ScenarioSpec(t_end=0.05, dt=1e-3))
    p = tmp_path / "bad.csv"
    p.write_text("".join(mutate(_lines(io.trace_to_csv(tr)))))
    with pytest.raises(FileFormatError) as exc:
        io.read_trace_csv(p)
    assert exc.value.line == line
    assert str(exc.value).startswith(f"{p}:{line}:")
    assert needle in str(exc.value)


def test_documents_round_trip(tmp_path):
    plant = catalog("delayed_type_one", {"seed": 3})
    io.save_plant(plant, tmp_path / "p.json")
    assert io.load_plant(tmp_path / "p.json") == plant
    doc = json.loads((tmp_path / "p.json").read_text())
    assert doc["ut_schema"] == 1 and doc["kind"] == "plant"

    sc = ScenarioSpec(x_ref=0.01, t_end=3.0, disturbance=Disturbance(1.0, 1.5, -1.0),
                      gravity_feedforward=1.95)
    io.save_scenario(sc, tmp_path / "s.json")
    assert io.load_scenario(tmp_path / "s.json") == sc

    C = TF((4.3245, 153.45, 450.0), (0.000961, 0.31, 0.0))
    io.save_controller(C, tmp_path / "c.json")
    assert io.load_controller(tmp_path / "c.json") == C

    cfg = TuneConfig(max_experiments=120, M_band=(0.31, 0.39))
    io.save_tune_config(cfg, tmp_path / "t.json")
    assert io.load_tune_config(tmp_path / "t.json") == cfg


def test_document_errors(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{\n  "ut_schema": 1,\n  "kind": "plant",\n  oops\n}\n')
    with pytest.raises(FileFormatError) as exc:
        io.load_plant(p)
    assert exc.value.line == 4

    p.write_text(json.dumps({"ut_schema": 2, "kind": "plant"}))
    with pytest.raises(FileFormatError, match="ut_schema"):
        io.load_plant(p)

    io.save_scenario(ScenarioSpec(), p)
    with pytest.raises(FileFormatError, match="expected a plant document"):
        io.load_plant(p)

    p.write_text(json.dumps({"ut_schema": 1, "kind": "controller", "num": [1.0]}))
    with pytest.raises(FileFormatError, match="invalid controller"):
        io.load_controller(p)
