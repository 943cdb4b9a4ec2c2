import csv

import numpy as np
import pytest

from coop_dmpc.diagnostics import SimTrace, lyapunov_value
from coop_dmpc.export import PHASE_PLOT, TIME_SERIES, csv_header, export_trace_csv, read_trace_csv, render_svg


def test_one_row_per_agent_and_step(tmp_path, sync4_trace):
    path = export_trace_csv(sync4_trace, tmp_path / "t.csv")
    rows = read_trace_csv(path)
    assert len(rows) == 31 * 4
    assert rows[0]["t"] == 0 and rows[0]["agent_id"] == 1 and rows[0]["y[0]"] == 1.5
    assert path.read_bytes().count(b"\r") == 0


def test_csv_values_round_trip_exactly(tmp_path, sync4_trace):
    rows = read_trace_csv(export_trace_csv(sync4_trace, tmp_path / "t.csv"))
    by_key = {(r["t"], r["agent_id"]): r for r in rows}
    for rec in sync4_trace.records[::7]:
        V = lyapunov_value(sync4_trace, rec.t)
        for i in rec.agents:
            row = by_key[(rec.t, i)]
            assert [row[f"x[{k}]"] for k in range(4)] == rec.x[i].tolist()
            assert [row[f"u[{k}]"] for k in range(2)] == rec.u[i].tolist()
            assert row["J_tr"] == rec.results[i].breakdown["J_tr"]
            assert row["V_total"] == V


def test_empty_trace_is_header_only(tmp_path, sync4_trace):
    empty = SimTrace([], sync4_trace.models, sync4_trace.cooperation, 10, 10)
    path = export_trace_csv(empty, tmp_path / "e.csv")
    with path.open() as fh:
        lines = list(csv.reader(fh))
    assert lines == [csv_header(empty)]
    assert lines[0][:3] == ["t", "agent_id", "x[0]"] and lines[0][-1] == "V_total"


def _single_step(trace):
    return SimTrace(trace.records[:1], trace.models, trace.cooperation, trace.T, trace.N)


@pytest.mark.parametrize("kind, comps", [(TIME_SERIES, [0]), (PHASE_PLOT, [0, 1])])
def test_svg_rendering(tmp_path, sync4_trace, kind, comps):
    a = render_svg(sync4_trace, kind, comps, tmp_path / "a.svg")
    b = render_svg(sync4_trace, kind, comps, tmp_path / "b.svg")
    text = a.read_text()
    assert text.lstrip().startswith("<?xml") and "</svg>" in text
    assert a.read_bytes() == b.read_bytes()
    render_svg(_single_step(sync4_trace), kind, comps, tmp_path / "one.svg")


def test_svg_rejects_bad_components(tmp_path, sync4_trace):
    with pytest.raises(ValueError):
        render_svg(sync4_trace, TIME_SERIES, [7], tmp_path / "x.svg")
    with pytest.raises(ValueError):
        render_svg(sync4_trace, PHASE_PLOT, [0], tmp_path / "x.svg")
    with pytest.raises(ValueError):
        render_svg(sync4_trace, "histogram", [0], tmp_path / "x.svg")
