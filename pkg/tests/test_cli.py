import json
import logging
import shutil

import pytest

from coop_dmpc.cli import EXIT_DIAGNOSTIC, EXIT_INFEASIBLE, EXIT_INVALID, EXIT_OK, main
from coop_dmpc.export import read_trace_csv
from coop_dmpc.reproduction import sync4_path

from factories import double_integrator_document


def write(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def small_doc(**kw):
    return double_integrator_document({1: [1.0, 0.0, 0, 0], 2: [0.0, 1.0, 0, 0]}, T=4, N=4, steps=5, **kw)


def test_run_writes_outputs(tmp_path, capsys):
    scen = write(tmp_path, "s.json", small_doc())
    out = tmp_path / "out"
    assert main(["run", "--scenario", scen, "--out-dir", str(out), "--dump-qp"]) == EXIT_OK
    assert "status                PASS" in capsys.readouterr().out
    assert len(read_trace_csv(out / "trace.csv")) == 6 * 2
    report = json.loads((out / "report.json").read_text())
    assert report["passed"] and report["steps"] == 5
    assert len(json.loads((out / "qp_dump.json").read_text())) == 12


def test_run_steps_skip_and_order(tmp_path):
    scen = write(tmp_path, "s.json", small_doc())
    out = tmp_path / "out"
    assert main(["run", "--scenario", scen, "--out-dir", str(out), "--steps", "3", "--skip", "2:1",
                 "--order", "2,1"]) == EXIT_OK
    trace = json.loads((out / "trace.json").read_text())
    assert len(trace["records"]) == 4
    assert trace["records"][1]["results"]["2"]["mode"] == "track"
    assert trace["records"][2]["order"] == [2, 1]


def test_invalid_scenario_exit_code(tmp_path, capsys):
    scen = write(tmp_path, "bad.json", small_doc(edges=[[1, 1]]))
    assert main(["check", "--scenario", scen]) == EXIT_INVALID
    assert "/graph/edges/0" in capsys.readouterr().err
    assert main(["run", "--scenario", scen, "--out-dir", str(tmp_path / "o")]) == EXIT_INVALID


def test_check_accepts_shipped_scenario(capsys):
    assert main(["check", "--scenario", str(sync4_path())]) == EXIT_OK
    assert "sync4" in capsys.readouterr().out


def test_infeasible_scenario_exit_code(tmp_path):
    doc = double_integrator_document({1: [10.0, 10.0, 0, 0]}, steps=2)
    assert main(["run", "--scenario", write(tmp_path, "far.json", doc), "--out-dir", str(tmp_path)]) \
        == EXIT_INFEASIBLE


def test_plot_from_saved_trace(tmp_path):
    scen = write(tmp_path, "s.json", small_doc())
    main(["run", "--scenario", scen, "--out-dir", str(tmp_path)])
    assert main(["plot", "--trace", str(tmp_path / "trace.json"), "--kind", "phase_plot",
                 "--out-dir", str(tmp_path / "fig")]) == EXIT_OK
    assert (tmp_path / "fig" / "phase_plot.svg").exists()
    assert main(["plot", "--trace", str(tmp_path / "trace.json"), "--components", "9",
                 "--out-dir", str(tmp_path / "fig")]) == EXIT_INVALID
    assert main(["plot", "--trace", str(tmp_path / "missing.json")]) == EXIT_INVALID


def test_batch_runs_every_file(tmp_path, capsys):
    batch = tmp_path / "batch"
    batch.mkdir()
    write(batch, "a.json", small_doc())
    write(batch, "b.json", small_doc(edges=[[1, 1]]))
    assert main(["run", "--batch", str(batch), "--out-dir", str(tmp_path / "out")]) == EXIT_INVALID
    text = capsys.readouterr().out
    assert "a.json: exit 0" in text and "b.json: exit 2" in text
    assert (tmp_path / "out" / "a" / "trace.csv").exists()


def test_reproduction_command(tmp_path):
    out = tmp_path / "repro"
    code = main(["repro-paper", "--out-dir", str(out)])
    lines = (out / "acceptance.txt").read_text().splitlines()
    assert len(lines) == 9
    failed = [line for line in lines if line.startswith("[FAIL]")]
    assert code == (EXIT_DIAGNOSTIC if failed else EXIT_OK)
    for name in ("trace.json", "trace.csv", "first_output.svg", "first_two_outputs.svg"):
        assert (out / name).exists()


@pytest.mark.parametrize("name, level", [("error", logging.ERROR), ("debug", logging.DEBUG), ("info", logging.INFO)])
def test_log_level_from_environment(monkeypatch, name, level):
    monkeypatch.setenv("COOP_DMPC_LOG", name)
    assert main(["check", "--scenario", str(sync4_path())]) == EXIT_OK
    assert logging.getLogger("coop_dmpc").level == level


def test_console_script_installed():
    assert shutil.which("coop-dmpc") is not None
