import copy
import json

import numpy as np
import pytest

from coop_dmpc.reproduction import sync4_path
from coop_dmpc.scenario import ScenarioError, parse_scenario, scenario_from_dict, scenario_to_dict

from factories import double_integrator_document, sync4_document


def test_shipped_four_agent_parameters(sync4):
    assert sync4.ids == [1, 2, 3, 4]
    assert (sync4.T, sync4.N, sync4.steps) == (10, 10, 30)
    assert set(sync4.delta.values()) == {1e-7}
    assert sync4.graph.edges() == [(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)]
    a = sync4.agent(1)
    assert np.array_equal(a.x_upper, [4.1, 4.1, 2.1, 2.1]) and np.array_equal(a.u_upper, [1.1, 1.1])
    assert np.array_equal(a.xt_upper, [4.0, 4.0, 2.0, 2.0]) and np.array_equal(a.ut_upper, [1.0, 1.0])
    assert np.array_equal(sync4.x0[1], [1.5, 0.9, 0, 0])


def test_self_loop_rejected_with_pointer():
    doc = double_integrator_document({1: [0, 0, 0, 0], 2: [1, 1, 0, 0]}, edges=[[1, 2], [1, 1]])
    with pytest.raises(ScenarioError) as info:
        scenario_from_dict(doc)
    assert info.value.pointer == "/graph/edges/1"


def test_crossed_bounds_rejected_with_pointer():
    doc = double_integrator_document({1: [0, 0]})
    doc["agents"][0]["model"] = {"A": [[1, 0], [0, 1]], "B": [[1], [0]], "C": [[1, 0]]}
    doc["agents"][0]["bounds"] = {"x_lower": [-1, 2], "x_upper": [1, 1], "u_lower": [-1], "u_upper": [1]}
    doc["agents"][0]["tightened_bounds"] = {"x_lower": [-0.5, -0.5], "x_upper": [0.5, 0.5],
                                            "u_lower": [-0.5], "u_upper": [0.5]}
    with pytest.raises(ScenarioError) as info:
        scenario_from_dict(doc)
    assert info.value.pointer == "/agents/0/bounds/x_lower/1"


def test_schema_violation_points_at_value():
    doc = sync4_document()
    doc["agents"][2]["x0"] = "near the origin"
    with pytest.raises(ScenarioError) as info:
        scenario_from_dict(doc)
    assert info.value.pointer == "/agents/2/x0"


def test_unknown_key_rejected():
    doc = sync4_document()
    doc["horizn"] = 5
    with pytest.raises(ScenarioError):
        scenario_from_dict(doc)


def test_offset_size_checked():
    doc = double_integrator_document({1: [0, 0, 0, 0], 2: [1, 1, 0, 0]})
    doc["cooperation"] = {"kind": "offset_synchronization", "offsets": {"1": [1.0, 0.0]}}
    with pytest.raises(ScenarioError) as info:
        scenario_from_dict(doc)
    assert info.value.pointer == "/cooperation/offsets/1"


def test_missing_tightened_bounds_rejected():
    doc = sync4_document()
    del doc["agents"][1]["tightened_bounds"]
    with pytest.raises(ScenarioError) as info:
        scenario_from_dict(doc)
    assert info.value.pointer == "/agents/1"


def test_general_lti_with_infinite_bounds():
    doc = double_integrator_document({1: [0.0, 0.0]})
    doc["agents"][0].update(
        model={"A": [[1, 0.1], [0, 1]], "B": [[0], [0.1]], "C": [[1, 0]]},
        bounds={"x_lower": [None, -1], "x_upper": [None, 1], "u_lower": [-1], "u_upper": [1]},
        tightened_bounds={"x_lower": [-5, -0.9], "x_upper": [5, 0.9], "u_lower": [-0.9], "u_upper": [0.9]},
        Q=[1.0, 2.0], R=0.5)
    sc = scenario_from_dict(doc)
    a = sc.agent(1)
    assert np.isinf(a.x_upper[0]) and a.p == 1
    assert np.array_equal(a.Q, np.diag([1.0, 2.0])) and np.array_equal(a.R, [[0.5]])


def test_per_agent_delta_and_solver_settings():
    doc = double_integrator_document({1: [0, 0, 0, 0], 2: [1, 1, 0, 0]})
    doc["delta"] = {"1": 1e-3, "2": 1e-4}
    doc["solver"] = {"eps_abs": 1e-9, "max_iter": 500}
    sc = scenario_from_dict(doc)
    assert sc.delta == {1: 1e-3, 2: 1e-4}
    assert sc.solver.eps_abs == 1e-9 and sc.solver.max_iter == 500


def test_dict_roundtrip_and_fingerprint(sync4):
    again = scenario_from_dict(scenario_to_dict(sync4))
    assert again.fingerprint() == sync4.fingerprint()
    doc = sync4_document()
    doc["delta"] = 2e-7
    assert scenario_from_dict(doc).fingerprint() != sync4.fingerprint()


def test_parse_reports_bad_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ScenarioError):
        parse_scenario(path)


def test_parse_shipped_file_matches_document():
    assert json.loads(sync4_path().read_text())["name"] == "sync4"
