"""Scenario description, JSON schema and (de)serialization."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema
import numpy as np

from .agent import AgentModel, double_integrator_matrices
from .cooperation import CooperationCostSpec, Graph
from .qp import QpSettings

_NUM = {"type": "number"}
_VEC = {"type": "array", "items": {"type": ["number", "null"]}, "minItems": 1}
_MAT = {"type": "array", "items": {"type": "array", "items": _NUM, "minItems": 1}, "minItems": 1}
_SPD = {"oneOf": [_MAT, {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                  {"type": "number", "exclusiveMinimum": 0}]}

_BOX = {
    "oneOf": [
        {"type": "object", "additionalProperties": False,
         "required": ["position", "velocity", "input"],
         "properties": {"position": _NUM, "velocity": _NUM, "input": _NUM}},
        {"type": "object", "additionalProperties": False,
         "required": ["x_lower", "x_upper", "u_lower", "u_upper"],
         "properties": {"x_lower": _VEC, "x_upper": _VEC, "u_lower": _VEC, "u_upper": _VEC}},
    ]
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["agents", "graph", "horizon", "period", "delta"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "agents": {
            "type": "array", "minItems": 1,
            "items": {
                "type": "object", "additionalProperties": False,
                "required": ["id", "model", "x0"],
                "properties": {
                    "id": {"type": "integer"},
                    "model": {"oneOf": [
                        {"const": "double_integrator"},
                        {"type": "object", "additionalProperties": False, "required": ["A", "B", "C"],
                         "properties": {"A": _MAT, "B": _MAT, "C": _MAT, "D": _MAT}},
                    ]},
                    "x0": {"type": "array", "items": _NUM, "minItems": 1},
                    "bounds": _BOX,
                    "tightened_bounds": _BOX,
                    "Q": _SPD,
                    "R": _SPD,
                },
            },
        },
        "graph": {"oneOf": [
            {"const": "all_to_all"},
            {"type": "object", "additionalProperties": False, "required": ["edges"],
             "properties": {"edges": {"type": "array", "items": {
                 "type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2}}}},
        ]},
        "horizon": {"type": "integer", "minimum": 1},
        "period": {"type": "integer", "minimum": 1},
        "delta": {"oneOf": [
            {"type": "number", "exclusiveMinimum": 0},
            {"type": "object", "additionalProperties": {"type": "number", "exclusiveMinimum": 0}},
        ]},
        "cooperation": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["synchronization", "offset_synchronization"]},
                "weights": {"type": "array", "items": {
                    "type": "object", "additionalProperties": False, "required": ["edge", "w"],
                    "properties": {"edge": {"type": "array", "items": {"type": "integer"},
                                            "minItems": 2, "maxItems": 2},
                                   "w": {"type": "number", "minimum": 0}}}},
                "offsets": {"type": "object", "additionalProperties": {"type": "array", "items": _NUM}},
            },
        },
        "steps": {"type": "integer", "minimum": 0},
        "solver": {
            "type": "object", "additionalProperties": False,
            "properties": {"eps_abs": {"type": "number", "exclusiveMinimum": 0},
                           "eps_rel": {"type": "number", "minimum": 0},
                           "max_iter": {"type": "integer", "minimum": 1},
                           "rho": {"type": "number", "exclusiveMinimum": 0}},
        },
        "seed": {"type": "integer"},
    },
}


class ScenarioError(ValueError):
    """Invalid scenario; ``pointer`` is a JSON pointer to the offending value."""

    def __init__(self, message: str, pointer: str = ""):
        self.pointer = pointer
        super().__init__(f"{pointer or '/'}: {message}")


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


@dataclass
class Scenario:
    agents: list[AgentModel]
    graph: Graph
    cooperation: CooperationCostSpec
    T: int
    N: int
    delta: dict[int, float]
    x0: dict[int, np.ndarray]
    steps: int = 30
    solver: QpSettings = field(default_factory=QpSettings)
    name: str = "scenario"
    source: dict | None = None

    def __post_init__(self):
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate agent ids", "/agents")
        if set(ids) != set(self.graph.vertices):
            raise ScenarioError("graph vertices differ from agent ids", "/graph")
        if len({a.p for a in self.agents}) > 1:
            raise ScenarioError("agents must share the output dimension", "/agents")
        if self.T < 1 or self.N < 1:
            raise ScenarioError("T and N must be positive", "/period")
        self.delta = {int(i): float(d) for i, d in self.delta.items()}
        self.x0 = {int(i): np.asarray(x, dtype=float).ravel() for i, x in self.x0.items()}
        for a in self.agents:
            if self.delta.get(a.id, 0.0) <= 0:
                raise ScenarioError(f"delta for agent {a.id} must be positive", "/delta")
            if a.id in self.x0 and self.x0[a.id].size != a.n:
                raise ScenarioError(f"x0 for agent {a.id} has wrong size", "/agents")

    @property
    def ids(self) -> list[int]:
        return sorted(a.id for a in self.agents)

    def agent(self, agent_id: int) -> AgentModel:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)

    def with_steps(self, steps: int) -> "Scenario":
        return replace(self, steps=int(steps))

    def to_dict(self) -> dict:
        return scenario_to_dict(self)

    def fingerprint(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _spd(value, size: int) -> np.ndarray | None:
    if value is None:
        return None
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(size)
    if arr.ndim == 1:
        return np.diag(arr)
    return arr


def _box(b: dict, n: int, q: int, ptr: str):
    if "position" in b:
        if n != 4 or q != 2:
            raise ScenarioError("position/velocity/input bounds need a double integrator", ptr)
        xb = np.array([b["position"]] * 2 + [b["velocity"]] * 2, dtype=float)
        ub = np.full(2, float(b["input"]))
        return -xb, xb, -ub, ub
    out = []
    for key, size in (("x_lower", n), ("x_upper", n), ("u_lower", q), ("u_upper", q)):
        v = b[key]
        if len(v) != size:
            raise ScenarioError(f"expected {size} entries", f"{ptr}/{key}")
        inf = -np.inf if key.endswith("lower") else np.inf
        out.append(np.array([inf if e is None else e for e in v], dtype=float))
    for lo, hi in ((0, 1), (2, 3)):
        bad = np.flatnonzero(out[lo] > out[hi])
        if bad.size:
            name = ("x_lower", "u_lower")[lo // 2]
            raise ScenarioError("lower bound exceeds upper bound", f"{ptr}/{name}/{int(bad[0])}")
    return tuple(out)


def _model(entry: dict, idx: int) -> AgentModel:
    ptr = f"/agents/{idx}"
    m = entry["model"]
    if m == "double_integrator":
        A, B, C, D = double_integrator_matrices()
    else:
        A, B, C = (np.asarray(m[k], dtype=float) for k in ("A", "B", "C"))
        D = np.asarray(m["D"], dtype=float) if "D" in m else np.zeros((C.shape[0], B.shape[1]))
    n, q = A.shape[0], B.shape[1]
    nominal = _box(entry.get("bounds", {"position": 4.1, "velocity": 2.1, "input": 1.1}), n, q, ptr + "/bounds")
    if "tightened_bounds" not in entry:
        raise ScenarioError("tightened_bounds required", ptr)
    tight = _box(entry["tightened_bounds"], n, q, ptr + "/tightened_bounds")
    try:
        return AgentModel(int(entry["id"]), A, B, C, D, *nominal, *tight,
                          _spd(entry.get("Q"), n), _spd(entry.get("R"), q))
    except ValueError as exc:
        raise ScenarioError(str(exc), ptr) from exc


def scenario_from_dict(doc: dict) -> Scenario:
    """Validate a scenario document and build a :class:`Scenario`."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ScenarioError(err.message, _pointer(err.absolute_path))
    doc = copy.deepcopy(doc)
    agents = [_model(a, k) for k, a in enumerate(doc["agents"])]
    ids = [a.id for a in agents]
    for k, a in enumerate(doc["agents"]):
        if len(a["x0"]) != agents[k].n:
            raise ScenarioError(f"expected {agents[k].n} entries", f"/agents/{k}/x0")
    if doc["graph"] == "all_to_all":
        graph = Graph.all_to_all(ids)
    else:
        for k, (i, j) in enumerate(doc["graph"]["edges"]):
            if i == j:
                raise ScenarioError(f"self-loop on agent {i}", f"/graph/edges/{k}")
            if i not in ids or j not in ids:
                raise ScenarioError("edge references unknown agent", f"/graph/edges/{k}")
        graph = Graph(ids, [tuple(e) for e in doc["graph"]["edges"]])
    coop = doc.get("cooperation", {})
    for i, o in coop.get("offsets", {}).items():
        if int(i) not in ids:
            raise ScenarioError(f"offset for unknown agent {i}", f"/cooperation/offsets/{i}")
        if len(o) != agents[0].p:
            raise ScenarioError(f"expected {agents[0].p} entries", f"/cooperation/offsets/{i}")
    try:
        spec = CooperationCostSpec(coop.get("kind", "synchronization"),
                                   {tuple(w["edge"]): w["w"] for w in coop.get("weights", [])},
                                   {int(i): o for i, o in coop.get("offsets", {}).items()})
    except ValueError as exc:
        raise ScenarioError(str(exc), "/cooperation") from exc
    d = doc["delta"]
    if isinstance(d, dict):
        missing = [i for i in ids if str(i) not in d]
        if missing:
            raise ScenarioError(f"no delta for agents {missing}", "/delta")
        delta = {i: float(d[str(i)]) for i in ids}
    else:
        delta = {i: float(d) for i in ids}
    settings = QpSettings().updated(**doc.get("solver", {}))
    return Scenario(agents, graph, spec, int(doc["period"]), int(doc["horizon"]), delta,
                    {a.id: np.array(e["x0"], dtype=float) for a, e in zip(agents, doc["agents"])},
                    int(doc.get("steps", 30)), settings, doc.get("name", "scenario"), doc)


def parse_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc}") from exc
    return scenario_from_dict(doc)


def _bound_list(v: np.ndarray) -> list:
    return [None if not np.isfinite(e) else float(e) for e in v]


def scenario_to_dict(s: Scenario) -> dict:
    """Explicit (fully expanded) document; round-trips through :func:`scenario_from_dict`."""
    agents = []
    for a in sorted(s.agents, key=lambda m: m.id):
        agents.append({
            "id": a.id,
            "model": {"A": a.A.tolist(), "B": a.B.tolist(), "C": a.C.tolist(), "D": a.D.tolist()},
            "x0": s.x0[a.id].tolist() if a.id in s.x0 else [0.0] * a.n,
            "bounds": {"x_lower": _bound_list(a.x_lower), "x_upper": _bound_list(a.x_upper),
                       "u_lower": _bound_list(a.u_lower), "u_upper": _bound_list(a.u_upper)},
            "tightened_bounds": {"x_lower": a.xt_lower.tolist(), "x_upper": a.xt_upper.tolist(),
                                 "u_lower": a.ut_lower.tolist(), "u_upper": a.ut_upper.tolist()},
            "Q": a.Q.tolist(), "R": a.R.tolist(),
        })
    coop = {"kind": s.cooperation.kind,
            "weights": [{"edge": sorted(e), "w": w} for e, w in sorted(s.cooperation.weights.items(),
                                                                       key=lambda kv: sorted(kv[0]))],
            "offsets": {str(i): o.tolist() for i, o in sorted(s.cooperation.offsets.items())}}
    st = s.solver
    return {"name": s.name, "agents": agents, "graph": {"edges": [list(e) for e in s.graph.edges()]},
            "horizon": s.N, "period": s.T, "delta": {str(i): d for i, d in sorted(s.delta.items())},
            "cooperation": coop, "steps": s.steps,
            "solver": {"eps_abs": st.eps_abs, "eps_rel": st.eps_rel, "max_iter": st.max_iter, "rho": st.rho}}
