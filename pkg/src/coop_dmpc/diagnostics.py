"""Closed-loop trace and the checks computed from it.

Everything here is recomputed from trace data (applied inputs, predicted input
sequences and references); nothing is taken from solver internals except for
the cross-check against the reported cost breakdowns.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .agent import AgentModel, check_constraints, constraint_margins, validate_admissible
from .cooperation import CooperationCostSpec, Graph, eval_global_cost
from .local_mpc import MODE_INIT, LocalSolveResult, candidate_residuals, candidate_shift, tracking_cost
from .trajectory import shifted_distance


@dataclass
class StepRecord:
    """Everything that happened at one timestep t."""

    t: int
    order: list[int]
    x: dict[int, np.ndarray]
    u: dict[int, np.ndarray]
    y: dict[int, np.ndarray]
    results: dict[int, LocalSolveResult]
    edges: list[tuple[int, int]]
    delta: dict[int, float]
    # (sender, recipients) in broadcast order
    messages: list[tuple[int, tuple[int, ...]]] = field(default_factory=list)
    # receiver -> neighbor -> (tag, timestep the trajectory was computed at)
    mailbox_tags: dict[int, dict[int, tuple[str, int]]] = field(default_factory=dict)

    @property
    def agents(self) -> list[int]:
        return sorted(self.x)

    def mode(self, i: int) -> str:
        return self.results[i].mode

    def graph(self) -> Graph:
        return Graph(self.agents, self.edges)

    def to_dict(self) -> dict:
        return {
            "t": self.t, "order": list(self.order),
            "x": {str(i): v.tolist() for i, v in self.x.items()},
            "u": {str(i): v.tolist() for i, v in self.u.items()},
            "y": {str(i): v.tolist() for i, v in self.y.items()},
            "results": {str(i): r.to_dict() for i, r in self.results.items()},
            "edges": [list(e) for e in self.edges],
            "delta": {str(i): d for i, d in self.delta.items()},
            "messages": [[s, list(r)] for s, r in self.messages],
            "mailbox_tags": {str(i): {str(j): list(v) for j, v in m.items()} for i, m in self.mailbox_tags.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        arr = lambda m: {int(i): np.array(v, dtype=float) for i, v in m.items()}  # noqa: E731
        return cls(
            d["t"], list(d["order"]), arr(d["x"]), arr(d["u"]), arr(d["y"]),
            {int(i): LocalSolveResult.from_dict(r) for i, r in d["results"].items()},
            [tuple(e) for e in d["edges"]], {int(i): float(v) for i, v in d["delta"].items()},
            [(s, tuple(r)) for s, r in d["messages"]],
            {int(i): {int(j): (v[0], int(v[1])) for j, v in m.items()} for i, m in d["mailbox_tags"].items()},
        )


@dataclass
class SimTrace:
    records: list[StepRecord]
    models: dict[int, AgentModel]
    cooperation: CooperationCostSpec
    T: int
    N: int
    fingerprint: str = ""
    scenario: dict | None = None

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, t: int) -> StepRecord:
        rec = self.records[t]
        if rec.t != t:
            raise IndexError(f"trace is not contiguous at t={t}")
        return rec

    @property
    def times(self) -> list[int]:
        return [r.t for r in self.records]

    def validate(self) -> None:
        for k, rec in enumerate(self.records):
            if rec.t != k:
                raise ValueError(f"trace timesteps not contiguous at index {k}")
            unknown = set(rec.x) - set(self.models)
            if unknown:
                raise ValueError(f"unknown agents {sorted(unknown)} at t={rec.t}")

    def to_dict(self) -> dict:
        return {
            "fingerprint": self.fingerprint, "T": self.T, "N": self.N,
            "cooperation": {"kind": self.cooperation.kind,
                            "weights": [[sorted(e), w] for e, w in self.cooperation.weights.items()],
                            "offsets": {str(i): o.tolist() for i, o in self.cooperation.offsets.items()},
                            "default_weight": self.cooperation.default_weight},
            "models": {str(i): _model_to_dict(m) for i, m in self.models.items()},
            "scenario": self.scenario,
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimTrace":
        c = d["cooperation"]
        spec = CooperationCostSpec(c["kind"], {tuple(e): w for e, w in c["weights"]},
                                   {int(i): o for i, o in c["offsets"].items()}, c["default_weight"])
        trace = cls([StepRecord.from_dict(r) for r in d["records"]],
                    {int(i): _model_from_dict(int(i), m) for i, m in d["models"].items()},
                    spec, d["T"], d["N"], d.get("fingerprint", ""), d.get("scenario"))
        trace.validate()
        return trace

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "SimTrace":
        return cls.from_dict(json.loads(Path(path).read_text()))


_MODEL_FIELDS = ("A", "B", "C", "D", "x_lower", "x_upper", "u_lower", "u_upper",
                 "xt_lower", "xt_upper", "ut_lower", "ut_upper", "Q", "R")


def _model_to_dict(m: AgentModel) -> dict:
    out = {}
    for name in _MODEL_FIELDS:
        v = getattr(m, name)
        out[name] = [float(e) if np.isfinite(e) else None for e in v] if v.ndim == 1 else v.tolist()
    return out


def _model_from_dict(agent_id: int, d: dict) -> AgentModel:
    vals = {}
    for name in _MODEL_FIELDS:
        v = np.array([np.nan if e is None else e for e in d[name]] if name.endswith(("lower", "upper")) else d[name],
                     dtype=float)
        if name in ("x_lower", "u_lower"):
            v = np.where(np.isnan(v), -np.inf, v)
        elif name in ("x_upper", "u_upper"):
            v = np.where(np.isnan(v), np.inf, v)
        vals[name] = v
    return AgentModel(agent_id, **vals)


def rollout(model: AgentModel, x0, u: np.ndarray) -> np.ndarray:
    x = np.empty((u.shape[0] + 1, model.n))
    x[0] = x0
    for k in range(u.shape[0]):
        x[k + 1] = model.A @ x[k] + model.B @ u[k]
    return x


def _previous_reference(trace: SimTrace, t: int, i: int):
    if t == 0 or trace[t].mode(i) == MODE_INIT:
        return None
    prev = trace[t - 1].results.get(i)
    return None if prev is None else prev.reference


class LyapunovTerms(NamedTuple):
    cooperation: float
    tracking: float
    drift: float

    @property
    def total(self) -> float:
        return self.cooperation + self.tracking + self.drift


def lyapunov_terms(trace: SimTrace, t: int) -> LyapunovTerms:
    """V(t) split into V^c of the final references, sum of J_tr and sum of delta*d."""
    rec = trace[t]
    refs = {i: r.reference.y_T for i, r in rec.results.items()}
    vc = eval_global_cost(trace.cooperation, rec.graph(), refs) if len(refs) > 1 else 0.0
    jtr = drift = 0.0
    for i, res in rec.results.items():
        model = trace.models[i]
        jtr += tracking_cost(model, rollout(model, rec.x[i], res.u), res.u, res.reference)
        prev = _previous_reference(trace, t, i)
        if prev is not None:
            drift += rec.delta[i] * shifted_distance(res.reference.y_T, prev.y_T)
    return LyapunovTerms(vc, jtr, drift)


def lyapunov_value(trace: SimTrace, t: int) -> float:
    return lyapunov_terms(trace, t).total


def value_series(trace: SimTrace) -> np.ndarray:
    return np.array([lyapunov_value(trace, t) for t in trace.times])


def breakdown_mismatch(trace: SimTrace, t: int) -> float:
    """|sum of reported J_tr + delta*d  -  recomputed value|, the cooperation term excluded.

    The reported combined costs are evaluated against mailbox contents, which
    differ from the final references for later-in-sequence neighbors, so only
    the tracking and drift parts are comparable.
    """
    terms = lyapunov_terms(trace, t)
    reported = sum(r.breakdown["J_tr"] + r.breakdown["delta_d"] for r in trace[t].results.values())
    return abs(reported - terms.tracking - terms.drift)


def is_event_step(trace: SimTrace, t: int) -> bool:
    """True if the agent set changes between t-1 and t or somebody (re)initialises at t."""
    rec = trace[t]
    if t > 0 and set(rec.x) != set(trace[t - 1].x):
        return True
    return any(r.mode == MODE_INIT for r in rec.results.values())


def monotonicity_violations(trace: SimTrace, tol: float = 1e-6, values=None) -> list[tuple[int, float]]:
    """(t, V(t+1) - V(t)) for each increase beyond tol, skipping join/leave transitions."""
    v = value_series(trace) if values is None else values
    out = []
    for t in range(len(v) - 1):
        if is_event_step(trace, t + 1):
            continue
        inc = float(v[t + 1] - v[t])
        if inc > tol:
            out.append((t, inc))
    return out


def drift_running_sum(trace: SimTrace) -> np.ndarray:
    return np.cumsum([lyapunov_terms(trace, t).drift for t in trace.times])


class SyncError(NamedTuple):
    reference: float
    realized: float


def sync_error(trace: SimTrace, t: int, components=None) -> SyncError:
    """Max pairwise inf-norm distance of references (over k) and of realized outputs.

    Each agent's cooperation offset is removed first, so a held formation scores 0.
    """
    rec = trace[t]
    ids = rec.agents
    if len(ids) < 2:
        raise ValueError("sync_error needs at least two agents")
    sel = slice(None) if components is None else list(components)
    p = rec.y[ids[0]].size
    off = {i: trace.cooperation.offset(i, p) for i in ids}
    ref = real = 0.0
    for a, i in enumerate(ids):
        for j in ids[a + 1:]:
            d = off[i] - off[j]
            yi, yj = rec.results[i].reference.y_T.data, rec.results[j].reference.y_T.data
            ref = max(ref, float(np.max(np.abs((yi - yj - d)[:, sel]))))
            real = max(real, float(np.max(np.abs((rec.y[i] - rec.y[j] - d)[sel]))))
    return SyncError(ref, real)


def periodicity_residual(trace: SimTrace, t: int, T: int | None = None, signal: str = "x", components=None) -> float:
    """||s(t+T) - s(t)||_inf over the agents present at both times."""
    T = trace.T if T is None else T
    if t < 0 or t + T >= len(trace):
        raise IndexError(f"t={t} with period {T} outside trace of length {len(trace)}")
    a, b = trace[t], trace[t + T]
    sa, sb = getattr(a, signal), getattr(b, signal)
    sel = slice(None) if components is None else list(components)
    common = sorted(set(sa) & set(sb))
    return max((float(np.max(np.abs(sb[i][sel] - sa[i][sel]))) for i in common), default=0.0)


@dataclass
class FeasibilityReport:
    entries: list[dict]
    violations: list[dict]
    worst_margin: float
    max_candidate_residual: float
    max_admissibility: float

    def ok(self, candidate_tol: float = 1e-7) -> bool:
        return not self.violations and self.max_candidate_residual < candidate_tol \
            and self.max_admissibility < candidate_tol

    def to_dict(self) -> dict:
        return {"violations": self.violations, "worst_margin": self.worst_margin,
                "max_candidate_residual": self.max_candidate_residual,
                "max_admissibility": self.max_admissibility, "entries": self.entries}


def feasibility_report(trace: SimTrace, tol: float = 1e-9) -> FeasibilityReport:
    """Closed-loop constraint margins, shift-candidate residuals and reference admissibility."""
    entries, violations = [], []
    worst = np.inf
    cand_max = adm_max = 0.0
    for rec in trace.records:
        for i in rec.agents:
            model = trace.models[i]
            margins = constraint_margins(model, rec.x[i], rec.u[i], "nominal")
            margin = min((m.margin for m in margins), default=np.inf)
            worst = min(worst, margin)
            for v in check_constraints(model, rec.x[i], rec.u[i], "nominal", tol=tol):
                violations.append({"t": rec.t, "agent": i, "constraint": v.constraint, "margin": v.margin})
            cand = None
            prev = trace[rec.t - 1].results.get(i) if rec.t > 0 else None
            if prev is not None:
                res = candidate_residuals(model, candidate_shift(model, prev), rec.x[i])
                cand = max(res.values())
                cand_max = max(cand_max, cand)
            adm = validate_admissible(model, rec.results[i].reference).worst()
            adm_max = max(adm_max, adm)
            entries.append({"t": rec.t, "agent": i, "margin": margin, "candidate_residual": cand,
                            "admissibility": adm})
    return FeasibilityReport(entries, violations, float(worst), cand_max, adm_max)


def summary(trace: SimTrace, monotone_tol: float = 1e-6) -> dict:
    values = value_series(trace)
    feas = feasibility_report(trace)
    last = trace.times[-1]
    out = {
        "fingerprint": trace.fingerprint,
        "steps": len(trace) - 1,
        "V": values.tolist(),
        "monotonicity_violations": monotonicity_violations(trace, monotone_tol, values),
        "final_cooperation_cost": lyapunov_terms(trace, last).cooperation,
        "feasibility": {k: v for k, v in feas.to_dict().items() if k != "entries"},
        "feasible": feas.ok(),
    }
    if len(trace[last].agents) > 1:
        se = sync_error(trace, last)
        out["final_sync_error"] = {"reference": se.reference, "realized": se.realized}
    out["passed"] = out["feasible"] and not out["monotonicity_violations"]
    return out


def format_summary(s: dict) -> str:
    lines = [f"steps                 {s['steps']}",
             f"V(0) -> V(end)        {s['V'][0]:.6e} -> {s['V'][-1]:.6e}",
             f"monotonicity breaches {len(s['monotonicity_violations'])}",
             f"final V^c             {s['final_cooperation_cost']:.3e}",
             f"worst margin          {s['feasibility']['worst_margin']:.6f}",
             f"max candidate resid.  {s['feasibility']['max_candidate_residual']:.3e}",
             f"constraint violations {len(s['feasibility']['violations'])}"]
    if "final_sync_error" in s:
        lines.append(f"final sync error      {s['final_sync_error']['realized']:.3e} (realized), "
                     f"{s['final_sync_error']['reference']:.3e} (references)")
    lines.append("status                " + ("PASS" if s["passed"] else "FAIL"))
    return "\n".join(lines)
