"""Assembly and solution of each agent's local problems.

Two problems are built here as sparse QPs:

* tracking MPC: follow a fixed admissible reference (x_T, u_T) with a terminal
  equality constraint ``x(N) = x_T(N mod T)``;
* cooperation MPC: the same, but the reference is a decision variable, penalised
  by the combined cooperation cost and by the drift ``delta * d(y_T, y_prev)``.

The decision vector is ``[x(0..N), u(0..N-1), x_T(0..T-1), u_T(0..T-1)]``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .agent import AgentModel, CooperationReference, check_constraints, validate_admissible
from .cooperation import CooperationCostSpec, Graph, combined_cost_quadratic_form, eval_combined_cost
from .qp import QpProblem, QpSettings, QpSolution, QpSolver
from .trajectory import PeriodicTrajectory, shift, shifted_distance

INIT_REGULARIZATION = 1e-9

MODE_INIT = "init"
MODE_COOPERATE = "cooperate"
MODE_TRACK = "track"


class LocalInfeasible(RuntimeError):
    """A local problem could not be solved to the required accuracy."""

    def __init__(self, agent: int, t: int | None, status: str, detail: str = ""):
        self.agent, self.t, self.status = agent, t, status
        msg = f"agent {agent} at t={t}: local problem {status}"
        super().__init__(msg + (f" ({detail})" if detail else ""))


class InfeasibleInitialization(LocalInfeasible):
    pass


class InvalidReference(ValueError):
    pass


@dataclass(frozen=True)
class LocalProblemLayout:
    n: int
    q: int
    N: int
    T: int
    agent: int = 0
    with_reference: bool = True

    @property
    def size(self) -> int:
        base = (self.N + 1) * self.n + self.N * self.q
        return base + (self.T * (self.n + self.q) if self.with_reference else 0)

    def x(self, k: int) -> slice:
        return slice(k * self.n, (k + 1) * self.n)

    def u(self, k: int) -> slice:
        o = (self.N + 1) * self.n
        return slice(o + k * self.q, o + (k + 1) * self.q)

    def xT(self, k: int) -> slice:
        k %= self.T
        o = (self.N + 1) * self.n + self.N * self.q
        return slice(o + k * self.n, o + (k + 1) * self.n)

    def uT(self, k: int) -> slice:
        k %= self.T
        o = (self.N + 1) * self.n + self.N * self.q + self.T * self.n
        return slice(o + k * self.q, o + (k + 1) * self.q)

    @property
    def ref_block(self) -> slice:
        o = (self.N + 1) * self.n + self.N * self.q
        return slice(o, o + self.T * (self.n + self.q))

    def var_names(self) -> list[str]:
        names = []
        names += [f"x[{k}][{c}]" for k in range(self.N + 1) for c in range(self.n)]
        names += [f"u[{k}][{c}]" for k in range(self.N) for c in range(self.q)]
        if self.with_reference:
            names += [f"xT[{k}][{c}]" for k in range(self.T) for c in range(self.n)]
            names += [f"uT[{k}][{c}]" for k in range(self.T) for c in range(self.q)]
        return names

    def unpack(self, z: np.ndarray):
        x = np.array([z[self.x(k)] for k in range(self.N + 1)])
        u = np.array([z[self.u(k)] for k in range(self.N)]).reshape(self.N, self.q)
        if not self.with_reference:
            return x, u, None, None
        xT = np.array([z[self.xT(k)] for k in range(self.T)])
        uT = np.array([z[self.uT(k)] for k in range(self.T)])
        return x, u, xT, uT


class _Rows:
    """Accumulates constraint rows l <= A z <= u in triplet form."""

    def __init__(self, nvar: int):
        self.nvar = nvar
        self.r, self.c, self.v = [], [], []
        self.l, self.u, self.names = [], [], []

    @property
    def count(self) -> int:
        return len(self.l)

    def block(self, row0: int, cols: slice, M: np.ndarray):
        M = np.atleast_2d(M)
        ii, jj = np.nonzero(M)
        self.r.extend(row0 + ii)
        self.c.extend(cols.start + jj)
        self.v.extend(M[ii, jj])

    def add(self, lo, hi, name: str, terms):
        lo = np.asarray(lo, dtype=float).ravel()
        hi = np.asarray(hi, dtype=float).ravel()
        row0 = self.count
        for cols, M in terms:
            self.block(row0, cols, M)
        self.l.extend(lo)
        self.u.extend(hi)
        self.names.extend(f"{name}[{c}]" for c in range(lo.size))

    def matrix(self) -> sp.csc_matrix:
        return sp.csc_matrix((self.v, (self.r, self.c)), shape=(self.count, self.nvar))


def _track_rows(agent: AgentModel, lay: LocalProblemLayout, x_now, rows: _Rows, terminal=None):
    n, q = agent.n, agent.q
    I = np.eye(n)
    rows.add(x_now, x_now, "init", [(lay.x(0), I)])
    for k in range(lay.N):
        rows.add(np.zeros(n), np.zeros(n), f"dyn{k}",
                 [(lay.x(k + 1), I), (lay.x(k), -agent.A), (lay.u(k), -agent.B)])
    for k in range(lay.N):
        rows.add(agent.x_lower, agent.x_upper, f"xbox{k}", [(lay.x(k), I)])
        rows.add(agent.u_lower, agent.u_upper, f"ubox{k}", [(lay.u(k), np.eye(q))])
    if terminal is None:
        rows.add(np.zeros(n), np.zeros(n), "terminal", [(lay.x(lay.N), I), (lay.xT(lay.N), -I)])
    else:
        rows.add(terminal, terminal, "terminal", [(lay.x(lay.N), I)])


def _reference_rows(agent: AgentModel, lay: LocalProblemLayout, rows: _Rows):
    n, q = agent.n, agent.q
    I = np.eye(n)
    for k in range(lay.T):
        if lay.T == 1:
            terms = [(lay.xT(0), I - agent.A), (lay.uT(0), -agent.B)]
        else:
            terms = [(lay.xT(k + 1), I), (lay.xT(k), -agent.A), (lay.uT(k), -agent.B)]
        rows.add(np.zeros(n), np.zeros(n), f"refdyn{k}", terms)
    for k in range(lay.T):
        rows.add(agent.xt_lower, agent.xt_upper, f"xTbox{k}", [(lay.xT(k), I)])
        rows.add(agent.ut_lower, agent.ut_upper, f"uTbox{k}", [(lay.uT(k), np.eye(q))])


def _tracking_hessian(agent: AgentModel, lay: LocalProblemLayout) -> np.ndarray:
    P = np.zeros((lay.size, lay.size))
    Q2, R2 = 2 * agent.Q, 2 * agent.R
    for k in range(lay.N):
        P[lay.x(k), lay.x(k)] += Q2
        P[lay.u(k), lay.u(k)] += R2
        if lay.with_reference:
            P[lay.xT(k), lay.xT(k)] += Q2
            P[lay.uT(k), lay.uT(k)] += R2
            P[lay.x(k), lay.xT(k)] -= Q2
            P[lay.xT(k), lay.x(k)] -= Q2
            P[lay.u(k), lay.uT(k)] -= R2
            P[lay.uT(k), lay.u(k)] -= R2
    return P


def _output_map(agent: AgentModel, lay: LocalProblemLayout) -> np.ndarray:
    """Matrix M with vec(y_T) = M @ z[ref_block]."""
    T = lay.T
    M = np.zeros((T * agent.p, T * (agent.n + agent.q)))
    for k in range(T):
        M[k * agent.p:(k + 1) * agent.p, k * agent.n:(k + 1) * agent.n] = agent.C
        o = T * agent.n
        M[k * agent.p:(k + 1) * agent.p, o + k * agent.q:o + (k + 1) * agent.q] = agent.D
    return M


def _problem(P: np.ndarray, qv: np.ndarray, rows: _Rows, lay: LocalProblemLayout, const: float) -> QpProblem:
    Psp = sp.csc_matrix(0.5 * (P + P.T))
    return QpProblem(Psp, qv, rows.matrix(), rows.l, rows.u, lay.var_names(), list(rows.names), constant=const)


def assemble_tracking_qp(agent: AgentModel, x_now, r_T: CooperationReference, N: int,
                         check_reference: bool = True) -> tuple[QpProblem, LocalProblemLayout]:
    """Tracking problem over (x, u) with the reference held fixed."""
    if N < 1:
        raise ValueError("horizon N must be >= 1")
    if check_reference:
        report = validate_admissible(agent, r_T)
        if not report.valid:
            raise InvalidReference(f"agent {agent.id}: reference not admissible: {report.issues[:3]}")
    x_now = np.asarray(x_now, dtype=float).ravel()
    lay = LocalProblemLayout(agent.n, agent.q, N, r_T.period, agent.id, with_reference=False)
    P = _tracking_hessian(agent, lay)
    qv = np.zeros(lay.size)
    const = 0.0
    for k in range(N):
        xr, ur = r_T.x_T[k], r_T.u_T[k]
        qv[lay.x(k)] -= 2 * agent.Q @ xr
        qv[lay.u(k)] -= 2 * agent.R @ ur
        const += xr @ agent.Q @ xr + ur @ agent.R @ ur
    rows = _Rows(lay.size)
    _track_rows(agent, lay, x_now, rows, terminal=r_T.x_T[N])
    return _problem(P, qv, rows, lay, const), lay


def assemble_cooperation_qp(agent: AgentModel, x_now, neighbor_trajs: Mapping[int, PeriodicTrajectory],
                            prev_ref: CooperationReference | None, spec: CooperationCostSpec, graph: Graph,
                            delta: float, N: int, T: int, mode: str = MODE_COOPERATE
                            ) -> tuple[QpProblem, LocalProblemLayout]:
    """Cooperation problem over (x, u, x_T, u_T).

    ``mode='init'`` drops the coupling and drift terms and adds a tiny
    regulariser pulling (x_T, u_T) toward (x_now, 0) so the optimum is unique.
    """
    if N < 1 or T < 1:
        raise ValueError("N and T must be >= 1")
    x_now = np.asarray(x_now, dtype=float).ravel()
    lay = LocalProblemLayout(agent.n, agent.q, N, T, agent.id)
    P = _tracking_hessian(agent, lay)
    qv = np.zeros(lay.size)
    const = 0.0
    rb = lay.ref_block
    if mode == MODE_INIT:
        eps = INIT_REGULARIZATION
        P[rb, rb] += 2 * eps * np.eye(rb.stop - rb.start)
        for k in range(T):
            qv[lay.xT(k)] -= 2 * eps * x_now
        const += eps * T * float(x_now @ x_now)
    elif mode == MODE_COOPERATE:
        if delta <= 0:
            raise ValueError("delta must be positive")
        if prev_ref is None:
            raise InvalidReference(f"agent {agent.id}: previous reference required")
        if prev_ref.period != T or prev_ref.y_T.dim != agent.p:
            raise InvalidReference(f"agent {agent.id}: previous reference has wrong shape")
        M = _output_map(agent, lay)
        H, g, c = combined_cost_quadratic_form(spec, graph, agent.id, neighbor_trajs, T, agent.p)
        y_hat = shift(prev_ref.y_T).flat()
        P[rb, rb] += M.T @ (H + 2 * delta * np.eye(H.shape[0])) @ M
        qv[rb] += M.T @ (g - 2 * delta * y_hat)
        const += c + delta * float(y_hat @ y_hat)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    rows = _Rows(lay.size)
    _track_rows(agent, lay, x_now, rows)
    _reference_rows(agent, lay, rows)
    return _problem(P, qv, rows, lay, const), lay


@dataclass
class LocalSolveResult:
    agent: int
    mode: str
    x: np.ndarray  # (N+1, n) predicted states
    u: np.ndarray  # (N, q) predicted inputs
    reference: CooperationReference
    breakdown: dict
    objective: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def total_cost(self) -> float:
        return float(sum(self.breakdown.values()))

    def to_dict(self) -> dict:
        return {"agent": self.agent, "mode": self.mode, "x": self.x.tolist(), "u": self.u.tolist(),
                "reference": self.reference.to_dict(), "breakdown": dict(self.breakdown),
                "objective": self.objective, "diagnostics": dict(self.diagnostics)}

    @classmethod
    def from_dict(cls, d: dict) -> "LocalSolveResult":
        return cls(d["agent"], d["mode"], np.array(d["x"], dtype=float), np.array(d["u"], dtype=float),
                   CooperationReference.from_dict(d["reference"]), dict(d["breakdown"]),
                   d["objective"], dict(d.get("diagnostics", {})))


def tracking_cost(agent: AgentModel, x: np.ndarray, u: np.ndarray, ref: CooperationReference) -> float:
    """Sum over the horizon of ||x - x_T||_Q^2 + ||u - u_T||_R^2 (terminal cost is zero)."""
    total = 0.0
    for k in range(u.shape[0]):
        ex = x[k] - ref.x_T[k]
        eu = u[k] - ref.u_T[k]
        total += float(ex @ agent.Q @ ex + eu @ agent.R @ eu)
    return total


def cost_breakdown(agent: AgentModel, x, u, ref: CooperationReference, mode: str,
                   neighbor_trajs: Mapping[int, PeriodicTrajectory] | None = None,
                   prev_ref: CooperationReference | None = None, spec: CooperationCostSpec | None = None,
                   graph: Graph | None = None, delta: float = 0.0, x_now=None) -> dict:
    out = {"J_tr": tracking_cost(agent, x, u, ref), "Vbar_c": 0.0, "delta_d": 0.0}
    if mode == MODE_COOPERATE:
        out["Vbar_c"] = eval_combined_cost(spec, graph, agent.id, ref.y_T, neighbor_trajs)
        out["delta_d"] = delta * shifted_distance(ref.y_T, prev_ref.y_T)
    elif mode == MODE_INIT:
        xn = np.asarray(x_now, dtype=float)
        out["regularization"] = INIT_REGULARIZATION * float(
            np.sum(ref.u_T.data ** 2) + np.sum((ref.x_T.data - xn) ** 2))
    return out


class SolverCache:
    """Reuses QP workspaces across solves that share (P, A)."""

    def __init__(self, settings: QpSettings | None = None):
        self.settings = settings or QpSettings()
        self._solvers: dict[bytes, QpSolver] = {}

    @staticmethod
    def _key(problem: QpProblem) -> bytes:
        h = hashlib.sha256()
        for M in (problem.P, problem.A):
            h.update(np.asarray(M.shape).tobytes())
            h.update(M.indptr.tobytes())
            h.update(M.indices.tobytes())
            h.update(M.data.tobytes())
        return h.digest()

    def solve(self, problem: QpProblem, warm_start=None) -> QpSolution:
        key = self._key(problem)
        solver = self._solvers.get(key)
        if solver is None:
            solver = QpSolver(problem.P, problem.A, problem.l, problem.u, self.settings)
            self._solvers[key] = solver
        sol = solver.solve(problem.q, problem.l, problem.u, warm_start=warm_start)
        sol.objective += problem.constant
        return sol

    def __len__(self):
        return len(self._solvers)


def _diagnostics(sol: QpSolution) -> dict:
    return {"status": sol.status, "iterations": sol.iterations, "primal_residual": sol.primal_residual,
            "dual_residual": sol.dual_residual, "polished": sol.polished}


def solve_local_problem(agent: AgentModel, x_now, neighbor_trajs: Mapping[int, PeriodicTrajectory],
                        prev_ref: CooperationReference | None, spec: CooperationCostSpec, graph: Graph,
                        delta: float, N: int, T: int, mode: str = MODE_COOPERATE, t: int | None = None,
                        cache: SolverCache | None = None, dump: list | None = None) -> LocalSolveResult:
    """Solve the cooperation (or initialization) problem and recompute its cost terms."""
    cache = SolverCache() if cache is None else cache
    problem, lay = assemble_cooperation_qp(agent, x_now, neighbor_trajs, prev_ref, spec, graph, delta, N, T, mode)
    sol = cache.solve(problem)
    if not sol.solved:
        exc = InfeasibleInitialization if mode == MODE_INIT else LocalInfeasible
        raise exc(agent.id, t, sol.status)
    x, u, xT, uT = lay.unpack(sol.z)
    ref = CooperationReference.from_lift(agent, xT, uT)
    bd = cost_breakdown(agent, x, u, ref, mode, neighbor_trajs, prev_ref, spec, graph, delta, x_now)
    result = LocalSolveResult(agent.id, mode, x, u, ref, bd, sol.objective, _diagnostics(sol))
    if dump is not None:
        dump.append({"agent": agent.id, "t": t, "mode": mode, "qp": problem.to_dict(),
                     "z": sol.z.tolist(), "y": sol.y.tolist(), "result": result.to_dict()})
    return result


def solve_tracking_problem(agent: AgentModel, x_now, ref: CooperationReference, N: int, t: int | None = None,
                           cache: SolverCache | None = None, dump: list | None = None) -> LocalSolveResult:
    """Follow a fixed reference (used by agents skipping the cooperation step)."""
    cache = SolverCache() if cache is None else cache
    problem, lay = assemble_tracking_qp(agent, x_now, ref, N)
    sol = cache.solve(problem)
    if not sol.solved:
        raise LocalInfeasible(agent.id, t, sol.status)
    x, u, _, _ = lay.unpack(sol.z)
    bd = cost_breakdown(agent, x, u, ref, MODE_TRACK)
    result = LocalSolveResult(agent.id, MODE_TRACK, x, u, ref, bd, sol.objective, _diagnostics(sol))
    if dump is not None:
        dump.append({"agent": agent.id, "t": t, "mode": MODE_TRACK, "qp": problem.to_dict(),
                     "z": sol.z.tolist(), "y": sol.y.tolist(), "result": result.to_dict()})
    return result


@dataclass
class Candidate:
    u: np.ndarray  # (N, q)
    x: np.ndarray  # (N+1, n), rolled out from the previous x*(1)
    reference: CooperationReference


def candidate_shift(agent: AgentModel, prev: LocalSolveResult) -> Candidate:
    """Shifted previous solution with the terminal law u_T(N) appended."""
    N = prev.u.shape[0]
    ref = prev.reference.shifted(1)
    u = np.vstack([prev.u[1:], prev.reference.u_T[N][None, :]])
    x = np.empty_like(prev.x)
    x[0] = prev.x[1]
    for k in range(N):
        x[k + 1] = agent.A @ x[k] + agent.B @ u[k]
    return Candidate(u, x, ref)


def candidate_residuals(agent: AgentModel, cand: Candidate, x_now=None) -> dict:
    """Constraint residuals of a candidate in the next cooperation problem (0 = feasible)."""
    N = cand.u.shape[0]
    out = {"initial": 0.0 if x_now is None else float(np.max(np.abs(cand.x[0] - np.asarray(x_now)))),
           "dynamics": max(float(np.max(np.abs(cand.x[k + 1] - agent.A @ cand.x[k] - agent.B @ cand.u[k])))
                           for k in range(N))}
    worst = 0.0
    for k in range(N):
        for v in check_constraints(agent, cand.x[k], cand.u[k], "nominal"):
            worst = max(worst, -v.margin)
    out["bounds"] = worst
    out["terminal"] = float(np.max(np.abs(cand.x[N] - cand.reference.x_T[N])))
    out["reference"] = validate_admissible(agent, cand.reference).worst()
    return out
