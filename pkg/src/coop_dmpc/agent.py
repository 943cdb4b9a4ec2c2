"""LTI agent models with box constraints, tightened reference sets and the reference lift."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .trajectory import PeriodicTrajectory

DYNAMICS_TOL = 1e-8


class InconsistentOutputTrajectory(ValueError):
    """No dynamics-consistent (x_T, u_T) reproduces the requested output trajectory."""


class Violation(NamedTuple):
    constraint: str
    margin: float


def _as_matrix(M, rows=None, cols=None, name="matrix") -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if rows is not None and M.shape[0] != rows or cols is not None and M.shape[1] != cols:
        raise ValueError(f"{name} has shape {M.shape}, expected ({rows}, {cols})")
    return M


def _as_vector(v, size, name) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    if v.size != size:
        raise ValueError(f"{name} has size {v.size}, expected {size}")
    return v


def double_integrator_matrices():
    """Planar double integrator: state (p1, p2, v1, v2), input (a1, a2), output = state."""
    A = np.array([[1.0, 0, 1, 0], [0, 1, 0, 1], [0, 0, 1, 0], [0, 0, 0, 1]])
    B = np.array([[0.0, 0], [0, 0], [1, 0], [0, 1]])
    C = np.eye(4)
    D = np.zeros((4, 2))
    return A, B, C, D


def _check_spd(M: np.ndarray, name: str) -> None:
    if not np.allclose(M, M.T, atol=1e-12, rtol=0):
        raise ValueError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive definite") from None


@dataclass(frozen=True, eq=False)
class AgentModel:
    """x+ = A x + B u, y = C x + D u, with nominal and tightened boxes.

    Nominal bounds describe Z_i = X_i x U_i (infinite entries allowed). Tightened
    bounds describe the set references must live in; they must be finite and lie
    strictly inside the nominal ones.
    """

    id: int
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    x_lower: np.ndarray
    x_upper: np.ndarray
    u_lower: np.ndarray
    u_upper: np.ndarray
    xt_lower: np.ndarray
    xt_upper: np.ndarray
    ut_lower: np.ndarray
    ut_upper: np.ndarray
    Q: np.ndarray = field(default=None)
    R: np.ndarray = field(default=None)

    def __post_init__(self):
        A = _as_matrix(self.A, name="A")
        n = A.shape[0]
        A = _as_matrix(A, n, n, "A")
        B = _as_matrix(self.B, n, None, "B")
        q = B.shape[1]
        C = _as_matrix(self.C, None, n, "C")
        p = C.shape[0]
        D = _as_matrix(self.D, p, q, "D")
        Q = np.eye(n) if self.Q is None else _as_matrix(self.Q, n, n, "Q")
        R = np.eye(q) if self.R is None else _as_matrix(self.R, q, q, "R")
        _check_spd(Q, "Q")
        _check_spd(R, "R")
        vecs = {}
        for name, size in (("x_lower", n), ("x_upper", n), ("u_lower", q), ("u_upper", q),
                           ("xt_lower", n), ("xt_upper", n), ("ut_lower", q), ("ut_upper", q)):
            vecs[name] = _as_vector(getattr(self, name), size, name)
        for lo, hi in (("x_lower", "x_upper"), ("u_lower", "u_upper"),
                       ("xt_lower", "xt_upper"), ("ut_lower", "ut_upper")):
            if np.any(vecs[lo] > vecs[hi]):
                raise ValueError(f"{lo} exceeds {hi}")
        for name in ("xt_lower", "xt_upper", "ut_lower", "ut_upper"):
            if not np.all(np.isfinite(vecs[name])):
                raise ValueError(f"tightened bound {name} must be finite")
        if not (np.all(vecs["xt_lower"] > vecs["x_lower"]) and np.all(vecs["xt_upper"] < vecs["x_upper"])
                and np.all(vecs["ut_lower"] > vecs["u_lower"]) and np.all(vecs["ut_upper"] < vecs["u_upper"])):
            raise ValueError("tightened bounds must lie strictly inside the nominal bounds")
        for name, value in dict(A=A, B=B, C=C, D=D, Q=Q, R=R, **vecs).items():
            value = np.array(value)
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def double_integrator(cls, agent_id: int, position_bound=4.1, velocity_bound=2.1, input_bound=1.1,
                          tightened=(4.0, 2.0, 1.0), Q=None, R=None) -> "AgentModel":
        A, B, C, D = double_integrator_matrices()
        xb = np.array([position_bound] * 2 + [velocity_bound] * 2)
        xt = np.array([tightened[0]] * 2 + [tightened[1]] * 2)
        ub = np.full(2, float(input_bound))
        ut = np.full(2, float(tightened[2]))
        return cls(agent_id, A, B, C, D, -xb, xb, -ub, ub, -xt, xt, -ut, ut, Q, R)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def q(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def with_id(self, agent_id: int) -> "AgentModel":
        return AgentModel(agent_id, self.A, self.B, self.C, self.D, self.x_lower, self.x_upper,
                          self.u_lower, self.u_upper, self.xt_lower, self.xt_upper,
                          self.ut_lower, self.ut_upper, self.Q, self.R)

    def bounds(self, which: str = "nominal"):
        """Return (x_lower, x_upper, u_lower, u_upper) for 'nominal' or 'tightened'."""
        if which == "nominal":
            return self.x_lower, self.x_upper, self.u_lower, self.u_upper
        if which == "tightened":
            return self.xt_lower, self.xt_upper, self.ut_lower, self.ut_upper
        raise ValueError(f"unknown constraint set {which!r}")


@dataclass(frozen=True, eq=False)
class CooperationReference:
    """An output trajectory y_T together with its state/input lift (x_T, u_T)."""

    y_T: PeriodicTrajectory
    x_T: PeriodicTrajectory
    u_T: PeriodicTrajectory

    @property
    def period(self) -> int:
        return self.y_T.period

    @classmethod
    def from_lift(cls, model: AgentModel, x_T, u_T) -> "CooperationReference":
        x_T = x_T if isinstance(x_T, PeriodicTrajectory) else PeriodicTrajectory(x_T)
        u_T = u_T if isinstance(u_T, PeriodicTrajectory) else PeriodicTrajectory(u_T)
        y = x_T.data @ model.C.T + u_T.data @ model.D.T
        return cls(PeriodicTrajectory(y), x_T, u_T)

    @classmethod
    def equilibrium(cls, model: AgentModel, x, u, period: int) -> "CooperationReference":
        return cls.from_lift(model, PeriodicTrajectory.constant(x, period), PeriodicTrajectory.constant(u, period))

    def shifted(self, steps: int = 1) -> "CooperationReference":
        roll = lambda tr: PeriodicTrajectory(np.roll(tr.data, -steps, axis=0))  # noqa: E731
        return CooperationReference(roll(self.y_T), roll(self.x_T), roll(self.u_T))

    def to_dict(self) -> dict:
        return {"y_T": self.y_T.to_dict(), "x_T": self.x_T.to_dict(), "u_T": self.u_T.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "CooperationReference":
        return cls(*(PeriodicTrajectory.from_dict(d[k]) for k in ("y_T", "x_T", "u_T")))


def step_dynamics(model: AgentModel, x, u) -> np.ndarray:
    x = _as_vector(x, model.n, "x")
    u = _as_vector(u, model.q, "u")
    return model.A @ x + model.B @ u


def output(model: AgentModel, x, u=None) -> np.ndarray:
    x = _as_vector(x, model.n, "x")
    u = np.zeros(model.q) if u is None else _as_vector(u, model.q, "u")
    return model.C @ x + model.D @ u


def constraint_margins(model: AgentModel, x, u, which: str = "nominal") -> list[Violation]:
    """Signed distance to every finite bound (positive = satisfied)."""
    x = _as_vector(x, model.n, "x")
    u = _as_vector(u, model.q, "u")
    xl, xu, ul, uu = model.bounds(which)
    out = []
    for label, val, lo, hi in (("x", x, xl, xu), ("u", u, ul, uu)):
        for k in range(val.size):
            if np.isfinite(hi[k]):
                out.append(Violation(f"{label}[{k}]<=upper", float(hi[k] - val[k])))
            if np.isfinite(lo[k]):
                out.append(Violation(f"{label}[{k}]>=lower", float(val[k] - lo[k])))
    return out


def check_constraints(model: AgentModel, x, u, which: str = "nominal", tol: float = 0.0) -> list[Violation]:
    """Violated bounds only; an empty list means (x, u) lies in the chosen set."""
    return [v for v in constraint_margins(model, x, u, which) if v.margin < -tol]


def _lift_system(model: AgentModel, period: int):
    n, q, p = model.n, model.q, model.p
    nv = period * (n + q)
    rows = period * (p + n)
    M = np.zeros((rows, nv))
    xi = lambda k: slice((k % period) * n, (k % period + 1) * n)  # noqa: E731
    ui = lambda k: slice(period * n + k * q, period * n + (k + 1) * q)  # noqa: E731
    for k in range(period):
        r = k * (p + n)
        M[r:r + p, xi(k)] = model.C
        M[r:r + p, ui(k)] = model.D
        M[r + p:r + p + n, xi(k + 1)] += np.eye(n)
        M[r + p:r + p + n, xi(k)] -= model.A
        M[r + p:r + p + n, ui(k)] -= model.B
    return M


def reference_maps(model: AgentModel, y_T: PeriodicTrajectory) -> CooperationReference:
    """Lift an output trajectory to the dynamics-consistent (x_T, u_T) of minimum norm."""
    if y_T.dim != model.p:
        raise ValueError(f"output trajectory has dim {y_T.dim}, model output dim is {model.p}")
    T, n, q, p = y_T.period, model.n, model.q, model.p
    M = _lift_system(model, T)
    rhs = np.zeros(M.shape[0])
    for k in range(T):
        rhs[k * (p + n):k * (p + n) + p] = y_T[k]
    sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    residual = float(np.max(np.abs(M @ sol - rhs)))
    if residual > DYNAMICS_TOL:
        raise InconsistentOutputTrajectory(
            f"agent {model.id}: no dynamics-consistent lift (residual {residual:.3e})"
        )
    x_T = PeriodicTrajectory(sol[:T * n].reshape(T, n))
    u_T = PeriodicTrajectory(sol[T * n:].reshape(T, q))
    return CooperationReference(y_T, x_T, u_T)


@dataclass
class AdmissibilityIssue:
    kind: str  # "period", "dimension", "dynamics", "output", "bound"
    step: int
    magnitude: float
    detail: str = ""


@dataclass
class AdmissibilityReport:
    issues: list[AdmissibilityIssue]

    @property
    def valid(self) -> bool:
        return not self.issues

    def of_kind(self, kind: str) -> list[AdmissibilityIssue]:
        return [i for i in self.issues if i.kind == kind]

    def worst(self) -> float:
        return max((i.magnitude for i in self.issues), default=0.0)


def validate_admissible(model: AgentModel, r: CooperationReference, tol: float = DYNAMICS_TOL,
                        bound_tol: float = 1e-9) -> AdmissibilityReport:
    """Check periodic dynamics, output consistency and tightened bounds of a reference."""
    issues: list[AdmissibilityIssue] = []
    T = r.y_T.period
    if r.x_T.period != T or r.u_T.period != T:
        issues.append(AdmissibilityIssue("period", -1, float(abs(r.x_T.period - T) + abs(r.u_T.period - T))))
        return AdmissibilityReport(issues)
    if r.x_T.dim != model.n or r.u_T.dim != model.q or r.y_T.dim != model.p:
        issues.append(AdmissibilityIssue("dimension", -1, 1.0))
        return AdmissibilityReport(issues)
    for k in range(T):
        x, u = r.x_T[k], r.u_T[k]
        dyn = float(np.max(np.abs(r.x_T[k + 1] - model.A @ x - model.B @ u)))
        if dyn > tol:
            issues.append(AdmissibilityIssue("dynamics", k, dyn))
        out = float(np.max(np.abs(r.y_T[k] - model.C @ x - model.D @ u)))
        if out > tol:
            issues.append(AdmissibilityIssue("output", k, out))
        for v in check_constraints(model, x, u, "tightened", tol=bound_tol):
            issues.append(AdmissibilityIssue("bound", k, -v.margin, v.constraint))
    return AdmissibilityReport(issues)
