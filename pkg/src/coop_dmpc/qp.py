"""Operator-splitting (ADMM) solver for convex QPs

    minimize    0.5 z'Pz + q'z
    subject to  l <= Az <= u

with Ruiz equilibration and active-set polishing.

Dual convention: stationarity reads ``Pz + q + A'y = 0`` with ``y >= 0`` on
active upper bounds and ``y <= 0`` on active lower bounds.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

SOLVED = "solved"
MAX_ITER = "max_iter"
PRIMAL_INFEASIBLE = "primal_infeasible"
DUAL_INFEASIBLE = "dual_infeasible"

RHO_EQ_FACTOR = 1e3
RHO_MIN = 1e-6
SCALING_MIN, SCALING_MAX = 1e-4, 1e4


class NonConvex(ValueError):
    """P is not positive semidefinite."""


@dataclass(frozen=True)
class QpSettings:
    eps_abs: float = 1e-8
    eps_rel: float = 1e-8
    max_iter: int = 20000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    scaling_iters: int = 10
    eps_prim_inf: float = 1e-5
    eps_dual_inf: float = 1e-5
    # looser certificate tolerance applied once, when the iteration limit is hit
    eps_inf_final: float = 1e-3
    check_every: int = 10
    polish: bool = True
    # residual level (relative to 1 + problem scale) at which polishing is first attempted
    polish_trigger: float = 1e-3
    polish_delta: float = 1e-11
    polish_refine_iters: int = 25

    def updated(self, **kw) -> "QpSettings":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _csc(M, shape=None) -> sp.csc_matrix:
    if sp.issparse(M):
        out = sp.csc_matrix(M, dtype=float)
    else:
        out = sp.csc_matrix(np.atleast_2d(np.asarray(M, dtype=float)))
    if shape is not None and out.shape != shape:
        if out.nnz == 0 and out.size == 0:
            return sp.csc_matrix(shape)
        raise ValueError(f"matrix has shape {out.shape}, expected {shape}")
    out.sum_duplicates()
    out.sort_indices()
    return out


@dataclass
class QpProblem:
    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csc_matrix
    l: np.ndarray
    u: np.ndarray
    var_names: list[str] | None = None
    con_names: list[str] | None = None
    constant: float = 0.0  # objective offset, not seen by the solver

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).ravel()
        n = self.q.size
        self.P = _csc(self.P, (n, n))
        self.l = np.asarray(self.l, dtype=float).ravel()
        self.u = np.asarray(self.u, dtype=float).ravel()
        m = self.l.size
        self.A = _csc(self.A, (m, n)) if m else sp.csc_matrix((0, n))
        if self.u.size != m:
            raise ValueError("l and u differ in length")
        if n and abs(self.P - self.P.T).max() >= 1e-12:
            raise ValueError("P is not symmetric")
        if np.any(self.l > self.u):
            bad = int(np.flatnonzero(self.l > self.u)[0])
            raise ValueError(f"l > u on constraint row {bad}")
        if self.var_names is not None and len(self.var_names) != n:
            raise ValueError("var_names length mismatch")
        if self.con_names is not None and len(self.con_names) != m:
            raise ValueError("con_names length mismatch")

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.l.size

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ (self.P @ z) + self.q @ z) + self.constant

    def to_dict(self) -> dict:
        """Self-describing triplet form; infinite bounds become null."""

        def trip(M):
            C = M.tocoo()
            return {"shape": list(M.shape), "rows": C.row.tolist(), "cols": C.col.tolist(), "vals": C.data.tolist()}

        def bound(v):
            return [None if not np.isfinite(x) else float(x) for x in v]

        return {"n": self.n, "m": self.m, "P": trip(self.P), "q": self.q.tolist(), "A": trip(self.A),
                "l": bound(self.l), "u": bound(self.u),
                "var_names": self.var_names, "con_names": self.con_names, "constant": self.constant}

    @classmethod
    def from_dict(cls, d: dict) -> "QpProblem":
        def mat(t):
            return sp.csc_matrix((t["vals"], (t["rows"], t["cols"])), shape=tuple(t["shape"]))

        l = np.array([-np.inf if x is None else x for x in d["l"]], dtype=float)
        u = np.array([np.inf if x is None else x for x in d["u"]], dtype=float)
        return cls(mat(d["P"]), d["q"], mat(d["A"]), l, u, d.get("var_names"), d.get("con_names"),
                   float(d.get("constant", 0.0)))


@dataclass
class QpSolution:
    z: np.ndarray
    y: np.ndarray
    objective: float
    status: str
    primal_residual: float
    dual_residual: float
    iterations: int
    polished: bool = False
    info: dict = field(default_factory=dict)

    @property
    def solved(self) -> bool:
        return self.status == SOLVED


class KktResiduals(NamedTuple):
    primal: float
    dual: float
    complementarity: float


def _inf_norm(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def kkt_residuals(problem: QpProblem, z, y) -> KktResiduals:
    """Residuals of the KKT conditions at (z, y), computed from the raw problem data.

    primal          ||Az - proj_[l,u](Az)||_inf
    dual            ||Pz + q + A'y||_inf
    complementarity max_i of min(y_i+, |u_i - a_i|) and min(y_i-, |a_i - l_i|)
    """
    z = np.asarray(z, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if z.size != problem.n or y.size != problem.m:
        raise ValueError(f"dimension mismatch: z {z.size} vs n {problem.n}, y {y.size} vs m {problem.m}")
    Az = problem.A @ z
    primal = _inf_norm(Az - np.clip(Az, problem.l, problem.u))
    dual = _inf_norm(problem.P @ z + problem.q + problem.A.T @ y)
    if problem.m:
        yp, ym = np.maximum(y, 0.0), np.maximum(-y, 0.0)
        with np.errstate(invalid="ignore"):
            gap_u = np.where(np.isfinite(problem.u), np.abs(problem.u - Az), np.inf)
            gap_l = np.where(np.isfinite(problem.l), np.abs(Az - problem.l), np.inf)
        comp = float(np.max(np.maximum(np.minimum(yp, gap_u), np.minimum(ym, gap_l))))
    else:
        comp = 0.0
    return KktResiduals(primal, dual, comp)


def _ldl_factor(K: sp.csc_matrix):
    """Symmetric-pivot LU (= permuted LDL') with a fixed fill-reducing ordering."""
    return spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                     options={"SymmetricMode": True})


def _positive_pivots(lu) -> int:
    return int(np.sum(lu.U.diagonal() > 0))


def _limit(v: np.ndarray) -> np.ndarray:
    v = np.where(v < SCALING_MIN, 1.0, v)
    return np.minimum(v, SCALING_MAX)


def _max_abs_by(index: np.ndarray, values: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros(size)
    np.maximum.at(out, index, np.abs(values))
    return out


class QpSolver:
    """Solver workspace for a fixed (P, A) sparsity and values.

    Equilibration and the ADMM factorization are computed once; ``solve`` accepts
    new (q, l, u). A single instance is not reentrant.
    """

    def __init__(self, P, A, l, u, settings: QpSettings | None = None):
        self.settings = settings or QpSettings()
        self.P = _csc(P)
        n = self.P.shape[0]
        self.A = _csc(A, (np.size(l), n)) if np.size(l) else sp.csc_matrix((0, n))
        self.n, self.m = n, self.A.shape[0]
        self._scale()
        self._check_convex()
        self._kkt_lu = None
        self._kkt_types = None
        self._set_rho(np.asarray(l, dtype=float), np.asarray(u, dtype=float))

    # -- setup -----------------------------------------------------------------
    def _scale(self):
        # Ruiz equilibration on the COO data arrays; the sparsity pattern never changes
        s = self.settings
        n, m = self.n, self.m
        D, E, c = np.ones(n), np.ones(m), 1.0
        Pc, Ac = self.P.tocoo(), self.A.tocoo()
        pr, pc, pv = Pc.row, Pc.col, Pc.data.copy()
        ar, ac, av = Ac.row, Ac.col, Ac.data.copy()
        for _ in range(s.scaling_iters):
            d = _limit(np.maximum(_max_abs_by(pc, pv, n), _max_abs_by(ac, av, n)))
            e = _limit(_max_abs_by(ar, av, m))
            d, e = 1.0 / np.sqrt(d), 1.0 / np.sqrt(e)
            pv *= d[pr] * d[pc]
            av *= e[ar] * d[ac]
            D *= d
            E *= e
            # cost scaling uses P only so the workspace stays independent of q
            mean_p = float(np.mean(_max_abs_by(pc, pv, n))) if n else 0.0
            ct = 1.0 / _limit(np.array([mean_p]))[0]
            pv *= ct
            c *= ct
        self.D, self.E, self.c = D, E, c
        self.Dinv, self.Einv = 1.0 / D, 1.0 / E
        self.Pb = sp.csc_matrix((pv, (pr, pc)), shape=(n, n))
        self.Ab = sp.csc_matrix((av, (ar, ac)), shape=(m, n))
        self.AbT = self.Ab.T.tocsc()

    def _check_convex(self):
        H = (self.Pb + self.settings.sigma * sp.eye(self.n)).tocsc()
        try:
            lu = _ldl_factor(H)
        except RuntimeError as exc:
            raise NonConvex(f"P is not positive semidefinite ({exc})") from None
        if _positive_pivots(lu) != self.n:
            raise NonConvex("P is not positive semidefinite (negative pivot in P + sigma I)")

    def _set_rho(self, l, u):
        eq = l == u
        free = np.isneginf(l) & np.isposinf(u)
        types = (eq.tobytes(), free.tobytes())
        if types == self._kkt_types:
            return
        rho = np.full(self.m, self.settings.rho)
        rho[eq] *= RHO_EQ_FACTOR
        rho[free] = RHO_MIN
        self.rho_vec, self.rho_inv = rho, 1.0 / rho
        H = self.Pb + self.settings.sigma * sp.eye(self.n)
        if self.m:
            K = sp.bmat([[H, self.AbT], [self.Ab, -sp.diags(self.rho_inv)]], format="csc")
        else:
            K = H.tocsc()
        try:
            lu = _ldl_factor(K)
        except RuntimeError as exc:
            raise NonConvex(f"KKT factorization failed ({exc})") from None
        if _positive_pivots(lu) != self.n:
            raise NonConvex("KKT matrix has wrong inertia; P is not positive semidefinite")
        self._kkt_lu, self._kkt_types = lu, types

    # -- solve -----------------------------------------------------------------
    def solve(self, q, l, u, warm_start: tuple | None = None) -> QpSolution:
        s = self.settings
        q = np.asarray(q, dtype=float).ravel()
        l = np.asarray(l, dtype=float).ravel()
        u = np.asarray(u, dtype=float).ravel()
        if q.size != self.n or l.size != self.m or u.size != self.m:
            raise ValueError("dimension mismatch in q, l or u")
        if np.any(l > u):
            raise ValueError("l > u")
        problem = QpProblem(self.P, q, self.A, l, u)
        self._set_rho(l, u)
        D, E, c, Dinv, Einv = self.D, self.E, self.c, self.Dinv, self.Einv
        Pb, Ab, AbT = self.Pb, self.Ab, self.AbT
        qb = c * D * q
        lb, ub = E * l, E * u
        rho, rho_inv = self.rho_vec, self.rho_inv
        sigma, alpha = s.sigma, s.alpha
        n = self.n

        if warm_start is not None:
            x0, y0 = warm_start
            x = Dinv * np.asarray(x0, dtype=float)
            y = c * Einv * np.asarray(y0, dtype=float) if y0 is not None else np.zeros(self.m)
            z = np.clip(Ab @ x, lb, ub)
        else:
            x, y, z = np.zeros(n), np.zeros(self.m), np.zeros(self.m)

        solve = self._kkt_lu.solve
        rhs = np.empty(n + self.m)
        last_polish_set = None
        best_polish = None
        status = MAX_ITER
        it = 0
        prim = dual = np.inf
        for it in range(1, s.max_iter + 1):
            rhs[:n] = sigma * x - qb
            rhs[n:] = z - rho_inv * y
            sol = solve(rhs)
            xt, nu = sol[:n], sol[n:]
            zt = z + rho_inv * (nu - y)
            x_new = alpha * xt + (1.0 - alpha) * x
            zr = alpha * zt + (1.0 - alpha) * z
            z_new = np.clip(zr + rho_inv * y, lb, ub)
            y_new = y + rho * (zr - z_new)
            dx, dy = x_new - x, y_new - y
            x, z, y = x_new, z_new, y_new

            if it % s.check_every and it != s.max_iter:
                continue
            Ax = Ab @ x
            Px = Pb @ x
            Aty = AbT @ y
            prim = _inf_norm(Einv * (Ax - z))
            dual = _inf_norm(Dinv * (Px + qb + Aty)) / c
            scale_p = max(_inf_norm(Einv * Ax), _inf_norm(Einv * z))
            scale_d = max(_inf_norm(Dinv * Px), _inf_norm(Dinv * Aty), _inf_norm(Dinv * qb)) / c
            eps_p = s.eps_abs + s.eps_rel * scale_p
            eps_d = s.eps_abs + s.eps_rel * scale_d
            if prim <= eps_p and dual <= eps_d:
                status = SOLVED
                break
            if self._primal_infeasible(dy, lb, ub):
                status = PRIMAL_INFEASIBLE
                break
            if self._dual_infeasible(dx, qb, lb, ub):
                status = DUAL_INFEASIBLE
                break
            if (s.polish and prim <= s.polish_trigger * (1.0 + scale_p)
                    and dual <= s.polish_trigger * (1.0 + scale_d)):
                active = self._active_set(z, y, lb, ub)
                key = active[0].tobytes() + active[1].tobytes()
                if key != last_polish_set:
                    last_polish_set = key
                    best_polish = self._polish(problem, x, z, y, qb, lb, ub, active)
                    if best_polish is not None:
                        return self._finish(problem, best_polish[0], best_polish[1], SOLVED, it, True)
        else:
            # nearly flat directions of P slow the certificates down; classify loosely at the limit
            if self._primal_infeasible(dy, lb, ub, s.eps_inf_final):
                status = PRIMAL_INFEASIBLE
            elif self._dual_infeasible(dx, qb, lb, ub, s.eps_inf_final):
                status = DUAL_INFEASIBLE

        if status == PRIMAL_INFEASIBLE:
            cert = E * dy
            cert = cert / max(_inf_norm(cert), 1e-300)
            return QpSolution(np.full(n, np.nan), cert, np.inf, status, prim, dual, it,
                              info={"certificate": cert})
        if status == DUAL_INFEASIBLE:
            cert = D * dx
            cert = cert / max(_inf_norm(cert), 1e-300)
            return QpSolution(cert, np.full(self.m, np.nan), -np.inf, status, prim, dual, it,
                              info={"certificate": cert})

        if s.polish:
            active = self._active_set(z, y, lb, ub)
            pol = self._polish(problem, x, z, y, qb, lb, ub, active)
            if pol is not None:
                return self._finish(problem, pol[0], pol[1], SOLVED, it, True)
        return self._finish(problem, D * x, E * y / c, status, it, False)

    def _finish(self, problem, z, y, status, it, polished) -> QpSolution:
        res = kkt_residuals(problem, z, y)
        return QpSolution(z, y, problem.objective(z), status, res.primal, res.dual, it, polished,
                          info={"complementarity": res.complementarity})

    def _primal_infeasible(self, dy, lb, ub, eps: float | None = None) -> bool:
        eps = self.settings.eps_prim_inf if eps is None else eps
        dy_u = self.E * dy
        norm = _inf_norm(dy_u)
        if norm <= eps:
            return False
        tol = eps * norm
        if _inf_norm(self.Dinv * (self.AbT @ dy)) > tol:
            return False
        pos, neg = dy > 0, dy < 0
        if np.any(pos & np.isposinf(ub) & (dy_u > tol)) or np.any(neg & np.isneginf(lb) & (dy_u < -tol)):
            return False
        support = np.sum(np.where(pos & np.isfinite(ub), ub, 0.0) * dy) + \
            np.sum(np.where(neg & np.isfinite(lb), lb, 0.0) * dy)
        return bool(support < -eps * _inf_norm(dy))

    def _dual_infeasible(self, dx, qb, lb, ub, eps: float | None = None) -> bool:
        eps = self.settings.eps_dual_inf if eps is None else eps
        norm = _inf_norm(self.D * dx)
        if norm <= eps:
            return False
        tol = eps * norm
        if _inf_norm(self.Dinv * (self.Pb @ dx)) > self.c * tol:
            return False
        if qb @ dx > -self.c * tol:
            return False
        Adx = self.Einv * (self.Ab @ dx)
        bad_up = np.isfinite(ub) & (Adx > tol)
        bad_lo = np.isfinite(lb) & (Adx < -tol)
        return not bool(np.any(bad_up | bad_lo))

    @staticmethod
    def _active_set(z, y, lb, ub):
        eq = lb == ub
        lower = ~eq & (z - lb < -y)
        upper = ~eq & ~lower & (ub - z < y)
        return lower | eq, upper

    def _polish(self, problem, x, z, y, qb, lb, ub, active):
        s = self.settings
        lower, upper = active
        idx_l, idx_u = np.flatnonzero(lower), np.flatnonzero(upper)
        idx = np.concatenate([idx_l, idx_u])
        target = np.concatenate([lb[idx_l], ub[idx_u]])
        Aact = self.Ab[idx, :] if idx.size else sp.csc_matrix((0, self.n))
        k = idx.size
        n = self.n
        delta = s.polish_delta
        K = sp.bmat([[self.Pb, Aact.T], [Aact, None]], format="csc") if k else self.Pb.tocsc()
        Kreg = (K + sp.diags(np.concatenate([np.full(n, delta), np.full(k, -delta)]))).tocsc()
        try:
            # threshold pivoting: inertia is not needed here and P may be singular on free blocks
            lu = spla.splu(Kreg)
        except RuntimeError:
            return None
        rhs = np.concatenate([-qb, target])
        sol = lu.solve(rhs)
        # refine until the residual stalls: weakly curved directions (tiny P
        # eigenvalues) need residuals near machine precision to be located
        r_norm = np.inf
        for _ in range(s.polish_refine_iters):
            r = rhs - K @ sol
            new_norm = _inf_norm(r)
            if new_norm == 0.0 or new_norm >= 0.5 * r_norm:
                break
            r_norm = new_norm
            sol = sol + lu.solve(r)
        if not np.all(np.isfinite(sol)):
            return None
        xb = sol[:n]
        yb = np.zeros(self.m)
        yb[idx] = sol[n:]
        zx, zy = self.D * xb, self.E * yb / self.c
        res = kkt_residuals(problem, zx, zy)
        Az = problem.A @ zx
        Px = problem.P @ zx
        Aty = problem.A.T @ zy
        eps_p = s.eps_abs + s.eps_rel * max(_inf_norm(Az), _inf_norm(np.clip(Az, problem.l, problem.u)))
        eps_d = s.eps_abs + s.eps_rel * max(_inf_norm(Px), _inf_norm(Aty), _inf_norm(problem.q))
        if res.primal <= eps_p and res.dual <= eps_d and res.complementarity <= max(eps_p, eps_d):
            return zx, zy
        log.debug("polish rejected: %s (active %d rows)", res, k)
        return None


def solve_qp(problem: QpProblem, settings: QpSettings | None = None, warm_start: tuple | None = None) -> QpSolution:
    """One-shot solve; raises ``NonConvex`` when P is indefinite."""
    solver = QpSolver(problem.P, problem.A, problem.l, problem.u, settings)
    sol = solver.solve(problem.q, problem.l, problem.u, warm_start=warm_start)
    sol.objective += problem.constant
    return sol
