"""Separable quadratic cooperation costs over periodic output trajectories."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .trajectory import PeriodicTrajectory

KINDS = ("synchronization", "offset_synchronization")


class Graph:
    """Undirected communication graph without self-loops."""

    def __init__(self, vertices: Iterable[int], edges: Iterable[tuple[int, int]] = ()):
        self._vertices = tuple(sorted({int(v) for v in vertices}))
        adj: dict[int, set[int]] = {v: set() for v in self._vertices}
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop on vertex {i}")
            if i not in adj or j not in adj:
                raise ValueError(f"edge ({i}, {j}) references an unknown vertex")
            adj[i].add(j)
            adj[j].add(i)
        self._adj = {v: tuple(sorted(n)) for v, n in adj.items()}

    @classmethod
    def all_to_all(cls, vertices: Iterable[int]) -> "Graph":
        vs = sorted(set(vertices))
        return cls(vs, [(i, j) for a, i in enumerate(vs) for j in vs[a + 1:]])

    @property
    def vertices(self) -> tuple[int, ...]:
        return self._vertices

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self._adj[i]

    def has_edge(self, i: int, j: int) -> bool:
        return j in self._adj.get(i, ())

    def edges(self) -> list[tuple[int, int]]:
        return [(i, j) for i in self._vertices for j in self._adj[i] if i < j]

    def without(self, v: int) -> "Graph":
        return Graph([u for u in self._vertices if u != v], [e for e in self.edges() if v not in e])

    def with_vertex(self, v: int, neighbors: Iterable[int]) -> "Graph":
        if v in self._adj:
            raise ValueError(f"vertex {v} already present")
        return Graph(self._vertices + (v,), self.edges() + [(v, j) for j in neighbors])

    def __eq__(self, other):
        return isinstance(other, Graph) and self._adj == other._adj

    def __repr__(self):
        return f"Graph(vertices={list(self._vertices)}, edges={self.edges()})"


@dataclass
class CooperationCostSpec:
    """Quadratic pairwise cooperation cost.

    ``synchronization``: V_ij = w_ij * sum_k ||y_i(k) - y_j(k)||^2.
    ``offset_synchronization`` (formation keeping) compares y_i - o_i with y_j - o_j.
    Weights are stored per undirected edge, so w_ij == w_ji by construction.
    """

    kind: str = "synchronization"
    weights: dict = field(default_factory=dict)
    offsets: dict = field(default_factory=dict)
    default_weight: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown cooperation kind {self.kind!r}")
        sym = {}
        for key, w in dict(self.weights).items():
            i, j = tuple(key)
            w = float(w)
            if w < 0:
                raise ValueError(f"negative weight on edge ({i}, {j})")
            k = frozenset((int(i), int(j)))
            if k in sym and sym[k] != w:
                raise ValueError(f"asymmetric weights on edge ({i}, {j})")
            sym[k] = w
        self.weights = sym
        self.offsets = {int(i): np.asarray(o, dtype=float).ravel() for i, o in dict(self.offsets).items()}

    def weight(self, i: int, j: int) -> float:
        return self.weights.get(frozenset((i, j)), self.default_weight)

    def offset(self, i: int, dim: int) -> np.ndarray:
        if self.kind != "offset_synchronization":
            return np.zeros(dim)
        return self.offsets.get(i, np.zeros(dim))


def _same_shape(a: PeriodicTrajectory, b: PeriodicTrajectory) -> None:
    if a.period != b.period or a.dim != b.dim:
        raise ValueError(f"trajectory mismatch: (T={a.period}, p={a.dim}) vs (T={b.period}, p={b.dim})")


def _target(spec: CooperationCostSpec, i: int, j: int, y_j: PeriodicTrajectory) -> np.ndarray:
    """The point y_i must match for V_ij to vanish: y_j + o_i - o_j."""
    return y_j.data + spec.offset(i, y_j.dim) - spec.offset(j, y_j.dim)


def eval_pair_cost(spec: CooperationCostSpec, edge: tuple[int, int], y_i: PeriodicTrajectory,
                   y_j: PeriodicTrajectory, graph: Graph | None = None) -> float:
    i, j = edge
    if graph is not None and not graph.has_edge(i, j):
        raise KeyError(f"({i}, {j}) is not an edge of the graph")
    _same_shape(y_i, y_j)
    e = y_i.data - _target(spec, i, j, y_j)
    return spec.weight(i, j) * float(np.sum(e * e))


def eval_global_cost(spec: CooperationCostSpec, graph: Graph, trajs: Mapping[int, PeriodicTrajectory]) -> float:
    """Sum of V_ij over all ordered neighbor pairs."""
    missing = [v for v in graph.vertices if v not in trajs]
    if missing:
        raise KeyError(f"missing trajectories for vertices {missing}")
    return sum(eval_pair_cost(spec, (i, j), trajs[i], trajs[j])
               for i in graph.vertices for j in graph.neighbors(i))


def eval_combined_cost(spec: CooperationCostSpec, graph: Graph, i: int, y_i: PeriodicTrajectory,
                       neighbor_trajs: Mapping[int, PeriodicTrajectory]) -> float:
    """Every term of the global cost that involves agent i (both edge directions)."""
    total = 0.0
    for j in graph.neighbors(i):
        if j not in neighbor_trajs:
            raise KeyError(f"agent {i}: no trajectory from neighbor {j}")
        y_j = neighbor_trajs[j]
        total += eval_pair_cost(spec, (i, j), y_i, y_j) + eval_pair_cost(spec, (j, i), y_j, y_i)
    return total


def combined_cost_quadratic_form(spec: CooperationCostSpec, graph: Graph, i: int,
                                 neighbor_trajs: Mapping[int, PeriodicTrajectory],
                                 period: int, dim: int):
    """Exact expansion of the combined cost in vec(y_i) as 0.5 v'Hv + g'v + c.

    vec is row-major (step-major), matching ``PeriodicTrajectory.flat``.
    """
    size = period * dim
    H = np.zeros((size, size))
    g = np.zeros(size)
    c = 0.0
    for j in graph.neighbors(i):
        if j not in neighbor_trajs:
            raise KeyError(f"agent {i}: no trajectory from neighbor {j}")
        y_j = neighbor_trajs[j]
        if y_j.period != period or y_j.dim != dim:
            raise ValueError(f"neighbor {j} trajectory has shape (T={y_j.period}, p={y_j.dim})")
        # V_ij + V_ji are equal for these costs, each w * ||y_i - a||^2
        w = spec.weight(i, j)
        a = _target(spec, i, j, y_j).ravel()
        H += 4.0 * w * np.eye(size)
        g -= 4.0 * w * a
        c += 2.0 * w * float(a @ a)
    return H, g, c
