"""Sequential distributed MPC loop.

At every timestep the agents solve one after another in a fixed order. Before
solving, agent i reads its mailbox: neighbors that already solved at t have
delivered their fresh reference, the others are represented by the one-step
shift of the reference they sent at t-1. After solving, the agent broadcasts
its new reference once. When everybody is done the first inputs are applied.

Agents that are new (t = 0, or joining later) solve the decoupled
initialization problem at their first step.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple

import numpy as np

from .agent import AgentModel, output, step_dynamics
from .diagnostics import SimTrace, StepRecord
from .local_mpc import (MODE_COOPERATE, MODE_INIT, LocalSolveResult, SolverCache, solve_local_problem,
                        solve_tracking_problem)
from .scenario import Scenario
from .trajectory import PeriodicTrajectory, shift

log = logging.getLogger(__name__)

FRESH = "fresh"
SHIFTED = "shifted"


class MailboxEntry(NamedTuple):
    trajectory: PeriodicTrajectory
    tag: str
    source_t: int


@dataclass
class FleetState:
    t: int
    x: dict[int, np.ndarray]
    last: dict[int, LocalSolveResult] = field(default_factory=dict)
    applied: dict[int, np.ndarray] = field(default_factory=dict)
    mailbox: dict[int, dict[int, MailboxEntry]] = field(default_factory=dict)
    pending_init: set[int] = field(default_factory=set)
    record: StepRecord | None = None
    caches: dict[int, SolverCache] = field(default_factory=dict, repr=False)

    def reference(self, i: int):
        return self.last[i].reference


def _order(scenario: Scenario, order: Iterable[int] | None) -> list[int]:
    ids = scenario.ids
    if order is None:
        return ids
    order = [int(i) for i in order if int(i) in set(ids)]
    if sorted(order) != ids:
        raise ValueError(f"order {order} is not a permutation of agents {ids}")
    return order


def _cache(state: FleetState, scenario: Scenario, i: int) -> SolverCache:
    c = state.caches.get(i)
    if c is None:
        c = state.caches[i] = SolverCache(scenario.solver)
    return c


def initial_state(scenario: Scenario) -> FleetState:
    """State at t=0 before any solve; every agent is pending initialization."""
    return FleetState(0, {i: scenario.x0[i].copy() for i in scenario.ids}, pending_init=set(scenario.ids))


def step(state: FleetState, scenario: Scenario, skip: Iterable[int] = (), order: Iterable[int] | None = None,
         dump: list | None = None) -> FleetState:
    """Run one timestep of the sequential scheme and return the state at t+1.

    Agents in ``skip`` do not cooperate this step: they track the shift of their
    previous reference and broadcast that shifted reference.
    """
    t = state.t
    seq = _order(scenario, order)
    # initialising agents ignore their neighbors, so they go first and everyone else gets a fresh trajectory
    seq = [i for i in seq if i in state.pending_init] + [i for i in seq if i not in state.pending_init]
    skip = set(skip)
    bad = skip & state.pending_init
    if bad:
        raise ValueError(f"agents {sorted(bad)} must initialise at t={t} and cannot be skipped")
    graph = scenario.graph

    mailbox: dict[int, dict[int, MailboxEntry]] = {i: {} for i in seq}
    for i in seq:
        for j in graph.neighbors(i):
            if j in state.last and j not in state.pending_init:
                mailbox[i][j] = MailboxEntry(shift(state.last[j].reference.y_T), SHIFTED, t - 1)

    results: dict[int, LocalSolveResult] = {}
    tags: dict[int, dict[int, tuple[str, int]]] = {}
    messages = []
    for i in seq:
        model = scenario.agent(i)
        tags[i] = {j: (e.tag, e.source_t) for j, e in mailbox[i].items()}
        cache = _cache(state, scenario, i)
        if i in state.pending_init:
            res = solve_local_problem(model, state.x[i], {}, None, scenario.cooperation, graph,
                                      scenario.delta[i], scenario.N, scenario.T, MODE_INIT, t, cache, dump)
        elif i in skip:
            ref = state.last[i].reference.shifted(1)
            res = solve_tracking_problem(model, state.x[i], ref, scenario.N, t, cache, dump)
        else:
            nb = {j: e.trajectory for j, e in mailbox[i].items()}
            res = solve_local_problem(model, state.x[i], nb, state.last[i].reference, scenario.cooperation,
                                      graph, scenario.delta[i], scenario.N, scenario.T, MODE_COOPERATE, t,
                                      cache, dump)
        results[i] = res
        recipients = graph.neighbors(i)
        for j in recipients:
            mailbox[j][i] = MailboxEntry(res.reference.y_T, FRESH, t)
        messages.append((i, tuple(recipients)))
        log.debug("t=%d agent %d %s: %s", t, i, res.mode, res.diagnostics)

    applied = {i: results[i].u[0].copy() for i in seq}
    x_next = {i: step_dynamics(scenario.agent(i), state.x[i], applied[i]) for i in seq}
    record = StepRecord(
        t, list(seq), {i: state.x[i].copy() for i in seq}, applied,
        {i: output(scenario.agent(i), state.x[i], applied[i]) for i in seq},
        results, graph.edges(), {i: scenario.delta[i] for i in seq}, messages, tags,
    )
    return FleetState(t + 1, x_next, results, applied, mailbox, set(), record, state.caches)


def initialize(scenario: Scenario, dump: list | None = None) -> FleetState:
    """Decoupled initialization of every agent; returns the state at t=1."""
    return step(initial_state(scenario), scenario, dump=dump)


def drop_agent(state: FleetState, scenario: Scenario, agent_id: int) -> tuple[FleetState, Scenario]:
    if agent_id not in scenario.ids:
        raise KeyError(agent_id)
    agents = [a for a in scenario.agents if a.id != agent_id]
    new = replace(scenario, agents=agents, graph=scenario.graph.without(agent_id),
                  delta={i: d for i, d in scenario.delta.items() if i != agent_id},
                  x0={i: x for i, x in scenario.x0.items() if i != agent_id})
    keep = lambda d: {i: v for i, v in d.items() if i != agent_id}  # noqa: E731
    st = replace(state, x=keep(state.x), last=keep(state.last), applied=keep(state.applied),
                 mailbox={i: keep(m) for i, m in state.mailbox.items() if i != agent_id},
                 pending_init=state.pending_init - {agent_id},
                 caches=keep(state.caches))
    return st, new


def add_agent(state: FleetState, scenario: Scenario, model: AgentModel, x0, neighbors: Iterable[int] | None = None,
              delta: float | None = None) -> tuple[FleetState, Scenario]:
    """Register a new agent; it runs the decoupled initialization at the next step."""
    if model.id in scenario.ids:
        raise ValueError(f"agent {model.id} already exists")
    if {model.p} != {a.p for a in scenario.agents} and scenario.agents:
        raise ValueError("new agent must share the fleet's output dimension")
    neighbors = scenario.ids if neighbors is None else list(neighbors)
    delta = min(scenario.delta.values()) if delta is None else float(delta)
    x0 = np.asarray(x0, dtype=float).ravel()
    new = replace(scenario, agents=[*scenario.agents, model], graph=scenario.graph.with_vertex(model.id, neighbors),
                  delta={**scenario.delta, model.id: delta}, x0={**scenario.x0, model.id: x0})
    st = replace(state, x={**state.x, model.id: x0.copy()}, pending_init=state.pending_init | {model.id})
    return st, new


class Simulation:
    """Stateful driver around :func:`step` that accumulates a :class:`SimTrace`."""

    def __init__(self, scenario: Scenario, order: Iterable[int] | None = None, dump: list | None = None):
        self.scenario = scenario
        self.order = None if order is None else _order(scenario, order)
        self.dump = dump
        self.state = initial_state(scenario)
        self.models = {a.id: a for a in scenario.agents}
        self.trace = SimTrace([], self.models, scenario.cooperation, scenario.T, scenario.N,
                              scenario.fingerprint(), scenario.to_dict())

    @property
    def t(self) -> int:
        return self.state.t

    def advance(self, skip: Iterable[int] = ()) -> StepRecord:
        order = None if self.order is None else [i for i in self.order if i in self.scenario.ids] + \
            [i for i in self.scenario.ids if i not in self.order]
        self.state = step(self.state, self.scenario, skip, order, self.dump)
        self.trace.records.append(self.state.record)
        return self.state.record

    def drop_agent(self, agent_id: int) -> None:
        self.state, self.scenario = drop_agent(self.state, self.scenario, agent_id)

    def add_agent(self, model: AgentModel, x0, neighbors=None, delta=None) -> None:
        self.state, self.scenario = add_agent(self.state, self.scenario, model, x0, neighbors, delta)
        self.models[model.id] = model


def run(scenario: Scenario, steps: int | None = None, skip: Iterable[tuple[int, int]] = (),
        order: Iterable[int] | None = None, dump: list | None = None) -> SimTrace:
    """Closed loop for ``steps`` steps; the trace holds t = 0..steps (steps+1 solves).

    ``skip`` lists (agent, t) pairs that fall back to tracking at that step.
    """
    steps = scenario.steps if steps is None else int(steps)
    by_t: dict[int, set[int]] = {}
    for i, t in skip:
        by_t.setdefault(int(t), set()).add(int(i))
    sim = Simulation(scenario, order, dump)
    for _ in range(steps + 1):
        sim.advance(by_t.get(sim.t, ()))
    return sim.trace
