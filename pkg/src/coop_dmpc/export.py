"""CSV and SVG output for closed-loop traces."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .diagnostics import SimTrace, lyapunov_value

FIXED_TAIL = ["J_tr", "Vbar_c", "delta_d", "V_total"]


def _dims(trace: SimTrace) -> tuple[int, int, int]:
    models = trace.models.values()
    return (max((m.n for m in models), default=0), max((m.q for m in models), default=0),
            max((m.p for m in models), default=0))


def csv_header(trace: SimTrace) -> list[str]:
    n, q, p = _dims(trace)
    return (["t", "agent_id"] + [f"x[{k}]" for k in range(n)] + [f"u[{k}]" for k in range(q)]
            + [f"y[{k}]" for k in range(p)] + FIXED_TAIL)


def _cells(vec: np.ndarray, width: int) -> list[str]:
    # repr() of a Python float is the shortest string that round-trips exactly
    return [repr(float(v)) for v in vec] + [""] * (width - vec.size)


def export_trace_csv(trace: SimTrace, path) -> Path:
    """One row per (t, agent)."""
    path = Path(path)
    n, q, p = _dims(trace)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(trace))
        for rec in trace.records:
            V = lyapunov_value(trace, rec.t)
            for i in rec.agents:
                bd = rec.results[i].breakdown
                w.writerow([str(rec.t), str(i)] + _cells(rec.x[i], n) + _cells(rec.u[i], q) + _cells(rec.y[i], p)
                           + [repr(float(bd["J_tr"])), repr(float(bd["Vbar_c"])), repr(float(bd["delta_d"])),
                              repr(float(V))])
    return path


def read_trace_csv(path) -> list[dict]:
    """Parse an exported CSV back into dicts of ints/floats (blank cells are dropped)."""
    rows = []
    with Path(path).open(newline="") as fh:
        for raw in csv.DictReader(fh):
            row = {}
            for k, v in raw.items():
                if v == "":
                    continue
                row[k] = int(v) if k in ("t", "agent_id") else float(v)
            rows.append(row)
    return rows


TIME_SERIES = "time_series"
PHASE_PLOT = "phase_plot"


def render_svg(trace: SimTrace, kind: str, components, path) -> Path:
    """Static SVG: outputs over time, or a 2-D phase plot with the final reference orbit marked."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    comps = [int(c) for c in np.atleast_1d(components)]
    p = _dims(trace)[2]
    for c in comps:
        if not 0 <= c < p:
            raise ValueError(f"output component {c} outside 0..{p - 1}")
    if kind == PHASE_PLOT and len(comps) != 2:
        raise ValueError("phase_plot needs exactly two components")
    if kind not in (TIME_SERIES, PHASE_PLOT):
        raise ValueError(f"unknown plot kind {kind!r}")

    ids = sorted({i for rec in trace.records for i in rec.x})
    plt.rcParams["svg.hashsalt"] = "coop-dmpc"
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for i in ids:
        ts = [rec.t for rec in trace.records if i in rec.y]
        ys = np.array([rec.y[i] for rec in trace.records if i in rec.y])
        if not ts:
            continue
        if kind == TIME_SERIES:
            ax.plot(ts, ys[:, comps[0]], marker="." if len(ts) == 1 else None, label=f"agent {i}")
        else:
            ax.plot(ys[:, comps[0]], ys[:, comps[1]], marker="." if len(ts) == 1 else None, label=f"agent {i}")
    if kind == TIME_SERIES:
        ax.set_xlabel("t (time steps)")
        ax.set_ylabel(f"y[{comps[0]}]")
    else:
        if trace.records:
            last = trace.records[-1]
            orbit = last.results[last.agents[0]].reference.y_T.data
            ax.plot(orbit[:, comps[0]], orbit[:, comps[1]], "x", color="black", linestyle="none",
                    label="final reference")
        ax.set_xlabel(f"y[{comps[0]}]")
        ax.set_ylabel(f"y[{comps[1]}]")
    ax.grid(True, alpha=0.4)
    if ids:
        ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
