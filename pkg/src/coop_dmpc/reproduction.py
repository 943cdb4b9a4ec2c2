"""Checks that compare a run of the shipped four-agent scenario with the expected reference data."""
from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .diagnostics import (SimTrace, drift_running_sum, lyapunov_terms, monotonicity_violations,
                          periodicity_residual, sync_error)

# Reference closed-loop data for the four-agent synchronization example.
EXPECTED_FIRST_OUTPUT_T30 = (1.36485529, 1.36485554, 1.36485588, 1.36485634)
EXPECTED_FIRST_OUTPUT_T20 = (1.36485844, 1.36485869, 1.36485903, 1.36485948)
EXPECTED_ORBIT_BOX = ((1.259, 1.365), (1.540, 1.663))
FIRST_OUTPUT_BAND = (1.25, 1.37)


class Check(NamedTuple):
    name: str
    passed: bool
    detail: str


def sync4_path() -> Path:
    return Path(str(resources.files("coop_dmpc") / "scenarios" / "sync4.json"))


def convergence_checks(trace: SimTrace, runtime: float | None = None) -> list[Check]:
    last = trace.times[-1]
    spread = max(sync_error(trace, t, (0, 1)).realized for t in range(20, last + 1))
    lo, hi = FIRST_OUTPUT_BAND
    vals = [trace[t].y[i][0] for t in range(15, last + 1) for i in trace[t].agents]
    out = [Check("output spread < 1e-3 for t >= 20", spread < 1e-3, f"max spread {spread:.3e}"),
           Check(f"first output in [{lo}, {hi}] for t >= 15", lo <= min(vals) and max(vals) <= hi,
                 f"range [{min(vals):.6f}, {max(vals):.6f}]")]
    if runtime is not None:
        out.append(Check("runtime < 10 s", runtime < 10.0, f"{runtime:.2f} s"))
    return out


def orbit_checks(trace: SimTrace, tol_envelope: float = 0.05) -> list[Check]:
    last = trace.times[-1]
    T = trace.T
    drift = max((periodicity_residual(trace, t, T, signal="y") for t in range(20, last - T + 1)), default=np.nan)
    rec = trace[last]
    refs = [rec.results[i].reference.y_T.data for i in rec.agents]
    coincide = max(float(np.max(np.abs(r - refs[0]))) for r in refs)
    orbit = refs[0]
    (x_lo, x_hi), (y_lo, y_hi) = EXPECTED_ORBIT_BOX
    got = (orbit[:, 0].min(), orbit[:, 0].max(), orbit[:, 1].min(), orbit[:, 1].max())
    want = (x_lo, x_hi, y_lo, y_hi)
    gap = max(abs(g - w) for g, w in zip(got, want))
    return [
        Check("||y(t+T) - y(t)|| < 1e-2 for t >= 20", bool(drift < 1e-2), f"max drift {drift:.3e}"),
        Check("final references coincide within 1e-3", coincide < 1e-3, f"max gap {coincide:.3e}"),
        Check(f"orbit range matches expected envelope within {tol_envelope}", gap <= tol_envelope,
              "range [{:.4f}, {:.4f}] x [{:.4f}, {:.4f}], worst endpoint gap {:.4f}".format(*got, gap)),
    ]


def value_checks(trace: SimTrace) -> list[Check]:
    last = trace.times[-1]
    breaches = monotonicity_violations(trace, 1e-6)
    vc = lyapunov_terms(trace, last).cooperation
    run_sum = drift_running_sum(trace)
    change = float(run_sum[-1] - run_sum[-6]) if len(run_sum) >= 6 else np.nan
    return [Check("V(t+1) - V(t) <= 1e-6", not breaches, f"{len(breaches)} breaches"),
            Check("final V^c < 1e-4", vc < 1e-4, f"{vc:.3e}"),
            Check("delta*d running sum settles (< 1e-10 over last 5 steps)", bool(change < 1e-10),
                  f"{change:.3e}")]


def format_checks(checks: list[Check]) -> str:
    return "\n".join(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}" for c in checks)
