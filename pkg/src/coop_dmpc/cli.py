"""Command line entry point: ``coop-dmpc {run,check,plot,repro-paper}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .coordinator import run
from .diagnostics import SimTrace, format_summary, summary
from .export import PHASE_PLOT, TIME_SERIES, export_trace_csv, render_svg
from .local_mpc import LocalInfeasible
from .qp import NonConvex
from .reproduction import convergence_checks, format_checks, orbit_checks, sync4_path, value_checks
from .scenario import ScenarioError, parse_scenario

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_DIAGNOSTIC = 0, 2, 3, 4

log = logging.getLogger("coop_dmpc")


def _setup_logging() -> None:
    level = os.environ.get("COOP_DMPC_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(levels.get(level, logging.INFO))


def _pairs(text: str | None) -> list[tuple[int, int]]:
    if not text:
        return []
    out = []
    for item in text.split(","):
        agent, _, t = item.partition(":")
        if not t:
            raise argparse.ArgumentTypeError(f"bad skip entry {item!r}, expected agent:t")
        out.append((int(agent), int(t)))
    return out


def _ints(text: str | None) -> list[int] | None:
    return None if not text else [int(v) for v in text.split(",")]


def _run_one(scenario_path: str, out_dir: str, steps: int | None, skip, order, dump_qp: bool) -> int:
    try:
        scenario = parse_scenario(scenario_path)
    except (ScenarioError, OSError) as exc:
        log.error("invalid scenario %s: %s", scenario_path, exc)
        return EXIT_INVALID
    log.info("scenario %s (%s): %d agents, T=%d, N=%d, steps=%d", scenario.name, scenario.fingerprint()[:12],
             len(scenario.agents), scenario.T, scenario.N, scenario.steps if steps is None else steps)
    log.debug("expanded scenario: %s", json.dumps(scenario.to_dict()))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump = [] if dump_qp else None
    t0 = time.perf_counter()
    try:
        trace = run(scenario, steps, skip, order, dump)
    except LocalInfeasible as exc:
        log.error("%s", exc)
        return EXIT_INFEASIBLE
    except (ValueError, NonConvex) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    finally:
        if dump is not None:
            (out / "qp_dump.json").write_text(json.dumps(dump))
    elapsed = time.perf_counter() - t0
    trace.save(out / "trace.json")
    export_trace_csv(trace, out / "trace.csv")
    report = summary(trace)
    report["runtime_s"] = elapsed
    (out / "report.json").write_text(json.dumps(report, indent=2))
    print(format_summary(report))
    print(f"runtime               {elapsed:.2f} s")
    return EXIT_OK if report["passed"] else EXIT_DIAGNOSTIC


def cmd_run(args) -> int:
    skip, order = _pairs(args.skip), _ints(args.order)
    if args.batch:
        files = sorted(Path(args.batch).glob("*.json"))
        if not files:
            log.error("no scenario files in %s", args.batch)
            return EXIT_INVALID
        with ProcessPoolExecutor() as pool:
            futures = [pool.submit(_run_one, str(f), str(Path(args.out_dir) / f.stem), args.steps, skip, order,
                                   args.dump_qp) for f in files]
            codes = [f.result() for f in futures]
        for f, c in zip(files, codes):
            print(f"{f.name}: exit {c}")
        return max(codes)
    if not args.scenario:
        log.error("--scenario or --batch is required")
        return EXIT_INVALID
    return _run_one(args.scenario, args.out_dir, args.steps, skip, order, args.dump_qp)


def cmd_check(args) -> int:
    try:
        scenario = parse_scenario(args.scenario)
    except (ScenarioError, OSError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"ok: {scenario.name}, {len(scenario.agents)} agents, T={scenario.T}, N={scenario.N}, "
          f"edges={len(scenario.graph.edges())}, fingerprint {scenario.fingerprint()[:12]}")
    return EXIT_OK


def cmd_plot(args) -> int:
    try:
        trace = SimTrace.load(args.trace)
    except (OSError, ValueError, KeyError) as exc:
        log.error("cannot read trace %s: %s", args.trace, exc)
        return EXIT_INVALID
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    comps = _ints(args.components) or ([0] if args.kind == TIME_SERIES else [0, 1])
    try:
        path = render_svg(trace, args.kind, comps, out / f"{args.kind}.svg")
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    print(path)
    return EXIT_OK


def cmd_repro(args) -> int:
    scenario = parse_scenario(sync4_path())
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        trace = run(scenario, args.steps)
    except LocalInfeasible as exc:
        log.error("%s", exc)
        return EXIT_INFEASIBLE
    elapsed = time.perf_counter() - t0
    trace.save(out / "trace.json")
    export_trace_csv(trace, out / "trace.csv")
    render_svg(trace, TIME_SERIES, [0], out / "first_output.svg")
    render_svg(trace, PHASE_PLOT, [0, 1], out / "first_two_outputs.svg")
    checks = convergence_checks(trace, elapsed) + orbit_checks(trace) + value_checks(trace)
    text = format_checks(checks)
    (out / "acceptance.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_DIAGNOSTIC


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coop-dmpc", description="Sequential distributed MPC for periodic cooperation")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario and write trace, CSV and report")
    r.add_argument("--scenario")
    r.add_argument("--steps", type=int)
    r.add_argument("--out-dir", default="out")
    r.add_argument("--dump-qp", action="store_true", help="write every local QP to qp_dump.json")
    r.add_argument("--skip", help="comma separated agent:t pairs that only track at that step")
    r.add_argument("--order", help="comma separated agent permutation for the solve sequence")
    r.add_argument("--batch", help="directory of scenario files run concurrently")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("check", help="validate a scenario file")
    c.add_argument("--scenario", required=True)
    c.set_defaults(func=cmd_check)

    pl = sub.add_parser("plot", help="render an SVG from a saved trace")
    pl.add_argument("--trace", required=True)
    pl.add_argument("--kind", choices=[TIME_SERIES, PHASE_PLOT], default=TIME_SERIES)
    pl.add_argument("--components", help="comma separated output indices")
    pl.add_argument("--out-dir", default="out")
    pl.set_defaults(func=cmd_plot)

    rp = sub.add_parser("repro-paper", help="run the four-agent example, write both figures and the checks")
    rp.add_argument("--steps", type=int, default=30)
    rp.add_argument("--out-dir", default="out/repro")
    rp.set_defaults(func=cmd_repro)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
