"""Command-line entry point.

Exit codes: 0 success, 2 invalid input (config, trace, arguments),
3 infeasible scenario.  Output files are written to a temporary name and
renamed, so a failed run leaves nothing half-written.
"""
from __future__ import annotations

import argparse
import io
import json
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bip
from . import placement as pl
from . import simulator as sim
from .scenario import Box, ConfigError, NodeStatus, Scenario, default_scenario, load_scenario, validate_scenario
from .traces import (Mobility, TraceError, TraceFormat, bin_requests, centered, extract_region, parse_trace,
                     synth_trace, write_canonical)

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE = 0, 2, 3

SOLVERS = {"auto": bip.solve_auto, "bnb": bip.solve_bnb, "grouped": bip.solve_grouped,
           "exhaustive": bip.solve_exhaustive}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _fail(code: int, message: str):
    raise CliError(code, message)


# ---------------------------------------------------------------------------
# config assembly


def _scenario(args) -> Scenario:
    try:
        sc = load_scenario(args.config) if args.config else default_scenario()
    except ConfigError as exc:
        _fail(EXIT_INVALID, str(exc))
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "window_seconds", None) is not None:
        over["window_seconds"] = args.window_seconds
    if getattr(args, "alpha", None) is not None:
        over["alpha"] = args.alpha
    if getattr(args, "q_threshold", None) is not None:
        over["q_threshold"] = args.q_threshold
    if getattr(args, "prop_speed", None) is not None:
        over["prop_speed"] = args.prop_speed
    if getattr(args, "critic_widths", None):
        try:
            over["critic_widths"] = tuple(int(w) for w in args.critic_widths.split(","))
        except ValueError:
            _fail(EXIT_INVALID, f"bad --critic-widths {args.critic_widths!r}")
    if getattr(args, "trace", None):
        over["trace"] = args.trace
    if getattr(args, "format", None):
        over["trace_format"] = args.format
    sc = replace(sc, **over)
    problems = validate_scenario(sc)
    if problems:
        _fail(EXIT_INVALID, "invalid scenario: " + "; ".join(v.message for v in problems))
    return sc


def load_windows(sc: Scenario):
    box = sc.bounding_box
    frame = Box(0.0, 0.0, box.width, box.height)
    if sc.trace:
        path = Path(sc.trace)
        if not path.is_file():
            _fail(EXIT_INVALID, f"trace file not found: {path}")
        try:
            with open(path, "rb") as fh:
                parsed = parse_trace(fh, sc.trace_format)
        except TraceError as exc:
            _fail(EXIT_INVALID, f"{path}: {exc}")
        points = parsed.points
        if parsed.projection is not None:
            points = centered(points, box)
        points = extract_region(points, box)
        if not points:
            _fail(EXIT_INVALID, f"{path}: no trace points inside the bounding box")
    else:
        points = synth_trace(sc.synth_vehicles, sc.synth_windows, frame, sc.synth_mobility, sc.seed,
                             sc.window_seconds)
    return bin_requests(points, sc.window_seconds, sc.n_services, sc.seed)


def _preflight(sc: Scenario, windows) -> None:
    n_ops = len(sc.operational())
    for w in windows:
        inst = pl.compute_instances(w.arrivals, sc.instance_capacity)
        if inst.size and int(inst.max()) > n_ops:
            s = int(np.argmax(inst))
            _fail(EXIT_INFEASIBLE, f"structurally infeasible: window {w.index} needs {int(inst[s])} "
                                   f"instances of service {s} but only {n_ops} nodes exist")


# ---------------------------------------------------------------------------
# output


def _write_all(out: Path, files: dict[str, str]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{name}.", suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            staged.append((tmp, out / name))
        for tmp, final in staged:
            os.replace(tmp, final)
    finally:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)


def _run_meta(sc: Scenario, windows) -> dict:
    return {"seed": sc.seed, "windows": len(windows), "trace": Path(sc.trace).name if sc.trace else None,
            "attacks": [list(a) for a in sc.attack_schedule], "restores": [list(r) for r in sc.restore_schedule]}


# ---------------------------------------------------------------------------
# commands


def cmd_run(args) -> int:
    sc = _scenario(args)
    windows = load_windows(sc)
    _preflight(sc, windows)
    log = sim.run(sc, windows, args.mode)
    summary = {"config": _run_meta(sc, windows), **sim.summarize(log, sc, args.record_timings)}
    _write_all(Path(args.out), {
        "metrics.csv": sim.metrics_csv(log, args.record_timings),
        "summary.json": sim.dump_json(summary) + "\n",
        "decisions.json": sim.decisions_json(log) + "\n",
    })
    print(f"{len(windows)} windows, mean delay {summary['mean_delay_ms']}, outputs in {args.out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    sc = _scenario(args)
    windows = load_windows(sc)
    _preflight(sc, windows)
    cmp = sim.compare(sc, windows, args.record_timings)
    doc = {"config": _run_meta(sc, windows), **cmp.summary}
    _write_all(Path(args.out), {
        "metrics_ours.csv": sim.metrics_csv(cmp.ours, args.record_timings),
        "metrics_br.csv": sim.metrics_csv(cmp.br, args.record_timings),
        "compare.json": sim.dump_json(doc) + "\n",
    })
    print(f"compared {len(windows)} windows, BR feasible: {cmp.summary['br_feasible']}, outputs in {args.out}")
    return EXIT_OK


def _parse_demand(text: str, S: int) -> np.ndarray:
    try:
        vals = [int(t) for t in text.split(",")]
    except ValueError:
        _fail(EXIT_INVALID, f"malformed demand {text!r}: expected {S} comma-separated integers")
    if len(vals) != S or min(vals) < 0:
        _fail(EXIT_INVALID, f"malformed demand {text!r}: expected {S} nonnegative integers")
    return np.array(vals, dtype=np.int64)


def _parse_delays(text: str, E: int, S: int) -> np.ndarray:
    src = text
    if os.path.isfile(text):
        src = Path(text).read_text()
    try:
        d = np.array(json.loads(src), dtype=float)
    except (ValueError, TypeError):
        _fail(EXIT_INVALID, "malformed delays: expected a JSON |E| x |S| matrix or a file holding one")
    if d.shape != (E, S) or not np.isfinite(d).all() or (d < 0).any():
        _fail(EXIT_INVALID, f"malformed delays: need a {E} x {S} matrix of nonnegative numbers, got shape {d.shape}")
    return d


def cmd_solve_once(args) -> int:
    """SP for one demand vector, optionally PSVM and SRP for a failed node.

    Without vehicle positions the secondary-mapping inputs are approximated:
    each instance carries an equal share of its service's arrivals and the
    affected vehicles see the same mean access delay as everyone else.
    """
    sc = _scenario(args)
    E, S = sc.n_nodes, sc.n_services
    arrivals = _parse_demand(args.demand, S)
    delays = _parse_delays(args.delays, E, S)
    solver = SOLVERS[args.solver]
    inst = pl.compute_instances(arrivals, sc.instance_capacity)
    try:
        sol = pl.solve_sp(sc, inst, delays, solver)
    except pl.StructurallyInfeasible as exc:
        _fail(EXIT_INFEASIBLE, str(exc))
    if not sol.feasible:
        _fail(EXIT_INFEASIBLE, "infeasible: no placement meets capacity and delay limits")
    out = {"instances": inst.tolist(), "x": sol.x.tolist(), "objective": sol.result.objective_value,
           "tiebreak": sol.result.secondary_value}
    if args.fail_node is not None:
        n = args.fail_node
        if not 0 <= n < E:
            _fail(EXIT_INVALID, f"--fail-node {n} out of range")
        x = sol.x
        if not x[n].any():
            # nothing to lose: no candidates, no recovery
            out.update({"y1": [], "y2": [], "candidates": {}, "degraded": [], "no_secondary": [],
                        "z": [], "srp_mode": None})
            print(json.dumps(out, sort_keys=True))
            return EXIT_OK
        loads = np.zeros((E, S))
        for s in range(S):
            hosts = np.flatnonzero(x[:, s])
            if hosts.size:
                loads[hosts, s] = arrivals[s] / hosts.size
        psvm = pl.solve_psvm(sc, x, n, delays, loads, solver)
        out["y1"] = psvm.y1.tolist()
        out["y2"] = psvm.y2.tolist()
        out["candidates"] = {str(s): list(c) for s, c in psvm.candidates.items()}
        out["degraded"] = psvm.degraded
        out["no_secondary"] = psvm.infeasible
        try:
            srp = pl.solve_srp(sc.with_status(n, NodeStatus.FAILED), x, n, inst, delays, solver)
            out["z"] = srp.z.tolist()
            out["srp_mode"] = srp.mode
            zeta = [int(s) for s in np.flatnonzero(x[n])]
            out["merged"] = pl.merge_recovery(x, srp.z, n, zeta, srp.residual, sc.resources).tolist()
        except pl.RecoveryImpossible as exc:
            out["z"] = None
            out["srp_error"] = str(exc)
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def cmd_gen_trace(args) -> int:
    if args.vehicles < 1:
        _fail(EXIT_INVALID, "--vehicles must be >= 1")
    if args.windows < 1 or args.window_seconds < 1:
        _fail(EXIT_INVALID, "--windows and --window-seconds must be >= 1")
    try:
        box = Box(*[float(v) for v in args.box.split(",")])
    except (TypeError, ValueError):
        _fail(EXIT_INVALID, f"bad --box {args.box!r}")
    if box.width < 0 or box.height < 0:
        _fail(EXIT_INVALID, "box has negative extent")
    pts = synth_trace(args.vehicles, args.windows, box, args.mobility, args.seed, args.window_seconds, args.speed)
    buf = io.StringIO()
    write_canonical(pts, buf)
    out = Path(args.out)
    _write_all(out.parent if str(out.parent) else Path("."), {out.name: buf.getvalue()})
    print(f"{len(pts)} points written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="resplace", description="Attack-resilient edge service placement simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="scenario INI file (default: built-in nine-node scenario)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--window-seconds", type=int)
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--q-threshold", type=float)
        sp.add_argument("--prop-speed", type=float, help="m/s")
        sp.add_argument("--critic-widths", help="hidden widths, e.g. 512,256,64,32")

    def sim_args(sp):
        common(sp)
        sp.add_argument("--trace", help="trace file (overrides the config)")
        sp.add_argument("--format", choices=[f.value for f in TraceFormat])
        sp.add_argument("--out", default="out")
        sp.add_argument("--record-timings", action="store_true",
                        help="include solver wall times (outputs are then no longer byte-reproducible)")

    r = sub.add_parser("run", help="simulate one mode")
    sim_args(r)
    r.add_argument("--mode", choices=["ours", "br"], default="ours")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="simulate both modes on the same windows")
    sim_args(c)
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("solve-once", help="solve SP (and PSVM/SRP with --fail-node) for one demand vector")
    common(s)
    s.add_argument("--demand", required=True, help="per-service arrivals, comma-separated")
    s.add_argument("--delays", required=True, help="JSON |E| x |S| access delay matrix in ms, or a file")
    s.add_argument("--fail-node", type=int)
    s.add_argument("--solver", choices=sorted(SOLVERS), default="auto")
    s.set_defaults(func=cmd_solve_once)

    g = sub.add_parser("gen-trace", help="write a synthetic trace in canonical CSV")
    g.add_argument("--vehicles", type=int, default=240)
    g.add_argument("--windows", type=int, default=12)
    g.add_argument("--window-seconds", type=int, default=60)
    g.add_argument("--mobility", choices=[m.value for m in Mobility], default="randomwaypoint")
    g.add_argument("--speed", type=float, default=10.0, help="m/s, random waypoint only")
    g.add_argument("--box", default="0,0,15000,15000")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_trace)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except sim.ScenarioError as exc:
        print(f"error: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
