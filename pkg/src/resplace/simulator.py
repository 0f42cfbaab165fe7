"""Window-by-window simulation of the resilient placement loop and the BR baseline.

Mode tags per window:

    PrA-SP     no node down
    PoA-PSVM   the attack window; affected vehicles run on secondary hosts
    PoA-SRP    later windows while the attacked node stays down
    BR-pre / BR-post   baseline before / from the attack window on

Window numbers come from the request windows (1-based).  Attack and
restore events take effect at the start of their window.
"""
from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import drl
from . import placement as pl
from .delaymodel import QueueLoad, delay_matrix, is_overload, md1_wait, propagation_delay
from .scenario import NodeStatus, Scenario, ServiceRequest, validate_scenario
from .traces import RequestWindow

CSV_COLUMNS = ["window", "mode", "service", "mean_delay_ms", "node", "usage_pct",
               "active_nodes", "phase", "solve_ms", "flags"]


class ScenarioError(ValueError):
    def __init__(self, violations):
        self.violations = violations
        super().__init__("; ".join(v.message for v in violations))


@dataclass
class WindowMetrics:
    window: int
    mode: str
    arrivals: list[int]
    delay: list[float | None]  # per-service mean over served requests, ms
    mean_delay: float | None  # over all served requests
    usage: list[float]  # per node, percent of C_e
    occupied: float  # resource units in use, reserved backups included
    active_nodes: int
    placed: list[int]  # instances per service in the serving placement
    instances: list[int]  # I_s of the window
    mapped: int
    unserved: int
    unserved_by_service: list[int]
    failed_node: int | None
    failed_node_used: bool
    queued: bool  # any instance had a nonzero wait
    flags: list[str] = field(default_factory=list)
    timings: list[tuple[str, float]] = field(default_factory=list)
    decision: dict = field(default_factory=dict)

    @property
    def degraded(self) -> bool:
        return bool(self.flags)


@dataclass
class MetricsLog:
    mode: str  # "ours" or "br"
    windows: list[WindowMetrics] = field(default_factory=list)
    critic_losses: list[float] = field(default_factory=list)
    critic: drl.CriticNet | None = None

    def add(self, m: WindowMetrics) -> None:
        if any(w.window == m.window for w in self.windows):
            raise ValueError(f"window {m.window} logged twice")
        self.windows.append(m)

    def timings(self, phase: str) -> list[float]:
        return [t for w in self.windows for p, t in w.timings if p == phase]


@dataclass
class SimState:
    scenario: Scenario
    actor: drl.ActorState
    window: int = 0
    x: np.ndarray | None = None  # placement serving the current window
    v2e: pl.V2EMap | None = None

    @property
    def failed_node(self) -> int | None:
        down = [n.id for n in self.scenario.nodes if n.status is NodeStatus.FAILED]
        return down[0] if down else None


def inject_attack(state: SimState, node: int, requests: Sequence[ServiceRequest] = ()):
    """Fail ``node``; return the new state, the services it hosted and the requests mapped to it."""
    sc = state.scenario
    if not 0 <= node < sc.n_nodes:
        raise ValueError(f"unknown node {node}")
    if sc.nodes[node].status is NodeStatus.FAILED:
        raise ValueError(f"node {node} is already failed")
    new = SimState(sc.with_status(node, NodeStatus.FAILED), state.actor, state.window, state.x, state.v2e)
    if state.actor.x is None:
        return new, [], []
    v2e = state.v2e
    if requests:
        v2e = pl.primary_v2e_map(state.actor.x, requests, sc.instance_capacity, sc.positions, allow_unmapped=True)
    if v2e is None:
        return new, [int(s) for s in np.flatnonzero(state.actor.x[node])], []
    zeta, affected = pl.attack_impact(state.actor.x, v2e, node)
    return new, zeta, affected


# ---------------------------------------------------------------------------
# observation


def observe(scenario: Scenario, requests: Sequence[ServiceRequest], node_of: Sequence[int],
            redirected: set[int]) -> tuple[list[float | None], bool, bool]:
    """Per-request observed delay (None when unserved), whether any queue formed, whether any instance overloaded.

    Redirected requests join the target instance's queue on top of its own
    traffic; everyone on that instance sees the same wait.
    """
    E, S = scenario.n_nodes, scenario.n_services
    base = np.zeros((E, S))
    extra = np.zeros((E, S))
    for k, (r, e) in enumerate(zip(requests, node_of)):
        if e >= 0:
            (extra if k in redirected else base)[e, r.service] += 1
    cap = scenario.instance_capacity
    waits = {}
    out: list[float | None] = []
    queued = overloaded = False
    for r, e in zip(requests, node_of):
        if e < 0:
            out.append(None)
            continue
        key = (e, r.service)
        if key not in waits:
            waits[key] = md1_wait(QueueLoad(base[key], extra[key], cap), scenario.window_seconds)
        wait = waits[key]
        if is_overload(wait):
            overloaded = True
            out.append(None)
            continue
        queued = queued or wait > 0
        out.append(propagation_delay(r.location, scenario.nodes[e].position, scenario.prop_speed) + wait)
    return out, queued, overloaded


def _per_service(requests, delays, S):
    buckets: list[list[float]] = [[] for _ in range(S)]
    unserved = np.zeros(S, dtype=np.int64)
    for r, dl in zip(requests, delays):
        if dl is None:
            unserved[r.service] += 1
        else:
            buckets[r.service].append(dl)
    means = [math.fsum(b) / len(b) if b else None for b in buckets]
    return means, unserved


def _metrics(scenario: Scenario, window: RequestWindow, mode: str, x, occupied_x, node_of, redirected,
             instances, flags, timings, decision) -> WindowMetrics:
    S, E = scenario.n_services, scenario.n_nodes
    reqs = window.requests
    delays, queued, overloaded = observe(scenario, reqs, node_of, redirected)
    flags = list(flags)
    if overloaded:
        flags.append("overload")
    means, unserved = _per_service(reqs, delays, S)
    served = [d for d in delays if d is not None]
    failed = next((n.id for n in scenario.nodes if n.status is NodeStatus.FAILED), None)
    R = scenario.resources
    if occupied_x is None:
        usage = [0.0] * E
        occupied = 0.0
        placed = [0] * S
        active = 0
    else:
        used = occupied_x @ R
        usage = [float(100.0 * used[e] / scenario.nodes[e].capacity) for e in range(E)]
        occupied = float(used.sum())
        placed = [int(v) for v in np.asarray(x).sum(axis=0)]
        active = int((occupied_x.sum(axis=1) > 0).sum())
    if int(unserved.sum()) and "unserved" not in flags:
        flags.append("unserved")
    return WindowMetrics(
        window=window.index, mode=mode, arrivals=[int(a) for a in window.arrivals],
        delay=means, mean_delay=math.fsum(served) / len(served) if served else None,
        usage=usage, occupied=occupied, active_nodes=active, placed=placed,
        instances=[int(i) for i in instances], mapped=len(served), unserved=int(unserved.sum()),
        unserved_by_service=[int(u) for u in unserved],
        failed_node=failed,
        failed_node_used=failed is not None and any(e == failed for e in node_of),
        queued=queued, flags=flags, timings=list(timings), decision=decision,
    )


def _matrix(x) -> list[list[int]] | None:
    return None if x is None else [[int(v) for v in row] for row in np.asarray(x)]


# ---------------------------------------------------------------------------
# runs


def _events(scenario: Scenario):
    return dict(scenario.attack_schedule), dict(scenario.restore_schedule)


def run(scenario: Scenario, windows: Sequence[RequestWindow], mode: str = "ours") -> MetricsLog:
    problems = validate_scenario(scenario)
    if problems:
        raise ScenarioError(problems)
    if not windows:
        raise ValueError("no request windows to simulate")
    mode = mode.lower()
    if mode == "ours":
        return _run_ours(scenario, windows)
    if mode == "br":
        return _run_br(scenario, windows)
    raise ValueError(f"unknown mode {mode!r}")


def _run_ours(scenario: Scenario, windows: Sequence[RequestWindow]) -> MetricsLog:
    attacks, restores = _events(scenario)
    S = scenario.n_services
    net = drl.CriticNet.init((drl.feature_dim(S), *scenario.critic_widths, 1), scenario.seed)
    log = MetricsLog("ours")
    state = SimState(scenario, drl.ActorState())
    q = None
    feats: list[np.ndarray] = []
    targets: list[float] = []
    for win in windows:
        w = win.index
        state.window = w
        attack_node = None
        if w in restores:
            state.scenario = state.scenario.with_status(restores[w], NodeStatus.OPERATIONAL)
            state.actor = drl.ActorState()  # forces one SP re-solve
        if w in attacks:
            state, _, _ = inject_attack(state, attacks[w])
            attack_node = attacks[w]
        sc = state.scenario
        inst = pl.compute_instances(win.arrivals, sc.instance_capacity)
        dm = delay_matrix(win.requests, sc, w).d
        dec = drl.actor_decide(state.actor, sc, win.requests, dm, inst, q, attack_node)
        state.actor = dec.state
        state.x = dec.x
        state.v2e = dec.v2e

        node_of = list(dec.v2e.node) if dec.v2e is not None else [-1] * len(win.requests)
        for k, e in dec.redirected.items():
            node_of[k] = e
        for k in dec.unserved:
            node_of[k] = -1
        if attack_node is not None:
            tag = "PoA-PSVM"
        elif state.failed_node is not None:
            tag = "PoA-SRP"
        else:
            tag = "PrA-SP"
        decision = {
            "actions": dec.actions, "x": _matrix(dec.x),
            "redirected": len(dec.redirected), "zeta": dec.zeta, "affected": len(dec.affected),
            "q_value": q,
        }
        if dec.srp is not None:
            decision["srp_mode"] = dec.srp.mode
            decision["z"] = _matrix(dec.srp.z)
            decision["next_x"] = _matrix(dec.state.x)
        m = _metrics(sc, win, tag, dec.x, dec.x, node_of, set(dec.redirected), inst, dec.flags,
                     dec.timings, decision)
        log.add(m)

        # feedback and critic schedule
        delays = [0.0 if d is None else d for d in m.delay]
        record = drl.FeedbackRecord(w, delays, win.arrivals, attack_node is not None, m.unserved_by_service)
        feats.append(drl.featurize(record, sc))
        targets.append(drl.window_target(record, sc))
        feats, targets = feats[-scenario.batch_size:], targets[-scenario.batch_size:]
        if w % scenario.update_every == 0:
            batch = drl.TrainBatch(np.array(feats), np.array(targets))
            for _ in range(scenario.train_iterations):
                net, loss = drl.critic_train_step(net, batch, scenario.learning_rate)
                log.critic_losses.append(loss)
        q = drl.critic_forward(net, drl.featurize(record, sc))
    log.critic = net
    return log


def _run_br(scenario: Scenario, windows: Sequence[RequestWindow]) -> MetricsLog:
    """Backup reservation: SP with one extra instance per service, the farthest held in reserve.

    The reserve of a service whose instance is lost takes over its vehicles.
    The placement is re-solved whenever instance counts change, after the
    attack window, and on restoration.
    """
    attacks, restores = _events(scenario)
    log = MetricsLog("br")
    sc = scenario
    cached: pl.BRPlacement | None = None
    cached_inst = None
    cap = scenario.instance_capacity
    for win in windows:
        w = win.index
        flags: list[str] = []
        timings: list[tuple[str, float]] = []
        attack_node = attacks.get(w)
        if w in restores:
            sc = sc.with_status(restores[w], NodeStatus.OPERATIONAL)
            cached = None
        inst = pl.compute_instances(win.arrivals, cap)
        dm = delay_matrix(win.requests, sc, w).d
        if cached is None or not np.array_equal(cached_inst, inst):
            cached = pl.br_placement(sc, inst, dm)
            cached_inst = inst
            timings.append(("BR", cached.result.wall_time))
        if attack_node is not None:
            sc = sc.with_status(attack_node, NodeStatus.FAILED)
        failed = next((n.id for n in sc.nodes if n.status is NodeStatus.FAILED), None)
        tag = "BR-pre" if failed is None else "BR-post"
        if not cached.feasible:
            flags.append("br_infeasible")
            node_of = [-1] * len(win.requests)
            m = _metrics(sc, win, tag, None, None, node_of, set(), inst, flags, timings,
                         {"actions": ["br"], "x": None})
            log.add(m)
            cached = None
            continue
        active = cached.active
        v2e = pl.primary_v2e_map(active, win.requests, cap, sc.positions, allow_unmapped=True)
        node_of = list(v2e.node)
        redirected: dict[int, int] = {}
        held = cached.x
        decision = {"actions": ["br"], "x": _matrix(cached.x), "backup": {str(s): e for s, e in cached.backup.items()}}
        if attack_node is not None:
            n = attack_node
            zeta, affected = pl.attack_impact(active, v2e, n)
            serving = active.copy()
            serving[n, :] = 0
            fallback: dict[int, int | None] = {}
            for s in zeta:
                b = cached.backup[s]
                if b != n:
                    serving[b, s] = 1
                else:
                    psi = pl.secondary_delays(sc, active, n, *pl.psvm_inputs(sc, win.requests, v2e, n))
                    col = psi[:, s]
                    ok = [e for e in range(sc.n_nodes) if math.isfinite(col[e])]
                    fallback[s] = min(ok, key=lambda e: (col[e], e)) if ok else None
                    flags.append(f"no_backup:s{s}")
            for k in affected:
                s = win.requests[k].service
                target = fallback[s] if s in fallback else cached.backup[s]
                if target is None:
                    node_of[k] = -1
                else:
                    node_of[k] = target
                    redirected[k] = target
            held = cached.x.copy()
            held[n, :] = 0
            decision.update({"actions": ["br", "activate-backup"], "zeta": zeta, "affected": len(affected),
                             "redirected": len(redirected)})
            active = serving
            cached = None  # re-solve on the surviving nodes next window
        m = _metrics(sc, win, tag, active, held, node_of, set(redirected), inst, flags, timings, decision)
        log.add(m)
    return log


# ---------------------------------------------------------------------------
# comparison and summaries


def _mean(vals):
    vals = [v for v in vals if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


def _first_attack(scenario: Scenario) -> int | None:
    return min((w for w, _ in scenario.attack_schedule), default=None)


def summarize(log: MetricsLog, scenario: Scenario, record_timings: bool = False) -> dict:
    first = _first_attack(scenario)
    pre = [w for w in log.windows if first is None or w.window < first]
    post = [w for w in log.windows if first is not None and w.window >= first]
    flags: dict[str, int] = {}
    for w in log.windows:
        for f in w.flags:
            key = f.split(":")[0]
            flags[key] = flags.get(key, 0) + 1
    out = {
        "mode": log.mode,
        "windows": len(log.windows),
        "requests": sum(sum(w.arrivals) for w in log.windows),
        "unserved": sum(w.unserved for w in log.windows),
        "mean_delay_ms": _mean([w.mean_delay for w in log.windows]),
        "mean_delay_pre_attack_ms": _mean([w.mean_delay for w in pre]),
        "mean_delay_post_attack_ms": _mean([w.mean_delay for w in post]),
        "mean_occupied_units_pre_attack": _mean([w.occupied for w in pre]),
        "mean_occupied_units_post_attack": _mean([w.occupied for w in post]),
        "mean_active_nodes_pre_attack": _mean([w.active_nodes for w in pre]),
        "mean_active_nodes_post_attack": _mean([w.active_nodes for w in post]),
        "degraded_windows": sum(1 for w in log.windows if w.flags),
        "flags": dict(sorted(flags.items())),
        "modes": {tag: sum(1 for w in log.windows if w.mode == tag)
                  for tag in sorted({w.mode for w in log.windows})},
    }
    if log.mode == "ours":
        out["critic_updates"] = len(log.critic_losses)
        out["critic_last_loss"] = log.critic_losses[-1] if log.critic_losses else None
    if record_timings:
        out["solve_ms_median"] = {
            p: 1000 * statistics.median(ts) for p in ("PrA-SP", "PoA-PSVM", "PoA-SRP", "BR")
            if (ts := log.timings(p))
        }
    return out


@dataclass
class Comparison:
    ours: MetricsLog
    br: MetricsLog
    summary: dict


def compare(scenario: Scenario, windows: Sequence[RequestWindow], record_timings: bool = False) -> Comparison:
    ours = run(scenario, windows, "ours")
    br = run(scenario, windows, "br")
    s_ours = summarize(ours, scenario, record_timings)
    s_br = summarize(br, scenario, record_timings)
    br_ok = not any("br_infeasible" in w.flags for w in br.windows)
    first = _first_attack(scenario)
    pairs = [(o, b) for o, b in zip(ours.windows, br.windows) if first is None or o.window < first]

    def delta(key):
        if not br_ok or s_ours[key] is None or s_br[key] is None:
            return None
        return s_br[key] - s_ours[key]

    summary = {
        "br_feasible": br_ok,
        "sum_resource_units": float(scenario.resources.sum()),
        "ours": s_ours,
        "br": s_br if br_ok else None,
        "delta_br_minus_ours": {
            "mean_delay_pre_attack_ms": delta("mean_delay_pre_attack_ms"),
            "mean_delay_post_attack_ms": delta("mean_delay_post_attack_ms"),
            "occupied_units_pre_attack": (
                _mean([b.occupied - o.occupied for o, b in pairs
                       if "sp_infeasible" not in o.flags and "structurally_infeasible" not in o.flags])
                if br_ok else None),
            "active_nodes_pre_attack": delta("mean_active_nodes_pre_attack"),
            "active_nodes_post_attack": delta("mean_active_nodes_post_attack"),
        },
    }
    if record_timings:
        sp = ours.timings("PrA-SP")
        if sp:
            base = statistics.median(sp)
            summary["runtime_ratio_to_sp"] = {
                p: statistics.median(ts) / base for p, ts in
                (("PoA-PSVM", ours.timings("PoA-PSVM")), ("PoA-SRP", ours.timings("PoA-SRP")),
                 ("BR", br.timings("BR"))) if ts
            }
    return Comparison(ours, br, summary)


# ---------------------------------------------------------------------------
# writers


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def metrics_csv(log: MetricsLog, record_timings: bool = False) -> str:
    """One row per window per metric group: window summary, services, nodes, solver phases."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_COLUMNS)
    for w in log.windows:
        flags = "|".join(w.flags)
        wr.writerow([w.window, w.mode, "", _fmt(w.mean_delay), "", "", w.active_nodes, "", "", flags])
        for s, d in enumerate(w.delay):
            wr.writerow([w.window, w.mode, s, _fmt(d), "", "", "", "", "", ""])
        for e, u in enumerate(w.usage):
            wr.writerow([w.window, w.mode, "", "", e, _fmt(u), "", "", "", ""])
        if record_timings:
            for phase, t in w.timings:
                wr.writerow([w.window, w.mode, "", "", "", "", "", phase, _fmt(1000.0 * t), ""])
    return buf.getvalue()


def decisions_json(log: MetricsLog) -> str:
    doc = {"mode": log.mode,
           "windows": [{"window": w.window, "mode": w.mode, "flags": w.flags, **w.decision} for w in log.windows]}
    return json.dumps(doc, indent=1, sort_keys=True)


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)
