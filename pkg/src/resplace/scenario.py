"""Domain types, scenario configuration and independent constraint checks.

The checkers here deliberately share nothing with the program builders in
:mod:`resplace.placement`; they re-derive every constraint from the plain
matrices so a solver bug cannot hide behind a builder bug.

Config file grammar (INI, three flat sections)::

    [services]
    resource_units = 10, 12, 14, 16, 18, 20, 22, 24   ; R_s, one per service
    delay_thresholds_ms = 50, 60, 70, 80, 90, 100, 110, 120
    labels = cam, diag, ...                             ; optional

    [nodes]
    grid = 3x3                 ; nodes at cell centres of the bounding box
    positions = 2500:2500, ... ; alternative to grid, x:y meters from the box origin
    capacity = 100             ; one value for all nodes, or one per node

    [sim]
    instance_capacity = 30
    alpha = 0.5
    prop_speed = 1e6           ; m/s
    bounding_box = 0, 0, 15000, 15000
    q_threshold = 0.5
    window_seconds = 60
    attacks = 6@4, 14@2        ; window@node
    restores = 10@4            ; window@node
    seed = 7
    critic_widths = 32, 16     ; hidden layers; 512, 256, 64, 32 for the full-size critic
    learning_rate = 0.01
    batch_size = 100
    update_every = 5
    train_iterations = 20
    trace = demo_trace.csv     ; relative to the config file
    trace_format = canonical
    synth_vehicles = 240       ; used when no trace is given
    synth_windows = 12
    synth_mobility = randomwaypoint
"""
from __future__ import annotations

import configparser
import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

Point = tuple[float, float]


class NodeStatus(str, enum.Enum):
    OPERATIONAL = "Operational"
    FAILED = "Failed"


@dataclass(frozen=True)
class ServiceType:
    id: int
    resource_units: int
    delay_threshold: float  # ms
    label: str = ""


@dataclass(frozen=True)
class EdgeNode:
    id: int
    position: Point
    capacity: int
    status: NodeStatus = NodeStatus.OPERATIONAL


@dataclass(frozen=True)
class ServiceRequest:
    vehicle: int
    location: Point
    time: int
    service: int


@dataclass(frozen=True)
class Box:
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    def contains(self, p: Point) -> bool:
        return self.x0 <= p[0] <= self.x1 and self.y0 <= p[1] <= self.y1


@dataclass
class Scenario:
    services: list[ServiceType]
    nodes: list[EdgeNode]
    instance_capacity: int = 30
    alpha: float = 0.5
    prop_speed: float = 1e6
    bounding_box: Box = Box(0.0, 0.0, 15000.0, 15000.0)
    q_threshold: float = 0.5
    attack_schedule: list[tuple[int, int]] = field(default_factory=list)
    restore_schedule: list[tuple[int, int]] = field(default_factory=list)
    window_seconds: int = 60
    seed: int = 0
    critic_widths: tuple[int, ...] = (32, 16)
    learning_rate: float = 0.01
    batch_size: int = 100
    update_every: int = 5  # windows between critic updates
    train_iterations: int = 20  # gradient steps per update
    trace: str | None = None
    trace_format: str = "canonical"
    synth_vehicles: int = 240
    synth_windows: int = 12
    synth_mobility: str = "randomwaypoint"

    @property
    def n_services(self) -> int:
        return len(self.services)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def resources(self) -> np.ndarray:
        return np.array([s.resource_units for s in self.services], dtype=float)

    @property
    def thresholds(self) -> np.ndarray:
        return np.array([s.delay_threshold for s in self.services], dtype=float)

    @property
    def capacities(self) -> np.ndarray:
        return np.array([n.capacity for n in self.nodes], dtype=float)

    @property
    def positions(self) -> list[Point]:
        return [n.position for n in self.nodes]

    def operational(self) -> list[int]:
        return [n.id for n in self.nodes if n.status is NodeStatus.OPERATIONAL]

    def with_status(self, node: int, status: NodeStatus) -> "Scenario":
        nodes = [replace(n, status=status) if n.id == node else n for n in self.nodes]
        return replace(self, nodes=nodes)


def grid_nodes(rows: int, cols: int, box: Box, capacity: int | Sequence[int] = 100) -> list[EdgeNode]:
    caps = [capacity] * (rows * cols) if isinstance(capacity, int) else list(capacity)
    nodes = []
    for r in range(rows):
        for c in range(cols):
            k = r * cols + c
            pos = (box.x0 + (c + 0.5) * box.width / cols, box.y0 + (r + 0.5) * box.height / rows)
            nodes.append(EdgeNode(k, pos, int(caps[k])))
    return nodes


def default_scenario(**overrides) -> Scenario:
    """Nine nodes on a 3x3 grid over 15x15 km, eight services, C_e = 100, capacity 30."""
    box = Box(0.0, 0.0, 15000.0, 15000.0)
    services = [ServiceType(s, 10 + 2 * s, 50.0 + 10 * s, f"svc{s}") for s in range(8)]
    sc = Scenario(services=services, nodes=grid_nodes(3, 3, box, 100), bounding_box=box)
    return replace(sc, **overrides)


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


def validate_scenario(s: Scenario) -> list[Violation]:
    out: list[Violation] = []

    def bad(code, msg):
        out.append(Violation(code, msg))

    if not (0.0 <= s.alpha <= 1.0):
        bad("alpha_out_of_range", f"alpha out of range: {s.alpha}")
    if not isinstance(s.instance_capacity, int) or s.instance_capacity < 1:
        bad("instance_capacity", f"instance capacity must be >= 1, got {s.instance_capacity}")
    if not (s.prop_speed > 0 and math.isfinite(s.prop_speed)):
        bad("prop_speed", f"propagation speed must be positive, got {s.prop_speed}")
    if not (0.0 <= s.q_threshold <= 1.0):
        bad("q_threshold_out_of_range", f"q_threshold out of range: {s.q_threshold}")
    if s.window_seconds <= 0:
        bad("window_seconds", "window length must be positive")
    if not s.critic_widths or min(s.critic_widths) < 1:
        bad("critic_widths", "critic hidden widths must be positive")
    if not (s.learning_rate > 0 and s.batch_size >= 1 and s.update_every >= 1 and s.train_iterations >= 0):
        bad("critic_schedule", "learning_rate, batch_size, update_every must be positive")
    box = s.bounding_box
    if not (box.width >= 0 and box.height >= 0):
        bad("bounding_box", "bounding box has negative extent")

    if [sv.id for sv in s.services] != list(range(len(s.services))):
        bad("service_ids", "service ids must be dense 0..|S|-1 in order")
    for sv in s.services:
        if sv.resource_units <= 0:
            bad("resource_units", f"service {sv.id}: resource units must be positive")
        if not sv.delay_threshold > 0:
            bad("delay_threshold", f"service {sv.id}: delay threshold must be positive")
    if [n.id for n in s.nodes] != list(range(len(s.nodes))):
        bad("node_ids", "node ids must be dense 0..|E|-1 in order")
    for n in s.nodes:
        if n.capacity <= 0:
            bad("node_capacity", f"node {n.id}: capacity must be positive")
        if not all(math.isfinite(c) for c in n.position):
            bad("node_position", f"node {n.id}: position not finite")

    node_ids = {n.id for n in s.nodes}
    for w, node in list(s.attack_schedule) + list(s.restore_schedule):
        if node not in node_ids:
            bad("schedule_node", f"schedule references unknown node {node}")
    if any(w < 2 for w, _ in s.attack_schedule):
        bad("attack_before_placement", "attacks need a placement to hit; earliest attack window is 2")
    windows = [w for w, _ in s.attack_schedule]
    if len(set(windows)) != len(windows):
        bad("overlapping_attacks", "overlapping attacks: two attacks in the same window")
    elif windows != sorted(windows):
        bad("attack_order", "attack windows must be strictly increasing")
    else:
        failed: int | None = None
        events = sorted(
            [(w, 0, n) for w, n in s.restore_schedule] + [(w, 1, n) for w, n in s.attack_schedule]
        )
        for w, kind, n in events:
            if kind == 1:
                if failed is not None:
                    bad("overlapping_attacks", f"overlapping attacks: node {n} attacked at window {w} while node {failed} is down")
                    break
                failed = n
            else:
                if failed != n:
                    bad("restore_without_attack", f"restore of node {n} at window {w} but it is not failed")
                    break
                failed = None
    n_failed = sum(n.status is NodeStatus.FAILED for n in s.nodes)
    if n_failed > 1:
        bad("multiple_failed", "at most one node may be failed at a time")
    return out


@dataclass
class CheckResult:
    ok: bool
    violations: list[str]

    def __bool__(self) -> bool:
        return self.ok


def check_sp_solution(s: Scenario, demand, delays, x, tol: float = 1e-9) -> CheckResult:
    """Check a placement matrix against instance count, delay, capacity and binary rules.

    ``demand`` is the per-service instance count I_s, ``delays`` the |E|x|S|
    mean access delay in ms.  Failed nodes must host nothing.
    """
    x = np.asarray(x)
    d = np.asarray(delays, dtype=float)
    demand = np.asarray(demand)
    E, S = s.n_nodes, s.n_services
    if x.shape != (E, S) or d.shape != (E, S) or demand.shape != (S,):
        raise ValueError(f"dimension mismatch: x {x.shape}, delays {d.shape}, demand {demand.shape} vs ({E}, {S})")
    v = []
    if not np.isin(x, (0, 1)).all():
        v.append("binary: entries not binary")
        return CheckResult(False, v)
    for j in range(S):
        placed = int(x[:, j].sum())
        if placed != int(demand[j]):
            v.append(f"instance_count: service {j} has {placed} instances, needs {int(demand[j])}")
    for e in range(E):
        for j in range(S):
            if x[e, j] and d[e, j] > s.services[j].delay_threshold + tol:
                v.append(f"delay_threshold: service {j} at node {e} delay {d[e, j]:.3f} > {s.services[j].delay_threshold}")
    for e, node in enumerate(s.nodes):
        used = sum(int(x[e, j]) * s.services[j].resource_units for j in range(S))
        if used > node.capacity:
            v.append(f"capacity: node {e} uses {used} > capacity {node.capacity}")
        if node.status is NodeStatus.FAILED and x[e].any():
            v.append(f"failed_node: node {e} is failed but hosts services")
    return CheckResult(not v, v)


# ---------------------------------------------------------------------------
# config files


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def _events(text: str) -> list[tuple[int, int]]:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        w, _, n = tok.partition("@")
        out.append((int(w), int(n)))
    return out


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read(path)
        return _from_config(cp, path.parent)
    except (configparser.Error, ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _from_config(cp: configparser.ConfigParser, base: Path) -> Scenario:
    for sec in ("services", "nodes", "sim"):
        if not cp.has_section(sec):
            raise ConfigError(f"missing section [{sec}]")
    sv = cp["services"]
    res = _floats(sv["resource_units"])
    thr = _floats(sv["delay_thresholds_ms"])
    if len(res) != len(thr):
        raise ConfigError("resource_units and delay_thresholds_ms differ in length")
    labels = [t.strip() for t in sv.get("labels", "").split(",") if t.strip()] or [f"svc{i}" for i in range(len(res))]
    services = [ServiceType(i, int(r), float(d), labels[i] if i < len(labels) else f"svc{i}")
                for i, (r, d) in enumerate(zip(res, thr))]

    sim = cp["sim"]
    bb = _floats(sim.get("bounding_box", "0,0,15000,15000"))
    if len(bb) != 4:
        raise ConfigError("bounding_box needs four numbers")
    box = Box(*bb)

    nd = cp["nodes"]
    caps = [int(c) for c in _floats(nd.get("capacity", "100"))]
    if "positions" in nd:
        pos = []
        for tok in nd["positions"].split(","):
            xs, _, ys = tok.strip().partition(":")
            pos.append((float(xs), float(ys)))
        caps = caps * len(pos) if len(caps) == 1 else caps
        if len(caps) != len(pos):
            raise ConfigError("capacity list length differs from positions")
        nodes = [EdgeNode(i, p, caps[i]) for i, p in enumerate(pos)]
    else:
        r, _, c = nd.get("grid", "3x3").lower().partition("x")
        rows, cols = int(r), int(c)
        caps = caps * (rows * cols) if len(caps) == 1 else caps
        # node coordinates share the trace frame, which is re-based to the box origin
        nodes = grid_nodes(rows, cols, Box(0.0, 0.0, box.width, box.height), caps)

    trace = sim.get("trace")
    if trace:
        trace = str((base / trace).resolve()) if not Path(trace).is_absolute() else trace
    return Scenario(
        services=services,
        nodes=nodes,
        instance_capacity=sim.getint("instance_capacity", 30),
        alpha=sim.getfloat("alpha", 0.5),
        prop_speed=sim.getfloat("prop_speed", 1e6),
        bounding_box=box,
        q_threshold=sim.getfloat("q_threshold", 0.5),
        attack_schedule=_events(sim.get("attacks", "")),
        restore_schedule=_events(sim.get("restores", "")),
        window_seconds=sim.getint("window_seconds", 60),
        seed=sim.getint("seed", 0),
        critic_widths=tuple(int(w) for w in _floats(sim.get("critic_widths", "32,16"))),
        learning_rate=sim.getfloat("learning_rate", 0.01),
        batch_size=sim.getint("batch_size", 100),
        update_every=sim.getint("update_every", 5),
        train_iterations=sim.getint("train_iterations", 20),
        trace=trace or None,
        trace_format=sim.get("trace_format", "canonical").lower(),
        synth_vehicles=sim.getint("synth_vehicles", 240),
        synth_windows=sim.getint("synth_windows", 12),
        synth_mobility=sim.get("synth_mobility", "randomwaypoint").lower(),
    )
