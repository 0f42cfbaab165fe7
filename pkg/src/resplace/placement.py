"""Placement programs: SP, PSVM, SRP, the BR baseline and V2E mapping.

Matrices are indexed ``[node, service]`` throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import bip
from .bip import EQ, GE, LE, BinaryProgram, SolveResult, Status
from .delaymodel import OVERLOAD, QueueLoad, access_delay, md1_wait
from .scenario import NodeStatus, Point, Scenario, ServiceRequest

Solver = Callable[[BinaryProgram], SolveResult]


class PlacementError(Exception):
    pass


class StructurallyInfeasible(PlacementError):
    pass


class RecoveryImpossible(PlacementError):
    pass


class UnmappedRequests(PlacementError):
    pass


def compute_instances(arrivals, capacity: int) -> np.ndarray:
    if capacity < 1:
        raise ValueError("instance capacity must be >= 1")
    a = np.asarray(arrivals, dtype=np.int64)
    return -(-a // capacity)


@dataclass
class DemandProfile:
    arrivals: np.ndarray
    instances: np.ndarray

    @classmethod
    def from_arrivals(cls, arrivals, capacity: int) -> "DemandProfile":
        a = np.asarray(arrivals, dtype=np.int64)
        return cls(a, compute_instances(a, capacity))


@dataclass
class Model:
    """A built program plus the (node, service) cell behind each variable."""

    program: BinaryProgram
    cells: list[tuple[int, int]]
    shape: tuple[int, int]

    def decode(self, assignment: Sequence[int]) -> np.ndarray:
        m = np.zeros(self.shape, dtype=np.int8)
        for (e, s), v in zip(self.cells, assignment):
            if v:
                m[e, s] = 1
        return m


# ---------------------------------------------------------------------------
# SP


def build_sp(scenario: Scenario, instances, delays) -> Model:
    inst = np.asarray(instances, dtype=np.int64)
    d = np.asarray(delays, dtype=float)
    E, S = scenario.n_nodes, scenario.n_services
    ops = scenario.operational()
    too_many = [s for s in range(S) if inst[s] > len(ops)]
    if too_many:
        raise StructurallyInfeasible(
            f"structurally infeasible: service(s) {too_many} need more instances than the {len(ops)} operational nodes"
        )
    alpha = scenario.alpha
    d_max = max(sv.delay_threshold for sv in scenario.services)
    R = scenario.resources
    p = BinaryProgram()
    cells = []
    index = {}
    for e in ops:
        cap = scenario.nodes[e].capacity
        for s in range(S):
            # zero demand and delay-threshold violations are eliminated up front
            if inst[s] == 0 or d[e, s] > scenario.services[s].delay_threshold:
                continue
            if R[s] > cap:
                continue
            index[e, s] = p.add_var(f"x_e{e}_s{s}")
            cells.append((e, s))
    score = {
        index[e, s]: alpha * R[s] / scenario.nodes[e].capacity + (1 - alpha) * d[e, s] / d_max
        for (e, s) in cells
    }
    groups = [{index[e, s]: score[index[e, s]] for s in range(S) if (e, s) in index} for e in ops]
    p.set_minmax(groups, tiebreak=score)
    for s in range(S):
        if inst[s] > 0:
            p.add_constraint({index[e, s]: 1 for e in ops if (e, s) in index}, EQ, int(inst[s]), f"count_s{s}")
    for e in ops:
        row = {index[e, s]: R[s] for s in range(S) if (e, s) in index}
        if row and sum(row.values()) > scenario.nodes[e].capacity:
            p.add_constraint(row, LE, scenario.nodes[e].capacity, f"capacity_e{e}")
    return Model(p, cells, (E, S))


@dataclass
class SPSolution:
    x: np.ndarray | None
    result: SolveResult

    @property
    def feasible(self) -> bool:
        return self.x is not None


def solve_sp(scenario: Scenario, instances, delays, solver: Solver = bip.solve_auto) -> SPSolution:
    model = build_sp(scenario, instances, delays)
    res = solver(model.program)
    return SPSolution(model.decode(res.assignment) if res.optimal else None, res)


# ---------------------------------------------------------------------------
# V2E mapping


@dataclass
class V2EMap:
    node: list[int]  # per request, -1 when unmapped
    load: np.ndarray  # |E| x |S| request count per instance

    @property
    def unmapped(self) -> int:
        return sum(1 for n in self.node if n < 0)


def _dist(p: Point, q: Point) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


def primary_v2e_map(x, requests: Sequence[ServiceRequest], capacity: int, positions: Sequence[Point],
                    allow_unmapped: bool = False) -> V2EMap:
    """Greedy nearest-host mapping with per-instance capacity.

    Requests closest to a host are served first; each takes the nearest
    host with spare capacity, lower node id on ties.
    """
    x = np.asarray(x)
    E, S = x.shape
    node = [-1] * len(requests)
    load = np.zeros((E, S), dtype=np.int64)
    by_service: list[list[int]] = [[] for _ in range(S)]
    for k, r in enumerate(requests):
        by_service[r.service].append(k)
    for s in range(S):
        hosts = [e for e in range(E) if x[e, s]]
        if not by_service[s]:
            continue
        ranked = {}
        for k in by_service[s]:
            loc = requests[k].location
            ranked[k] = sorted(hosts, key=lambda e: (_dist(loc, positions[e]), e))
        order = sorted(by_service[s], key=lambda k: (_dist(requests[k].location, positions[ranked[k][0]]) if hosts else 0.0, k))
        for k in order:
            for e in ranked[k]:
                if load[e, s] < capacity:
                    load[e, s] += 1
                    node[k] = e
                    break
    m = V2EMap(node, load)
    if m.unmapped and not allow_unmapped:
        raise UnmappedRequests(f"{m.unmapped} request(s) could not be mapped; placed capacity below arrivals")
    return m


def attack_impact(x, v2e: V2EMap, node: int) -> tuple[list[int], list[int]]:
    """Services hosted on ``node`` and the indices of requests mapped to it."""
    x = np.asarray(x)
    zeta = [int(s) for s in np.flatnonzero(x[node])]
    affected = [k for k, e in enumerate(v2e.node) if e == node]
    return zeta, affected


# ---------------------------------------------------------------------------
# PSVM


@dataclass
class PSVMResult:
    failed_node: int
    candidates: dict[int, tuple[int, int | None]]  # service -> (kappa1, kappa2)
    degraded: list[int]  # services with a single admissible candidate
    infeasible: list[int]  # NoFeasibleSecondary services
    psi: np.ndarray  # |E| x |S| secondary delay, inf where overloaded / not a host
    y1: np.ndarray
    y2: np.ndarray
    result: SolveResult | None = None

    @property
    def wall_time(self) -> float:
        return self.result.wall_time if self.result else 0.0


def psvm_inputs(scenario: Scenario, requests: Sequence[ServiceRequest], v2e: V2EMap, failed_node: int):
    """Access delay of the vehicles served at ``failed_node`` to every node, and the instance loads."""
    E, S = scenario.n_nodes, scenario.n_services
    affected: list[list[Point]] = [[] for _ in range(S)]
    for r, e in zip(requests, v2e.node):
        if e == failed_node:
            affected[r.service].append(r.location)
    prop = np.zeros((E, S))
    for e, nd in enumerate(scenario.nodes):
        for s in range(S):
            prop[e, s] = access_delay(affected[s], nd.position, scenario.prop_speed).ms
    return prop, v2e.load.astype(float)


def secondary_delays(scenario: Scenario, x, failed_node: int, prop, loads) -> np.ndarray:
    x = np.asarray(x)
    E, S = x.shape
    psi = np.full((E, S), np.inf)
    for s in range(S):
        if not x[failed_node, s]:
            continue
        redirected = float(loads[failed_node, s])
        for e in range(E):
            if e == failed_node or not x[e, s] or scenario.nodes[e].status is NodeStatus.FAILED:
                continue
            wait = md1_wait(QueueLoad(float(loads[e, s]), redirected, scenario.instance_capacity),
                            scenario.window_seconds)
            psi[e, s] = OVERLOAD if wait == OVERLOAD else prop[e, s] + wait
    return psi


def build_psvm(scenario: Scenario, x, failed_node: int, psi) -> tuple[Model, Model, dict]:
    """Build the secondary-mapping program for one hypothetical failed node.

    Returns the y1 and y2 decoders (sharing one program) and per-service
    admissible host lists.
    """
    x = np.asarray(x)
    E, S = x.shape
    p = BinaryProgram()
    cells1, cells2 = [], []
    admissible = {}
    costs = {}
    for s in range(S):
        if not x[failed_node, s]:
            continue
        hosts = [e for e in range(E)
                 if e != failed_node and x[e, s] and math.isfinite(psi[e, s])
                 and psi[e, s] <= scenario.services[s].delay_threshold]
        admissible[s] = hosts
        if not hosts:
            continue
        v1 = {}
        v2 = {}
        for e in hosts:
            v1[e] = p.add_var(f"y1_e{e}_s{s}")
            cells1.append((e, s))
            costs[v1[e]] = psi[e, s]
            if len(hosts) >= 2:
                v2[e] = p.add_var(f"y2_e{e}_s{s}")
                cells2.append((e, s))
                costs[v2[e]] = psi[e, s]
        p.add_constraint({v: 1 for v in v1.values()}, EQ, 1, f"kappa1_s{s}")
        if v2:
            p.add_constraint({v: 1 for v in v2.values()}, EQ, 1, f"kappa2_s{s}")
            for e in hosts:
                p.add_constraint({v1[e]: 1, v2[e]: 1}, LE, 1, f"distinct_e{e}_s{s}")
    p.set_linear(costs)
    # decoders split the shared assignment by variable label
    return _Split(p, cells1, (E, S), "y1"), _Split(p, cells2, (E, S), "y2"), admissible


class _Split(Model):
    def __init__(self, program, cells, shape, prefix):
        super().__init__(program, cells, shape)
        self.prefix = prefix

    def decode(self, assignment):
        m = np.zeros(self.shape, dtype=np.int8)
        mine = iter(self.cells)
        for label, v in zip(self.program.var_labels, assignment):
            if label.startswith(self.prefix):
                e, s = next(mine)
                m[e, s] = v
        return m


def solve_psvm(scenario: Scenario, x, failed_node: int, prop, loads, solver: Solver = bip.solve_auto) -> PSVMResult:
    psi = secondary_delays(scenario, x, failed_node, prop, loads)
    m1, m2, admissible = build_psvm(scenario, x, failed_node, psi)
    E, S = m1.shape
    res = solver(m1.program)
    if not res.optimal:  # only possible through a solver defect: every service block is satisfiable
        raise PlacementError("PSVM program unexpectedly infeasible")
    y1, y2 = m1.decode(res.assignment), m2.decode(res.assignment)
    candidates, degraded, infeasible = {}, [], []
    for s, hosts in admissible.items():
        if not hosts:
            infeasible.append(s)
            continue
        k1 = int(np.flatnonzero(y1[:, s])[0])
        if len(hosts) == 1:
            candidates[s] = (k1, None)
            degraded.append(s)
            continue
        k2 = int(np.flatnonzero(y2[:, s])[0])
        # canonical order: lower delay first, lower node id on equal delay
        if (psi[k2, s], k2) < (psi[k1, s], k1):
            k1, k2 = k2, k1
            y1[:, s], y2[:, s] = y2[:, s].copy(), y1[:, s].copy()
        candidates[s] = (k1, k2)
    return PSVMResult(failed_node, candidates, degraded, infeasible, psi, y1, y2, res)


def check_psvm_solution(scenario: Scenario, x, failed_node: int, r: PSVMResult) -> list[str]:
    """Independent check of a secondary mapping; returns violation strings."""
    x = np.asarray(x)
    v = []
    E, S = x.shape
    for s in range(S):
        hosted = bool(x[failed_node, s])
        col1, col2 = r.y1[:, s], r.y2[:, s]
        if not hosted:
            if col1.any() or col2.any():
                v.append(f"service {s} not hosted on failed node but has candidates")
            continue
        if s in r.infeasible:
            if col1.any() or col2.any():
                v.append(f"service {s} flagged infeasible but has candidates")
            continue
        want2 = 0 if s in r.degraded else 1
        if int(col1.sum()) != 1:
            v.append(f"kappa1_count: service {s} has {int(col1.sum())} kappa1 candidates")
        if int(col2.sum()) != want2:
            v.append(f"kappa2_count: service {s} has {int(col2.sum())} kappa2 candidates")
        for e in range(E):
            if col1[e] and col2[e]:
                v.append(f"distinct: service {s} uses node {e} for both candidates")
            for col, name in ((col1, "kappa1"), (col2, "kappa2")):
                if not col[e]:
                    continue
                if not x[e, s]:
                    v.append(f"no_instance: {name} of service {s} at node {e} without an instance")
                if e == failed_node:
                    v.append(f"{name} of service {s} on the failed node")
                if not (r.psi[e, s] <= scenario.services[s].delay_threshold):
                    v.append(f"delay_threshold: {name} of service {s} at node {e} delay {r.psi[e, s]} exceeds threshold")
        if col1.any() and col2.any():
            k1, k2 = int(np.argmax(col1)), int(np.argmax(col2))
            if r.psi[k1, s] > r.psi[k2, s]:
                v.append(f"kappa_order: service {s} kappa1 slower than kappa2")
    return v


# ---------------------------------------------------------------------------
# SRP


@dataclass
class SRPSolution:
    z: np.ndarray
    mode: str  # "full" or "failed-only"
    residual: np.ndarray
    results: list[SolveResult] = field(default_factory=list)

    @property
    def wall_time(self) -> float:
        return sum(r.wall_time for r in self.results)


def residual_capacity(scenario: Scenario, x) -> np.ndarray:
    x = np.asarray(x)
    return scenario.capacities - x @ scenario.resources


def build_srp(scenario: Scenario, x, failed_node: int, instances, delays, mode: str = "full") -> Model:
    """Recovery program.  ``mode='full'`` asks for I_s new instances of every
    service, ``'failed-only'`` just one per instance lost on the failed node.
    """
    x = np.asarray(x)
    inst = np.asarray(instances, dtype=np.int64)
    d = np.asarray(delays, dtype=float)
    E, S = x.shape
    R = scenario.resources
    resid = residual_capacity(scenario, x)
    nodes = [e for e in scenario.operational() if e != failed_node and resid[e] > 0]
    if mode == "full":
        need = {s: int(inst[s]) for s in range(S) if inst[s] > 0}
    elif mode == "failed-only":
        need = {s: 1 for s in range(S) if x[failed_node, s]}
    else:
        raise ValueError(f"unknown SRP mode {mode!r}")
    p = BinaryProgram()
    cells, index, costs = [], {}, {}
    for e in nodes:
        for s in need:
            if x[e, s] or d[e, s] > scenario.services[s].delay_threshold or R[s] > resid[e]:
                continue
            index[e, s] = p.add_var(f"z_e{e}_s{s}")
            cells.append((e, s))
            costs[index[e, s]] = R[s] / resid[e]
    p.set_linear(costs)
    for s, k in need.items():
        p.add_constraint({index[e, s]: 1 for e in nodes if (e, s) in index}, EQ, k, f"count_s{s}")
    for e in nodes:
        row = {index[e, s]: R[s] for s in need if (e, s) in index}
        if row and sum(row.values()) > resid[e]:
            p.add_constraint(row, LE, float(resid[e]), f"residual_e{e}")
    if sum(R[s] * k for s, k in need.items()) > sum(resid[e] for e in nodes) + 1e-9:
        # aggregate shortfall, stated as an unsatisfiable row so infeasibility is immediate
        p.add_constraint({}, GE, 1, "aggregate_capacity")
    return Model(p, cells, (E, S))


def solve_srp(scenario: Scenario, x, failed_node: int, instances, delays,
              solver: Solver = bip.solve_auto) -> SRPSolution:
    results = []
    resid = residual_capacity(scenario, x)
    for mode in ("full", "failed-only"):
        model = build_srp(scenario, x, failed_node, instances, delays, mode)
        res = solver(model.program)
        results.append(res)
        if res.optimal:
            return SRPSolution(model.decode(res.assignment), mode, resid, results)
    raise RecoveryImpossible(f"no recovery placement for the services lost on node {failed_node}")


def check_srp_solution(scenario: Scenario, x, failed_node: int, z, required: dict[int, int], delays) -> list[str]:
    """Independent check of a recovery placement; ``required`` maps service -> instance count."""
    x = np.asarray(x)
    z = np.asarray(z)
    d = np.asarray(delays, dtype=float)
    E, S = x.shape
    v = []
    if not np.isin(z, (0, 1)).all():
        return ["binary: entries not binary"]
    for s in range(S):
        want = required.get(s, 0)
        got = int(z[:, s].sum())
        if got != want:
            v.append(f"instance_count: service {s} recovered {got} times, needs {want}")
    for e in range(E):
        used_before = sum(int(x[e, s]) * scenario.services[s].resource_units for s in range(S))
        resid = scenario.nodes[e].capacity - used_before
        extra = 0
        for s in range(S):
            if not z[e, s]:
                continue
            extra += scenario.services[s].resource_units
            if x[e, s]:
                v.append(f"existing_instance: service {s} recovered onto its own node {e}")
            if e == failed_node or scenario.nodes[e].status is NodeStatus.FAILED:
                v.append(f"service {s} recovered onto failed node {e}")
            if d[e, s] > scenario.services[s].delay_threshold:
                v.append(f"delay_threshold: service {s} at node {e} exceeds delay threshold")
        if extra > resid:
            v.append(f"residual: node {e} recovery uses {extra} > residual {resid}")
    return v


def merge_recovery(x, z, failed_node: int, failed_services: Sequence[int], residual=None,
                   resources=None) -> np.ndarray:
    """Drop the failed node and add one recovered instance per failed service.

    When z holds more than one location for a service (full-replacement
    mode) the cheapest one by R_s / residual is kept, lower node id on ties.
    """
    x = np.asarray(x)
    z = np.asarray(z)
    merged = x.copy()
    merged[failed_node, :] = 0
    for s in failed_services:
        locs = [int(e) for e in np.flatnonzero(z[:, s])]
        if not locs:
            continue
        if residual is not None and resources is not None:
            locs.sort(key=lambda e: (resources[s] / residual[e], e))
        e = locs[0]
        assert not x[e, s], "recovery placed onto an existing instance"
        merged[e, s] = 1
    return merged


# ---------------------------------------------------------------------------
# BR baseline


@dataclass
class BRPlacement:
    x: np.ndarray | None  # all instances including reserved backups
    backup: dict[int, int]  # service -> node of its reserved instance
    result: SolveResult

    @property
    def feasible(self) -> bool:
        return self.x is not None

    @property
    def active(self) -> np.ndarray:
        a = self.x.copy()
        for s, e in self.backup.items():
            a[e, s] = 0
        return a


def br_placement(scenario: Scenario, instances, delays, solver: Solver = bip.solve_auto) -> BRPlacement:
    """SP with one extra reserved instance per service type.

    The reserved instance is the placed one farthest (highest mean delay)
    from the requesting vehicles, higher node id on ties.
    """
    inst = np.asarray(instances, dtype=np.int64) + 1
    d = np.asarray(delays, dtype=float)
    try:
        sol = solve_sp(scenario, inst, d, solver)
    except StructurallyInfeasible:
        empty = SolveResult(Status.INFEASIBLE, [], math.inf, math.inf)
        return BRPlacement(None, {}, empty)
    if not sol.feasible:
        return BRPlacement(None, {}, sol.result)
    backup = {}
    for s in range(scenario.n_services):
        hosts = [int(e) for e in np.flatnonzero(sol.x[:, s])]
        backup[s] = max(hosts, key=lambda e: (d[e, s], e))
    return BRPlacement(sol.x, backup, sol.result)
