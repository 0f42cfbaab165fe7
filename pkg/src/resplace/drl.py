"""Critic network, feedback targets and the rule-based actor.

The critic is a small tanh MLP written directly in numpy.  It is trained
on its raw linear output; the [0, 1] clamp only applies when a quality
value is read for a decision.

Weights serialise to JSON as::

    {"format": "resplace-critic/1", "widths": [17, 32, 16, 1],
     "params": [...]}

where ``params`` lists, layer by layer, the weight matrix (shape in x out,
row-major) followed by the bias vector.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import placement as pl
from .scenario import NodeStatus, Scenario, ServiceRequest

JSON_FORMAT = "resplace-critic/1"


# ---------------------------------------------------------------------------
# critic


@dataclass
class CriticNet:
    widths: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, widths: Sequence[int], seed: int = 0) -> "CriticNet":
        """Glorot-uniform weights, zero biases."""
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2 or min(widths) < 1 or widths[-1] != 1:
            raise ValueError(f"bad critic widths {widths}")
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for a, b in zip(widths[:-1], widths[1:]):
            lim = math.sqrt(6.0 / (a + b))
            ws.append(rng.uniform(-lim, lim, (a, b)))
            bs.append(np.zeros(b))
        return cls(widths, ws, bs)

    @classmethod
    def zeros(cls, widths: Sequence[int]) -> "CriticNet":
        widths = tuple(int(w) for w in widths)
        return cls(widths, [np.zeros((a, b)) for a, b in zip(widths[:-1], widths[1:])],
                   [np.zeros(b) for b in widths[1:]])

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    def copy(self) -> "CriticNet":
        return CriticNet(self.widths, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def to_json(self) -> str:
        params: list[float] = []
        for w, b in zip(self.weights, self.biases):
            params.extend(w.ravel().tolist())
            params.extend(b.tolist())
        return json.dumps({"format": JSON_FORMAT, "widths": list(self.widths), "params": params})

    @classmethod
    def from_json(cls, text: str) -> "CriticNet":
        doc = json.loads(text)
        if doc.get("format") != JSON_FORMAT:
            raise ValueError(f"unknown critic format {doc.get('format')!r}")
        widths = tuple(doc["widths"])
        flat = np.asarray(doc["params"], dtype=float)
        net = cls.zeros(widths)
        pos = 0
        for w, b in zip(net.weights, net.biases):
            w[...] = flat[pos:pos + w.size].reshape(w.shape)
            pos += w.size
            b[...] = flat[pos:pos + b.size]
            pos += b.size
        if pos != flat.size:
            raise ValueError("critic parameter count does not match widths")
        if not np.isfinite(flat).all():
            raise ValueError("critic weights must be finite")
        return net


def _as_batch(net: CriticNet, features) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ValueError(f"feature dimension {X.shape[-1]} does not match critic input {net.input_dim}")
    return X


def forward_raw(net: CriticNet, features) -> tuple[np.ndarray, list[np.ndarray]]:
    """Unclamped outputs (one per row) and the activations of every layer."""
    a = _as_batch(net, features)
    acts = [a]
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        a = z if k == last else np.tanh(z)
        acts.append(a)
    return a[:, 0], acts


def critic_forward(net: CriticNet, features) -> float:
    out, _ = forward_raw(net, features)
    if out.size != 1:
        raise ValueError("critic_forward takes a single feature vector")
    return float(min(1.0, max(0.0, out[0])))


@dataclass
class TrainBatch:
    features: np.ndarray  # n x d
    targets: np.ndarray  # n

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        self.targets = np.asarray(self.targets, dtype=float).ravel()
        if len(self.targets) != len(self.features):
            raise ValueError("features and targets differ in length")

    def __len__(self) -> int:
        return len(self.targets)


def loss_and_grads(net: CriticNet, batch: TrainBatch):
    """Mean squared error and its gradients with respect to every parameter."""
    if len(batch) == 0:
        raise ValueError("empty training batch")
    out, acts = forward_raw(net, batch.features)
    n = len(batch)
    err = out - batch.targets
    loss = float(np.mean(err ** 2))
    delta = (2.0 / n) * err[:, None]
    gw = [None] * len(net.weights)
    gb = [None] * len(net.weights)
    for k in range(len(net.weights) - 1, -1, -1):
        gw[k] = acts[k].T @ delta
        gb[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ net.weights[k].T) * (1.0 - acts[k] ** 2)
    return loss, gw, gb


def critic_train_step(net: CriticNet, batch: TrainBatch, learning_rate: float = 0.01) -> tuple[CriticNet, float]:
    """One full-batch gradient step; returns the new net and the loss before the step."""
    loss, gw, gb = loss_and_grads(net, batch)
    new = net.copy()
    for k in range(len(new.weights)):
        new.weights[k] -= learning_rate * gw[k]
        new.biases[k] -= learning_rate * gb[k]
    return new, loss


# ---------------------------------------------------------------------------
# feedback


@dataclass
class FeedbackRecord:
    window: int
    delays: np.ndarray  # per-service mean observed delay of served requests, ms
    arrivals: np.ndarray
    attack: bool = False
    unserved: np.ndarray | None = None  # per-service count of requests left without a host

    def __post_init__(self):
        self.delays = np.asarray(self.delays, dtype=float)
        self.arrivals = np.asarray(self.arrivals, dtype=np.int64)
        if self.unserved is None:
            self.unserved = np.zeros(len(self.arrivals), dtype=np.int64)
        if (self.delays < 0).any() or not np.isfinite(self.delays).all():
            raise ValueError("observed delays must be finite and nonnegative")


def feature_dim(n_services: int) -> int:
    return 2 * n_services + 1


def featurize(record: FeedbackRecord, scenario: Scenario) -> np.ndarray:
    """[utilisation of placed capacity per service] + [delay / threshold per service] + [attack flag]."""
    cap = scenario.instance_capacity
    inst = pl.compute_instances(record.arrivals, cap)
    util = np.divide(record.arrivals, inst * cap, out=np.zeros(len(inst)), where=inst > 0)
    return np.concatenate([util, record.delays / scenario.thresholds, [1.0 if record.attack else 0.0]])


def target_value(threshold: float, delay: float) -> float:
    if not threshold > 0:
        raise ValueError("delay threshold must be positive")
    if delay < threshold:
        return (threshold - delay) / threshold
    return 0.0


def window_target(record: FeedbackRecord, scenario: Scenario) -> float:
    """Mean per-service target over services with demand; a service with unserved requests scores 0."""
    vals = []
    for s, sv in enumerate(scenario.services):
        if record.arrivals[s] <= 0:
            continue
        vals.append(0.0 if record.unserved[s] else target_value(sv.delay_threshold, record.delays[s]))
    return math.fsum(vals) / len(vals) if vals else 1.0


# ---------------------------------------------------------------------------
# actor


@dataclass
class ActorState:
    x: np.ndarray | None = None  # cached placement
    instances: np.ndarray | None = None  # I_s the cached placement was built for
    psvm: dict[int, pl.PSVMResult] = field(default_factory=dict)  # hypothetical failed node -> table


@dataclass
class Decision:
    x: np.ndarray | None  # placement serving this window
    v2e: pl.V2EMap | None  # primary mapping (attack window: before redirection)
    redirected: dict[int, int]  # request index -> secondary node, attack window only
    unserved: list[int]  # request indices left without a host
    state: ActorState  # what the next window starts from
    actions: list[str] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    timings: list[tuple[str, float]] = field(default_factory=list)  # (phase, seconds)
    zeta: list[int] = field(default_factory=list)
    affected: list[int] = field(default_factory=list)
    srp: pl.SRPSolution | None = None


def psvm_table(scenario: Scenario, x, requests: Sequence[ServiceRequest], v2e: pl.V2EMap | None = None):
    """Secondary candidates for every operational node that hosts something."""
    x = np.asarray(x)
    if v2e is None:
        v2e = pl.primary_v2e_map(x, requests, scenario.instance_capacity, scenario.positions, allow_unmapped=True)
    table = {}
    for f in scenario.operational():
        if not x[f].any():
            continue
        prop, loads = pl.psvm_inputs(scenario, requests, v2e, f)
        table[f] = pl.solve_psvm(scenario, x, f, prop, loads)
    return table


def _solve_sp(scenario, requests, delays, instances, d: Decision) -> ActorState:
    d.actions.append("sp")
    try:
        sol = pl.solve_sp(scenario, instances, delays)
    except pl.StructurallyInfeasible:
        d.flags.append("structurally_infeasible")
        return ActorState(None, np.asarray(instances).copy(), {})
    d.timings.append(("PrA-SP", sol.result.wall_time))
    if not sol.feasible:
        d.flags.append("sp_infeasible")
        return ActorState(None, np.asarray(instances).copy(), {})
    table = psvm_table(scenario, sol.x, requests)
    for res in table.values():
        d.timings.append(("PoA-PSVM", res.wall_time))
    d.actions.append("psvm")
    return ActorState(sol.x, np.asarray(instances).copy(), table)


def _fallback_host(scenario, x, failed, s, requests, v2e) -> int | None:
    """Surviving host of s with the smallest finite secondary delay, ignoring the threshold."""
    prop, loads = pl.psvm_inputs(scenario, requests, v2e, failed)
    psi = pl.secondary_delays(scenario, x, failed, prop, loads)
    col = psi[:, s]
    finite = [e for e in range(len(col)) if math.isfinite(col[e])]
    if not finite:
        return None
    return min(finite, key=lambda e: (col[e], e))


def actor_decide(state: ActorState, scenario: Scenario, requests: Sequence[ServiceRequest], delays, instances,
                 q_value: float | None, attack_node: int | None = None) -> Decision:
    """Decide this window's placement.

    ``scenario`` carries the current node statuses (an attacked node is
    already Failed).  ``q_value`` of None counts as poor quality.  A cached
    placement built for different instance counts is always re-solved.
    """
    instances = np.asarray(instances, dtype=np.int64)
    d = Decision(None, None, {}, [], state)
    good = q_value is not None and q_value >= scenario.q_threshold
    stale = state.x is None or state.instances is None or not np.array_equal(state.instances, instances)
    cap, pos = scenario.instance_capacity, scenario.positions

    if attack_node is None:
        if good and not stale:
            d.actions.append("reuse")
        else:
            if stale and good:
                d.actions.append("demand-changed")
            state = _solve_sp(scenario, requests, delays, instances, d)
        d.state = state
        d.x = state.x
        if d.x is not None:
            d.v2e = pl.primary_v2e_map(d.x, requests, cap, pos, allow_unmapped=True)
            d.unserved = [k for k, e in enumerate(d.v2e.node) if e < 0]
        else:
            d.unserved = list(range(len(requests)))
        return d

    # attack path: the intended primary placement still counts the attacked node
    n = attack_node
    intended = scenario.with_status(n, NodeStatus.OPERATIONAL)
    if stale:
        state = _solve_sp(intended, requests, delays, instances, d)
    if state.x is None:
        d.state = state
        d.unserved = list(range(len(requests)))
        return d
    x = state.x
    v2e = pl.primary_v2e_map(x, requests, cap, pos, allow_unmapped=True)
    zeta, affected = pl.attack_impact(x, v2e, n)
    d.v2e, d.zeta, d.affected = v2e, zeta, affected
    d.unserved = [k for k, e in enumerate(v2e.node) if e < 0]
    serving = x.copy()
    serving[n, :] = 0
    d.x = serving
    if not zeta:
        d.actions.append("vacuous-attack")
        d.state = ActorState(serving, instances.copy(), {f: t for f, t in state.psvm.items() if f != n})
        return d

    table = state.psvm.get(n)
    d.actions.append("redirect")
    fallback: dict[int, int | None] = {}
    for k in affected:
        s = requests[k].service
        cand = table.candidates.get(s) if table is not None else None
        if cand is not None:
            k1, k2 = cand
            # the affected vehicle's own instance sat on n, so kappa1 is never its old node
            target = k2 if (k1 == n and k2 is not None) else k1
        else:
            if s not in fallback:
                fallback[s] = _fallback_host(scenario, x, n, s, requests, v2e)
                d.flags.append(f"no_secondary:s{s}")
            target = fallback[s]
        if target is None:
            d.unserved.append(k)
        else:
            d.redirected[k] = target
    if table is not None and table.degraded:
        d.flags.extend(f"single_secondary:s{s}" for s in table.degraded)
    if any(target is None for target in fallback.values()):
        d.flags.append("unserved")

    try:
        srp = pl.solve_srp(scenario, x, n, instances, delays)
    except pl.RecoveryImpossible:
        d.flags.append("recovery_impossible")
        d.actions.append("srp")
        d.state = ActorState(None, None, {})
        return d
    d.srp = srp
    for r in srp.results:
        d.timings.append(("PoA-SRP", r.wall_time))
    d.actions.extend(["srp", "merge"])
    merged = pl.merge_recovery(x, srp.z, n, zeta, srp.residual, scenario.resources)
    d.state = ActorState(merged, instances.copy(), {})
    return d
