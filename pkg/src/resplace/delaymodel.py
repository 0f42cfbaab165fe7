"""Propagation, access and queueing delays.

Queue lengths and capacities are counted per window, so the raw waiting
time comes out in windows; :func:`md1_wait` converts it to milliseconds.
An overloaded instance (queue excess at or above capacity) has no finite
waiting time and is reported as ``OVERLOAD`` (positive infinity), which
absorbs any sum it enters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .scenario import Point, Scenario, ServiceRequest

OVERLOAD = math.inf


def is_overload(value: float) -> bool:
    return value == OVERLOAD


@dataclass(frozen=True)
class QueueLoad:
    base: float  # traffic already on the instance
    redirected: float  # attack-affected traffic moved onto it
    capacity: float  # per-instance capacity

    def __post_init__(self):
        if self.base < 0 or self.redirected < 0:
            raise ValueError("loads must be nonnegative")
        if not self.capacity > 0:
            raise ValueError("capacity must be positive")

    @property
    def excess(self) -> float:
        return self.base + self.redirected - self.capacity


class AccessDelay(NamedTuple):
    ms: float
    defined: bool


@dataclass
class DelayMatrix:
    d: np.ndarray  # |E| x |S|, ms
    defined: np.ndarray  # False where no vehicle requested the service
    window: int = 0


def propagation_delay(p: Point, q: Point, speed: float) -> float:
    if not speed > 0:
        raise ValueError(f"propagation speed must be positive, got {speed}")
    return 1000.0 * math.hypot(p[0] - q[0], p[1] - q[1]) / speed


def access_delay(points: Iterable[Point], node: Point, speed: float) -> AccessDelay:
    """Mean propagation delay from the requesting vehicles to ``node``."""
    pts = list(points)
    if not pts:
        return AccessDelay(0.0, False)
    return AccessDelay(math.fsum(propagation_delay(p, node, speed) for p in pts) / len(pts), True)


def md1_wait_windows(load: QueueLoad) -> float:
    excess = load.excess
    if excess <= 0:
        return 0.0
    c = load.capacity
    if excess >= c:
        return OVERLOAD
    return excess / (2.0 * c * (c - excess))


def md1_wait(load: QueueLoad, window_seconds: float = 60.0) -> float:
    """Waiting time in ms; 0 below capacity, OVERLOAD once the excess reaches capacity."""
    w = md1_wait_windows(load)
    if w == 0.0 or is_overload(w):
        return w
    return w * window_seconds * 1000.0


def secondary_delay(points: Iterable[Point], node: Point, load: QueueLoad, speed: float,
                    window_seconds: float = 60.0) -> float:
    wait = md1_wait(load, window_seconds)
    if is_overload(wait):
        return OVERLOAD
    return access_delay(points, node, speed).ms + wait


def delay_matrix(requests: Sequence[ServiceRequest], scenario: Scenario, window: int = 0) -> DelayMatrix:
    """d_e^s for every node/service pair from one window's requests."""
    E, S = scenario.n_nodes, scenario.n_services
    by_service: list[list[Point]] = [[] for _ in range(S)]
    for r in requests:
        by_service[r.service].append(r.location)
    d = np.zeros((E, S))
    defined = np.zeros((E, S), dtype=bool)
    for e, node in enumerate(scenario.nodes):
        for s in range(S):
            ad = access_delay(by_service[s], node.position, scenario.prop_speed)
            d[e, s], defined[e, s] = ad
    return DelayMatrix(d, defined, window)
