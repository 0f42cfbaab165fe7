import random
from pathlib import Path

import numpy as np
import pytest

from resplace.bip import EQ, GE, LE, BinaryProgram
from resplace.scenario import Box, EdgeNode, Scenario, ServiceRequest, ServiceType, grid_nodes

ROOT = Path(__file__).resolve().parents[1]
DEMO_CONFIG = ROOT / "demo" / "demo.ini"


def random_program(rng: random.Random, n: int, m: int, minmax: bool) -> BinaryProgram:
    """Mixed-sign random 0-1 program; roughly half the instances are infeasible-prone."""
    p = BinaryProgram()
    for _ in range(n):
        p.add_var()
    for _ in range(m):
        sense = rng.choice([LE, GE, EQ, LE])
        if sense == EQ:
            coeffs = [rng.choice([0, 1, 1]) for _ in range(n)]
            rhs = rng.randint(0, max(1, sum(coeffs) // 2))
        else:
            coeffs = [rng.choice([0, 0, rng.randint(-5, 5), round(rng.uniform(-3, 3), 3)]) for _ in range(n)]
            rhs = round(sum(coeffs) / 2 + rng.uniform(-3, 3), 2)
        p.add_constraint(coeffs, sense, rhs)
    if minmax:
        groups = [[rng.choice([0, rng.randint(-3, 6), round(rng.uniform(0, 1), 2)]) for _ in range(n)]
                  for _ in range(rng.randint(1, 4))]
        tie = [rng.choice([0, 1, 2]) for _ in range(n)] if rng.random() < 0.5 else None
        p.set_minmax(groups, tie)
    else:
        p.set_linear([rng.choice([0, rng.randint(-3, 5), round(rng.uniform(-2, 2), 3)]) for _ in range(n)])
    return p


def small_scenario(rng: random.Random, n_nodes=None, n_services=None) -> Scenario:
    E = n_nodes or rng.randint(3, 9)
    S = n_services or rng.randint(2, 8)
    box = Box(0.0, 0.0, 6000.0, 6000.0)
    services = [ServiceType(s, rng.randint(5, 30), float(rng.choice([8, 10, 20, 50, 120])), f"s{s}")
                for s in range(S)]
    nodes = [EdgeNode(e, (rng.uniform(0, 6000), rng.uniform(0, 6000)), rng.choice([40, 60, 100]))
             for e in range(E)]
    return Scenario(services=services, nodes=nodes, instance_capacity=rng.choice([3, 5, 10]),
                    bounding_box=box, seed=rng.randint(0, 999))


def random_requests(rng: random.Random, sc: Scenario, n: int) -> list[ServiceRequest]:
    box = sc.bounding_box
    return [ServiceRequest(v, (rng.uniform(box.x0, box.x1), rng.uniform(box.y0, box.y1)), 1,
                           rng.randrange(sc.n_services)) for v in range(n)]


def two_node_scenario(**kw) -> Scenario:
    box = Box(0.0, 0.0, 1000.0, 1000.0)
    base = dict(services=[ServiceType(0, 10, 50.0)],
                nodes=[EdgeNode(0, (0.0, 0.0), 100), EdgeNode(1, (1000.0, 0.0), 100)],
                instance_capacity=30, bounding_box=box)
    base.update(kw)
    return Scenario(**base)


@pytest.fixture
def rng():
    return random.Random(12345)


@pytest.fixture
def nine_node():
    from resplace.scenario import default_scenario
    return default_scenario()


def synth_windows(sc: Scenario, vehicles=120, n_windows=6, mobility="randomwaypoint", seed=0):
    from resplace.traces import bin_requests, synth_trace
    box = Box(0.0, 0.0, sc.bounding_box.width, sc.bounding_box.height)
    pts = synth_trace(vehicles, n_windows, box, mobility, seed, sc.window_seconds)
    return bin_requests(pts, sc.window_seconds, sc.n_services, seed)
