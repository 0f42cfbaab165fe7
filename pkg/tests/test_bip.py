import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from resplace import bip
from resplace.bip import EQ, GE, LE, BinaryProgram, Status, solve_auto, solve_bnb, solve_exhaustive, solve_grouped

from conftest import random_program

SOLVERS = [solve_exhaustive, solve_bnb, solve_auto]


def program(n):
    p = BinaryProgram()
    for _ in range(n):
        p.add_var()
    return p


@pytest.mark.parametrize("solve", SOLVERS)
def test_single_var_min_is_zero(solve):
    p = program(1)
    p.set_linear([1])
    r = solve(p)
    assert r.status is Status.OPTIMAL
    assert r.assignment == [0] and r.objective_value == 0


@pytest.mark.parametrize("solve", SOLVERS)
def test_symmetric_cover_prefers_first_variable(solve):
    p = program(2)
    p.set_linear([1, 1])
    p.add_constraint([1, 1], GE, 1)
    r = solve(p)
    assert r.assignment == [1, 0] and r.objective_value == 1


@pytest.mark.parametrize("solve", SOLVERS)
def test_contradictory_bounds_infeasible(solve):
    p = program(1)
    p.add_constraint([1], GE, 1)
    p.add_constraint([1], LE, 0)
    r = solve(p)
    assert r.status is Status.INFEASIBLE
    assert r.assignment == [] and math.isinf(r.objective_value)


@pytest.mark.parametrize("solve", SOLVERS + [solve_grouped])
def test_minmax_two_singleton_groups(solve):
    p = program(2)
    p.set_minmax([{0: 1}, {1: 1}])
    p.add_constraint([1, 1], EQ, 1)
    r = solve(p)
    assert r.objective_value == 1 and r.assignment == [1, 0]


@pytest.mark.parametrize("solve", SOLVERS)
def test_empty_program(solve):
    r = solve(BinaryProgram())
    assert r.optimal and r.assignment == [] and r.objective_value == 0


def test_empty_program_with_unsatisfiable_row():
    p = BinaryProgram()
    p.add_constraint({}, GE, 1)
    for solve in SOLVERS:
        assert solve(p).status is Status.INFEASIBLE


def test_exhaustive_refuses_large_programs():
    with pytest.raises(ValueError, match="25"):
        solve_exhaustive(program(26))


def test_builder_rejects_bad_input():
    p = program(2)
    with pytest.raises(ValueError):
        p.add_constraint([1, 1], "<", 1)
    with pytest.raises(ValueError):
        p.add_constraint([1, 1], LE, math.inf)
    with pytest.raises(ValueError):
        p.add_constraint({5: 1}, LE, 1)


def test_tiebreak_secondary_then_key():
    # both groups tie on the max; the secondary decides, then the integer key
    p = program(3)
    p.set_minmax([{0: 1, 1: 1, 2: 1}], tiebreak={0: 2, 1: 1, 2: 1})
    p.add_constraint([1, 1, 1], EQ, 1)
    r = solve_bnb(p)
    assert r.assignment == [0, 1, 0]
    assert r.secondary_value == 1


def test_fractional_coefficients_and_tolerance():
    p = program(3)
    p.set_linear([0.1, 0.2, 0.3])
    p.add_constraint([0.1, 0.2, 0.3], GE, 0.3)
    a, b = solve_exhaustive(p), solve_bnb(p)
    # 0.1 + 0.2 rounds above 0.3, so the single third variable is strictly cheaper
    assert a.assignment == b.assignment == [0, 0, 1]
    assert a.objective_value == 0.3


def test_checked_rejects_violating_assignment():
    p = program(1)
    p.add_constraint([1], GE, 1)
    with pytest.raises(AssertionError):
        bip.SolveResult.checked(p, Status.OPTIMAL, [0], 0, 0.0)


def test_to_text_dump():
    p = program(2)
    p.var_labels[:] = ["a", "b"]
    p.set_minmax([{0: 1}, {1: 2}], tiebreak={0: 1})
    p.add_constraint([1, 1], EQ, 1, "pick")
    text = p.to_text()
    assert text.splitlines()[0] == "minimize max"
    assert "  pick: + 1 a + 1 b = 1" in text
    assert "then minimize" in text and text.endswith("end")


def test_deterministic_results():
    rng = random.Random(3)
    for _ in range(10):
        p = random_program(rng, 10, 5, rng.random() < 0.5)
        a, b = solve_bnb(p), solve_bnb(p)
        assert (a.status, a.assignment, a.nodes_explored) == (b.status, b.assignment, b.nodes_explored)


def test_bnb_matches_oracle_on_12_var_programs():
    rng = random.Random(2024)
    for _ in range(100):
        p = random_program(rng, 12, 6, rng.random() < 0.5)
        a, b = solve_exhaustive(p), solve_bnb(p)
        assert a.status == b.status
        if a.optimal:
            assert abs(a.objective_value - b.objective_value) <= 1e-9
            assert a.assignment == b.assignment


def grouped_program(rng, minmax):
    """Programs with the block/row shape the placement builders produce."""
    n_blocks = rng.randint(1, 4)
    sizes = [rng.randint(1, 4) for _ in range(n_blocks)]
    p = BinaryProgram()
    blocks = []
    for k in sizes:
        blocks.append([p.add_var() for _ in range(k)])
    n_rows = rng.randint(1, 3)
    col = [rng.randrange(n_rows) for _ in range(max(sizes))]
    for r in range(n_rows):
        members = [b[i] for b in blocks for i in range(len(b)) if col[i] == r]
        if members:
            p.add_constraint({v: 1 for v in members}, EQ, rng.randint(0, min(2, len(members))))
    for b in blocks:
        if rng.random() < 0.6:
            p.add_constraint({v: rng.randint(1, 9) for v in b}, LE, rng.randint(3, 15))
    if minmax:
        w = {v: round(rng.uniform(0, 1), 3) for b in blocks for v in b}
        p.set_minmax([{v: w[v] for v in b} for b in blocks], tiebreak=w)
    else:
        p.set_linear({v: round(rng.uniform(0, 2), 3) for b in blocks for v in b})
    return p


@pytest.mark.parametrize("minmax", [False, True])
def test_grouped_matches_oracle(minmax):
    rng = random.Random(77 + minmax)
    seen = 0
    for _ in range(150):
        p = grouped_program(rng, minmax)
        if bip.grouped_structure(p) is None:
            continue
        seen += 1
        a, g = solve_exhaustive(p), solve_grouped(p)
        assert a.status == g.status
        if a.optimal:
            assert abs(a.objective_value - g.objective_value) <= 1e-9
            assert a.assignment == g.assignment
    assert seen > 100


def test_grouped_structure_rejects_general_programs():
    p = program(2)
    p.set_linear([1, 1])
    p.add_constraint([1, 2], GE, 1)
    p.add_constraint([2, 1], GE, 1)
    # one block containing both variables is still grouped; a coupling non-row across blocks is not
    assert bip.grouped_structure(p) is not None
    q = program(2)
    q.set_minmax([{0: 1}, {1: 1}])
    q.add_constraint([1, 2], GE, 1)
    assert bip.grouped_structure(q) is None
    assert solve_auto(q).assignment == solve_exhaustive(q).assignment


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 10), st.integers(0, 6), st.booleans())
def test_bnb_property(seed, n, m, minmax):
    p = random_program(random.Random(seed), n, m, minmax)
    a, b = solve_exhaustive(p), solve_bnb(p)
    assert a.status == b.status
    if a.optimal:
        assert a.assignment == b.assignment
        assert p.is_feasible(b.assignment)
