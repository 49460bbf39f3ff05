import numpy as np
import pytest
from scipy.optimize import linprog

from bufplan import simplex
from bufplan.errors import InfeasibleError, UnboundedError

from lp_oracle import enumerate_bfs, random_lp


def test_trivial_equality():
    res = simplex.solve([1.0], A_eq=[[1.0]], b_eq=[1.0])
    assert res.x == pytest.approx([1.0])
    assert res.objective == pytest.approx(1.0)


def test_single_vertex_optimum():
    res = simplex.solve([-1.0, -1.0], A_ub=[[1.0, 1.0]], b_ub=[1.0])
    assert res.objective == pytest.approx(-1.0)


def beale():
    c = [-0.75, 20.0, -0.5, 6.0]
    A_ub = [[0.25, -8.0, -1.0, 9.0], [0.5, -12.0, -0.5, 3.0], [0.0, 0.0, 1.0, 0.0]]
    b_ub = [0.0, 0.0, 1.0]
    return c, A_ub, b_ub


@pytest.mark.parametrize("rule", ["bland", "hybrid"])
def test_beale_cycling_example_terminates(rule):
    c, A_ub, b_ub = beale()
    res = simplex.solve(c, A_ub=A_ub, b_ub=b_ub, rule=rule, max_iter=200)
    assert res.objective == pytest.approx(-1.25, abs=1e-12)


def test_infeasible():
    with pytest.raises(InfeasibleError):
        simplex.solve([1.0, 1.0], A_eq=[[1.0, 1.0]], b_eq=[1.0], A_ub=[[1.0, 1.0]], b_ub=[0.5])


def test_unbounded():
    with pytest.raises(UnboundedError):
        simplex.solve([-1.0, 0.0], A_ub=[[-1.0, 1.0]], b_ub=[1.0])


def test_redundant_equality_rows_dropped():
    res = simplex.solve([1.0, 2.0], A_eq=[[1.0, 1.0], [2.0, 2.0]], b_eq=[1.0, 2.0])
    assert res.objective == pytest.approx(1.0)
    assert len(res.redundant_rows) == 1


def test_negative_rhs_rows():
    # x1 >= 0.5 written as -x1 <= -0.5
    res = simplex.solve([1.0, 1.0], A_ub=[[-1.0, 0.0]], b_ub=[-0.5])
    assert res.x == pytest.approx([0.5, 0.0])


@pytest.mark.parametrize("rule", ["bland", "hybrid"])
def test_random_lps_match_vertex_enumeration(rule):
    rng = np.random.default_rng(20240611)
    feasible = 0
    for _ in range(150):
        c, A_eq, b_eq, A_ub, b_ub = random_lp(rng)
        oracle = enumerate_bfs(c, A_eq, b_eq, A_ub, b_ub)
        if oracle is None:
            with pytest.raises(InfeasibleError):
                simplex.solve(c, A_eq, b_eq, A_ub, b_ub, rule=rule)
            continue
        feasible += 1
        res = simplex.solve(c, A_eq, b_eq, A_ub, b_ub, rule=rule)
        assert res.objective == pytest.approx(oracle[0], abs=1e-9)
        # primal feasibility of the returned point
        if len(b_eq):
            assert np.abs(A_eq @ res.x - b_eq).max() < 1e-9
        assert (A_ub @ res.x - b_ub).max() < 1e-9
    assert feasible > 50


def test_random_larger_lps_match_highs():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n, me, mu = 30, 6, 8
        A_eq = rng.uniform(0, 1, (me, n))
        b_eq = A_eq @ rng.uniform(0, 1, n)
        A_ub = rng.uniform(-0.2, 1, (mu, n))
        b_ub = A_ub @ rng.uniform(0, 1, n) + 0.5
        c = rng.uniform(-1, 1, n)
        ref = linprog(c, A_ub, b_ub, A_eq, b_eq, method="highs")
        if ref.status != 0:
            continue
        res = simplex.solve(c, A_eq, b_eq, A_ub, b_ub)
        assert res.objective == pytest.approx(ref.fun, abs=1e-8)


def test_warm_start_gives_same_optimum():
    rng = np.random.default_rng(3)
    n = 12
    A_eq = np.vstack([rng.uniform(0, 1, (3, n)), np.ones((1, n))])
    x0 = rng.dirichlet(np.ones(n))
    b_eq = A_eq @ x0
    c = rng.uniform(-1, 1, n)
    cold = simplex.solve(c, A_eq, b_eq)
    # a feasible basis to crash from: the cold optimum's own basic columns
    start = cold.basis[cold.basis < n]
    warm = simplex.solve(c, A_eq, b_eq, start=start)
    assert warm.objective == pytest.approx(cold.objective, abs=1e-12)
    assert warm.iterations == 0
    # a useless hint (dependent columns) falls back to the slack basis
    bad = simplex.solve(c, A_eq, b_eq, start=[0, 0])
    assert bad.objective == pytest.approx(cold.objective, abs=1e-10)
