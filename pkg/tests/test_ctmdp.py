import itertools

import numpy as np
import pytest

from bufplan.ctmdp import IDLE, build_model, choose_caps, fit_max_level, state_count
from bufplan.errors import BudgetError, ModelTooLargeError
from bufplan.splitter import QueueSpec, Subsystem


def make_sub(rates, mu=2.0):
    qs = tuple(QueueSpec(str(i + 1), "processor", r, "sub-x") for i, r in enumerate(rates))
    return Subsystem("sub-x", "x", mu, qs)


def transitions(m, k):
    sel = m.trans_sa == k
    return {(int(t), float(r)) for t, r in zip(m.trans_to[sel], m.trans_rate[sel])}


def test_one_queue_cap_two():
    m = build_model(make_sub([1.0], 2.0), (2,))
    assert m.n_states == 3
    acts = {x: sorted(m.sa_action[m.actions_of(x)].tolist()) for x in range(3)}
    assert acts == {0: [IDLE], 1: [IDLE, 1], 2: [IDLE, 1]}
    k = next(k for k in m.actions_of(1) if m.sa_action[k] == 1)
    assert transitions(m, k) == {(2, 1.0), (0, 2.0)}


def test_two_queues_unit_caps():
    m = build_model(make_sub([0.3, 0.7]), (1, 1))
    assert m.n_states == 4
    x = m.state_index([1, 1])
    assert sorted(m.sa_action[m.actions_of(x)].tolist()) == [0, 1, 2]
    assert m.cost[m.actions_of(x)] == pytest.approx([1.0, 1.0, 1.0])


def _oracle_generator(rates, mu, caps, policy):
    """Generator built state by state from the transition rules."""
    states = list(itertools.product(*[range(c + 1) for c in caps]))
    index = {s: i for i, s in enumerate(states)}
    Q = np.zeros((len(states), len(states)))
    for s in states:
        i = index[s]
        for j, lam in enumerate(rates):
            if s[j] < caps[j]:
                t = list(s)
                t[j] += 1
                Q[i, index[tuple(t)]] += lam
        a = policy(s)
        if a:
            t = list(s)
            t[a - 1] -= 1
            Q[i, index[tuple(t)]] += mu
        Q[i, i] = -Q[i].sum()
    return states, Q


def _stationary(Q):
    S = len(Q)
    A = np.vstack([Q.T, np.ones(S)])
    b = np.zeros(S + 1)
    b[-1] = 1.0
    return np.linalg.lstsq(A, b, rcond=None)[0]


def priority(s):
    return 1 if s[0] > 0 else (2 if s[1] > 0 else 0)


def test_priority_policy_matches_bruteforce_ctmc():
    rates, mu, caps = [0.6, 0.5], 1.5, (3, 3)
    m = build_model(make_sub(rates, mu), caps)
    states, Qo = _oracle_generator(rates, mu, caps, priority)
    assert [tuple(s) for s in m.states.tolist()] == states
    w = np.zeros(m.n_pairs)
    for x, s in enumerate(states):
        k = next(k for k in m.actions_of(x) if m.sa_action[k] == priority(s))
        w[k] = 1.0
    Q = m.generator(w)
    np.testing.assert_allclose(Q, Qo, atol=1e-14)
    np.testing.assert_allclose(_stationary(Q), _stationary(Qo), atol=1e-12)


def test_choose_caps_examples():
    assert choose_caps(make_sub([1, 1]), 10, 8) == (8, 8)
    assert choose_caps(make_sub([1, 1, 1]), 3, 8) == (1, 1, 1)
    assert choose_caps(make_sub([1, 1, 1, 1]), 6, 8) == (3, 3, 3, 3)
    with pytest.raises(BudgetError):
        choose_caps(make_sub([1, 1, 1]), 2)


def test_generator_conservation_and_idle():
    rates, mu, caps = [0.3, 0.9, 0.2], 1.7, (2, 3, 1)
    m = build_model(make_sub(rates, mu), caps)
    assert m.n_states == state_count(caps) == 3 * 4 * 2
    out = m.out_rates()
    for k in range(m.n_pairs):
        s = m.states[m.sa_state[k]]
        a = m.sa_action[k]
        expect = sum(l for l, n, c in zip(rates, s, caps) if n < c) + (mu if a else 0.0)
        assert out[k] == pytest.approx(expect, abs=1e-15)
        if a == IDLE:
            # no transition lowers any occupancy
            sel = m.trans_sa == k
            assert np.all(m.states[m.trans_to[sel]].sum(axis=1) > s.sum())
    assert np.all(m.trans_rate > 0)
    assert np.all(m.cost >= 0)
    full = m.state_index(caps)
    assert m.cost[m.actions_of(full)][0] == pytest.approx(sum(rates), abs=0)


@pytest.mark.parametrize("K", [1, 3, 6])
def test_single_queue_is_mm1k(K):
    lam, mu = 0.7, 1.3
    m = build_model(make_sub([lam], mu), (K,))
    w = (m.sa_action == np.where(m.states[m.sa_state, 0] > 0, 1, 0)).astype(float)
    pi = _stationary(m.generator(w))
    rho = lam / mu
    closed = rho ** np.arange(K + 1)
    closed /= closed.sum()
    np.testing.assert_allclose(pi, closed, atol=1e-10)


def test_model_too_large():
    with pytest.raises(ModelTooLargeError):
        build_model(make_sub([1.0] * 6), (8,) * 6, max_states=200_000)


def test_fit_max_level():
    assert fit_max_level(6, 8, 1000) == 2
    assert fit_max_level(4, 8, 1000) == 4
    assert fit_max_level(1, 8, 1000) == 8
    with pytest.raises(ModelTooLargeError):
        fit_max_level(12, 8, 1000)


def test_loss_weights_scale_cost():
    m1 = build_model(make_sub([0.3, 0.7]), (1, 1))
    m2 = build_model(make_sub([0.3, 0.7]), (1, 1), loss_weights=[2.0, 0.0])
    x = m1.state_index([1, 1])
    assert m1.cost[m1.actions_of(x)][0] == pytest.approx(1.0)
    assert m2.cost[m2.actions_of(x)][0] == pytest.approx(0.6)
