"""Finite constrained CTMDP for one subsystem.

States are occupancy vectors ``n`` with ``0 <= n_j <= L_j``. In state ``n`` the
arbiter may idle or serve any non-empty queue. Arrivals to a non-full queue
move ``n_j -> n_j + 1`` at rate ``lambda_j``; arrivals to a full queue are lost
and only show up in the cost ``c(n) = sum_j lambda_j 1{n_j = L_j}``. Serving
queue ``j`` adds one transition ``n_j -> n_j - 1`` at the bus rate.

State-action pairs are stored flat: pair ``k`` is (``sa_state[k]``,
``sa_action[k]``) with action 0 meaning idle and ``j + 1`` meaning serve ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BudgetError, ModelTooLargeError
from .splitter import Subsystem

DEFAULT_MAX_LEVEL = 8
DEFAULT_MAX_STATES = 200_000
IDLE = 0


@dataclass(frozen=True, eq=False)
class CtmdpModel:
    subsystem: str
    queue_ids: tuple[str, ...]
    arrival_rates: np.ndarray
    service_rate: float
    caps: tuple[int, ...]
    states: np.ndarray  # (S, m) occupancy vectors
    sa_state: np.ndarray
    sa_action: np.ndarray
    trans_sa: np.ndarray
    trans_to: np.ndarray
    trans_rate: np.ndarray
    cost: np.ndarray  # per state-action pair
    occupancy: np.ndarray  # per state

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_pairs(self) -> int:
        return len(self.sa_state)

    @property
    def n_queues(self) -> int:
        return len(self.caps)

    @property
    def strides(self) -> np.ndarray:
        dims = np.asarray(self.caps) + 1
        return np.concatenate([np.cumprod(dims[::-1])[::-1][1:], [1]]).astype(np.int64)

    def state_index(self, occupancy) -> int:
        return int(np.dot(np.minimum(occupancy, self.caps), self.strides))

    def out_rates(self) -> np.ndarray:
        """Total outflow rate of every state-action pair (minus the diagonal)."""
        return np.bincount(self.trans_sa, weights=self.trans_rate, minlength=self.n_pairs)

    def actions_of(self, x: int) -> np.ndarray:
        return np.flatnonzero(self.sa_state == x)

    def generator(self, weights) -> np.ndarray:
        """Dense generator of the chain induced by per-pair action weights.

        ``weights[k]`` is the probability of pair ``k``'s action in its state.
        """
        S = self.n_states
        Q = np.zeros((S, S))
        w = np.asarray(weights, dtype=float)
        np.add.at(Q, (self.sa_state[self.trans_sa], self.trans_to), w[self.trans_sa] * self.trans_rate)
        Q[np.diag_indices(S)] -= Q.sum(axis=1)
        return Q


def state_count(caps) -> int:
    return int(np.prod([c + 1 for c in caps], dtype=object))


def build_model(sub: Subsystem, caps, max_states: int = DEFAULT_MAX_STATES, loss_weights=None) -> CtmdpModel:
    """``loss_weights``: optional per-queue multipliers on the loss cost (default 1)."""
    caps = tuple(int(c) for c in caps)
    m = len(sub.queues)
    if len(caps) != m:
        raise ValueError(f"{len(caps)} caps given for {m} queues")
    if any(c < 1 for c in caps):
        raise ValueError("every level cap must be >= 1")
    S = state_count(caps)
    if S > max_states:
        raise ModelTooLargeError(
            f"subsystem {sub.id}: {S} states exceed the ceiling of {max_states}; "
            f"use a smaller --max-level"
        )
    lam = np.asarray(sub.arrival_rates, dtype=float)
    capv = np.asarray(caps)
    states = np.stack(np.unravel_index(np.arange(S), tuple(capv + 1)), axis=1).astype(np.int64)
    dims = capv + 1
    strides = np.concatenate([np.cumprod(dims[::-1])[::-1][1:], [1]]).astype(np.int64)

    full = states == capv
    w = np.ones(m) if loss_weights is None else np.asarray(loss_weights, dtype=float)
    if w.shape != (m,) or np.any(w < 0):
        raise ValueError("loss weights must be non-negative, one per queue")
    state_cost = full.astype(float) @ (lam * w)
    occ = states.sum(axis=1).astype(float)

    # pairs: idle everywhere, then serve j wherever n_j > 0
    sa_state = [np.arange(S)]
    sa_action = [np.zeros(S, dtype=np.int64)]
    for j in range(m):
        xs = np.flatnonzero(states[:, j] > 0)
        sa_state.append(xs)
        sa_action.append(np.full(len(xs), j + 1, dtype=np.int64))
    sa_state = np.concatenate(sa_state)
    sa_action = np.concatenate(sa_action)
    K = len(sa_state)

    t_sa, t_to, t_rate = [], [], []
    pair_states = states[sa_state]
    for j in range(m):
        if lam[j] <= 0:
            continue
        ks = np.flatnonzero(pair_states[:, j] < capv[j])
        t_sa.append(ks)
        t_to.append(sa_state[ks] + strides[j])
        t_rate.append(np.full(len(ks), lam[j]))
    serving = np.flatnonzero(sa_action > 0)
    t_sa.append(serving)
    t_to.append(sa_state[serving] - strides[sa_action[serving] - 1])
    t_rate.append(np.full(len(serving), float(sub.service_rate)))
    t_sa = np.concatenate(t_sa)
    order = np.argsort(t_sa, kind="stable")

    return CtmdpModel(
        subsystem=sub.id,
        queue_ids=tuple(sub.queue_ids),
        arrival_rates=lam,
        service_rate=float(sub.service_rate),
        caps=caps,
        states=states,
        sa_state=sa_state,
        sa_action=sa_action,
        trans_sa=t_sa[order],
        trans_to=np.concatenate(t_to)[order],
        trans_rate=np.concatenate(t_rate)[order],
        cost=state_cost[sa_state],
        occupancy=occ,
    )


def choose_caps(sub: Subsystem, subsystem_budget: int, max_level: int = DEFAULT_MAX_LEVEL) -> tuple[int, ...]:
    m = len(sub.queues)
    if subsystem_budget < m:
        raise BudgetError(f"subsystem {sub.id}: budget {subsystem_budget} below its {m} queues")
    cap = max(1, min(max_level, subsystem_budget - (m - 1)))
    return (cap,) * m


def fit_max_level(n_queues: int, max_level: int, max_states: int) -> int:
    """Largest level cap <= max_level whose uniform state space fits max_states."""
    level = max_level
    while level > 1 and (level + 1) ** n_queues > max_states:
        level -= 1
    if 2**n_queues > max_states:
        raise ModelTooLargeError(
            f"{n_queues} queues need at least {2**n_queues} states; the ceiling is {max_states}"
        )
    return level
