"""From an optimal occupation measure to an arbitration policy and buffer sizes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ctmdp import IDLE, CtmdpModel
from .errors import BudgetError, ConfigError

MASS_TOL = 1e-12
RANDOMIZED_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class StationaryPolicy:
    """``probs[k]`` is the probability of pair ``k``'s action in its state."""

    model: CtmdpModel
    probs: np.ndarray
    fallback_states: np.ndarray

    def distribution(self, x: int) -> tuple[np.ndarray, np.ndarray]:
        ks = self.model.actions_of(x)
        return self.model.sa_action[ks], self.probs[ks]

    def randomized_states(self, tol: float = RANDOMIZED_TOL) -> int:
        counts = np.bincount(self.model.sa_state[self.probs > tol], minlength=self.model.n_states)
        return int((counts >= 2).sum())

    def lookup_table(self) -> list:
        """Per state either an int action or ``(cumulative probs, actions)``."""
        m = self.model
        table: list = [None] * m.n_states
        order = np.argsort(m.sa_state, kind="stable")
        bounds = np.searchsorted(m.sa_state[order], np.arange(m.n_states + 1))
        for x in range(m.n_states):
            ks = order[bounds[x]:bounds[x + 1]]
            ks = ks[self.probs[ks] > 0]
            if len(ks) == 1:
                table[x] = int(m.sa_action[ks[0]])
            else:
                cum = np.cumsum(self.probs[ks])
                cum /= cum[-1]
                table[x] = (cum.tolist(), [int(a) for a in m.sa_action[ks]])
        return table


def state_mass(model: CtmdpModel, z) -> np.ndarray:
    return np.bincount(model.sa_state, weights=np.asarray(z, float), minlength=model.n_states)


def fallback_action(occupancy) -> int:
    """Serve the longest non-empty queue (lowest index on ties); idle when empty."""
    occupancy = np.asarray(occupancy)
    if occupancy.max(initial=0) <= 0:
        return IDLE
    return int(np.argmax(occupancy)) + 1


def extract_policy(model: CtmdpModel, z) -> StationaryPolicy:
    z = np.clip(np.asarray(z, dtype=float), 0.0, None)
    mass = state_mass(model, z)
    visited = mass > MASS_TOL
    probs = np.zeros(model.n_pairs)
    ok = visited[model.sa_state]
    probs[ok] = z[ok] / mass[model.sa_state[ok]]
    fallback = np.flatnonzero(~visited)
    for x in fallback:
        a = fallback_action(model.states[x])
        ks = model.actions_of(x)
        probs[ks[model.sa_action[ks] == a]] = 1.0
    return StationaryPolicy(model, probs, fallback)


def occupancy_marginals(model: CtmdpModel, z) -> list[np.ndarray]:
    mass = state_mass(model, z)
    return [
        np.bincount(model.states[:, j], weights=mass, minlength=model.caps[j] + 1)
        for j in range(model.n_queues)
    ]


@dataclass(frozen=True)
class BufferAllocation:
    capacities: dict  # queue id -> slots, in queue order

    @property
    def total(self) -> int:
        return sum(self.capacities.values())

    def __getitem__(self, qid):
        return self.capacities[qid]

    def to_dict(self) -> dict:
        return {
            "queues": [{"id": q, "capacity": c} for q, c in self.capacities.items()],
            "total": self.total,
        }

    @classmethod
    def from_dict(cls, doc) -> "BufferAllocation":
        try:
            caps = {str(q["id"]): int(q["capacity"]) for q in doc["queues"]}
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed allocation document: {exc}") from None
        if any(c < 1 for c in caps.values()):
            raise ConfigError("every queue capacity must be >= 1")
        return cls(caps)

    def merged(self, other: "BufferAllocation") -> "BufferAllocation":
        return BufferAllocation({**self.capacities, **other.capacities})


def requested_capacity(marginal, epsilon: float) -> int:
    cdf = np.cumsum(marginal)
    k = int(np.searchsorted(cdf, 1.0 - epsilon - 1e-12))
    return max(1, min(k, len(marginal) - 1))


def residual_tail(marginal, capacity: int) -> float:
    """P(n > capacity), extended geometrically past the model's top level."""
    marginal = np.asarray(marginal, dtype=float)
    L = len(marginal) - 1
    if capacity < L:
        return float(marginal[capacity + 1:].sum())
    top = float(marginal[L])
    below = float(marginal[L - 1:].sum()) if L >= 1 else 0.0
    if top <= 0 or below <= 0:
        return 0.0
    ratio = top / below
    return top * ratio ** (capacity - L + 1)


def apportion(weights, total: int, floors=None, ceilings=None) -> list[int]:
    """Sainte-Lague style sequential apportionment.

    Seats are handed out one at a time to the largest ``w / (seats + 0.5)``;
    being sequential it never takes a seat away when ``total`` grows.
    Ties go to the lowest position.
    """
    w = np.asarray(weights, dtype=float)
    n = len(w)
    seats = np.ones(n, dtype=np.int64) if floors is None else np.asarray(floors, dtype=np.int64).copy()
    if seats.sum() > total:
        raise BudgetError(f"floors need {int(seats.sum())} slots, budget is {total}")
    cap = None if ceilings is None else np.asarray(ceilings, dtype=np.int64)
    for _ in range(total - int(seats.sum())):
        prio = w / (seats + 0.5)
        if cap is not None:
            prio = np.where(seats >= cap, -np.inf, prio)
        if not np.isfinite(prio.max()):
            break
        seats[int(np.argmax(prio))] += 1
    return [int(s) for s in seats]


def size_buffers(marginals, total_budget: int, epsilon: float = 0.01, queue_ids=None,
                 method: str = "quantile") -> BufferAllocation:
    """Integer capacities (each >= 1) summing to ``total_budget``.

    ``quantile``: each queue asks for its (1 - epsilon) occupancy quantile. A
    short budget is shared proportionally to the requests; any surplus goes
    one slot at a time to the queue with the largest residual tail mass.
    ``mean``: budget shared in proportion to mean occupancy plus one.
    """
    if not 0 < epsilon <= 0.5:
        raise ConfigError(f"epsilon must lie in (0, 0.5], got {epsilon}")
    n = len(marginals)
    ids = [str(i) for i in range(n)] if queue_ids is None else list(queue_ids)
    if total_budget < n:
        raise BudgetError(f"budget {total_budget} cannot give {n} queues one slot each")
    # visiting queues in id order makes every tie-break an id tie-break
    order = sorted(range(n), key=lambda j: ids[j])
    margs = [np.asarray(marginals[j], dtype=float) for j in order]

    if method == "mean":
        means = [float(np.arange(len(m)) @ m) + 1.0 for m in margs]
        caps = apportion(means, total_budget)
    elif method == "quantile":
        req = [requested_capacity(m, epsilon) for m in margs]
        if sum(req) >= total_budget:
            caps = apportion(req, total_budget, ceilings=req)
        else:
            caps = list(req)
            tails = [residual_tail(m, c) for m, c in zip(margs, caps)]
            for _ in range(total_budget - sum(caps)):
                j = max(range(n), key=lambda i: (tails[i], -caps[i], -i))
                caps[j] += 1
                tails[j] = residual_tail(margs[j], caps[j])
    else:
        raise ConfigError(f"unknown sizing method {method!r}")

    by_pos = {order[i]: caps[i] for i in range(n)}
    return BufferAllocation({ids[j]: by_pos[j] for j in range(n)})


def equal_allocation(queue_ids, total_budget: int) -> BufferAllocation:
    """Constant sizing: equal shares, remainder to the first queues."""
    ids = list(queue_ids)
    n = len(ids)
    if total_budget < n:
        raise BudgetError(f"budget {total_budget} cannot give {n} queues one slot each")
    base, extra = divmod(total_budget, n)
    return BufferAllocation({q: base + (1 if i < extra else 0) for i, q in enumerate(ids)})


def proportional_allocation(queue_ids, rates, total_budget: int) -> BufferAllocation:
    """Constant sizing by traffic ratio."""
    ids = list(queue_ids)
    if total_budget < len(ids):
        raise BudgetError(f"budget {total_budget} cannot give {len(ids)} queues one slot each")
    rates = np.asarray(rates, dtype=float)
    if rates.sum() <= 0:
        return equal_allocation(ids, total_budget)
    return BufferAllocation(dict(zip(ids, apportion(rates, total_budget))))
