"""Architecture description: buses, processors, bridges and the buffer budget.

The on-disk format is JSON::

    {"budget": 160, "seed": 1,
     "buses": [{"id": "a", "service_rate": 2.0,
                "processors": [{"id": "1", "arrival_rate": 0.4,
                                "destinations": [{"to": "2", "p": 1.0}]}]}],
     "bridges": [{"id": "ab", "between": ["a", "b"]}]}

``parse_architecture`` validates everything it can about a document;
``Architecture`` itself is a plain value and does no checking, so tests and
the simulator can build degenerate instances (e.g. zero arrival rates)
directly.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

from .errors import (
    BudgetError,
    DisconnectedError,
    DuplicateIdError,
    ParseError,
    ProbabilityError,
    SchemaError,
    UnknownIdError,
    UnreachableError,
)

PROB_TOL = 1e-9
SEED_MAX = 2**64 - 1


@dataclass(frozen=True)
class Processor:
    id: str
    arrival_rate: float
    destinations: tuple[tuple[str, float], ...]
    bus: str


@dataclass(frozen=True)
class Bus:
    id: str
    service_rate: float
    processors: tuple[str, ...]


@dataclass(frozen=True)
class Bridge:
    id: str
    bus_a: str
    bus_b: str

    def other(self, bus: str) -> str:
        return self.bus_b if bus == self.bus_a else self.bus_a


@dataclass(frozen=True)
class Route:
    """Shortest bus-hop path from ``source`` to ``destination``.

    ``buses`` has one more entry than ``bridges``; ``bridges[i]`` joins
    ``buses[i]`` and ``buses[i + 1]``.
    """

    source: str
    destination: str
    probability: float
    buses: tuple[str, ...]
    bridges: tuple[str, ...]

    @property
    def hops(self) -> list[tuple[str, str]]:
        out = [("bus", self.buses[0])]
        for br, bus in zip(self.bridges, self.buses[1:]):
            out.append(("bridge", br))
            out.append(("bus", bus))
        return out


def bridge_queue_id(bridge_id: str, into_bus: str) -> str:
    """Id of the bridge buffer holding traffic that crosses ``bridge_id`` into ``into_bus``."""
    return f"{bridge_id}>{into_bus}"


@dataclass(frozen=True)
class Architecture:
    buses: tuple[Bus, ...]
    processors: tuple[Processor, ...]
    bridges: tuple[Bridge, ...] = ()
    total_budget: int = 0
    seed: int = 1
    _index: dict = field(default=None, compare=False, repr=False, hash=False)

    def __post_init__(self):
        idx = {
            "proc": {p.id: p for p in self.processors},
            "bus": {b.id: b for b in self.buses},
            "bridge": {b.id: b for b in self.bridges},
        }
        object.__setattr__(self, "_index", idx)

    def processor(self, pid: str) -> Processor:
        return self._index["proc"][pid]

    def bus(self, bid: str) -> Bus:
        return self._index["bus"][bid]

    def bridge(self, bid: str) -> Bridge:
        return self._index["bridge"][bid]

    def bus_of(self, pid: str) -> str:
        return self._index["proc"][pid].bus

    @property
    def queue_ids(self) -> list[str]:
        ids = [p.id for p in self.processors]
        for br in self.bridges:
            ids.append(bridge_queue_id(br.id, br.bus_b))
            ids.append(bridge_queue_id(br.id, br.bus_a))
        return ids

    @property
    def queue_count(self) -> int:
        return len(self.processors) + 2 * len(self.bridges)

    def adjacency(self) -> dict[str, list[tuple[str, str]]]:
        """bus id -> sorted [(neighbour bus, bridge id)]."""
        adj = {b.id: [] for b in self.buses}
        for br in self.bridges:
            adj[br.bus_a].append((br.bus_b, br.id))
            adj[br.bus_b].append((br.bus_a, br.id))
        for v in adj.values():
            v.sort()
        return adj

    def with_budget(self, budget: int) -> "Architecture":
        return Architecture(self.buses, self.processors, self.bridges, budget, self.seed)

    def with_seed(self, seed: int) -> "Architecture":
        if not 0 <= seed <= SEED_MAX:
            raise SchemaError(f"seed must lie in [0, 2**64 - 1], got {seed}")
        return Architecture(self.buses, self.processors, self.bridges, self.total_budget, seed)

    def to_dict(self) -> dict:
        buses = []
        for b in self.buses:
            procs = []
            for pid in b.processors:
                p = self.processor(pid)
                procs.append({
                    "id": p.id,
                    "arrival_rate": p.arrival_rate,
                    "destinations": [{"to": to, "p": pr} for to, pr in p.destinations],
                })
            buses.append({"id": b.id, "service_rate": b.service_rate, "processors": procs})
        return {
            "budget": self.total_budget,
            "seed": self.seed,
            "buses": buses,
            "bridges": [{"id": br.id, "between": [br.bus_a, br.bus_b]} for br in self.bridges],
        }


def serialize_architecture(arch: Architecture) -> str:
    return json.dumps(arch.to_dict(), indent=2) + "\n"


def _positive_real(value, what):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{what} must be a number")
    value = float(value)
    if not math.isfinite(value) or value <= 0:
        raise SchemaError(f"{what} must be finite and > 0, got {value}")
    return value


def _require(obj, key, what):
    if not isinstance(obj, dict):
        raise SchemaError(f"{what} must be an object")
    if key not in obj:
        raise SchemaError(f"{what} is missing required key {key!r}")
    return obj[key]


def _str_id(value, what):
    if not isinstance(value, str) or not value:
        raise SchemaError(f"{what} must be a non-empty string")
    return value


def parse_architecture(text: str) -> Architecture:
    """Parse and fully validate a JSON architecture document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"JSON syntax error: {exc.msg}", exc.lineno, exc.colno) from None
    if not isinstance(doc, dict):
        raise SchemaError("top level must be an object")

    budget = _require(doc, "budget", "architecture")
    if isinstance(budget, bool) or not isinstance(budget, int) or budget < 0:
        raise SchemaError(f"budget must be an integer >= 0, got {budget!r}")
    seed = doc.get("seed", 1)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= SEED_MAX:
        raise SchemaError(f"seed must be an unsigned 64-bit integer, got {seed!r}")

    raw_buses = _require(doc, "buses", "architecture")
    raw_bridges = _require(doc, "bridges", "architecture")
    if not isinstance(raw_buses, list) or not raw_buses:
        raise SchemaError("buses must be a non-empty list")
    if not isinstance(raw_bridges, list):
        raise SchemaError("bridges must be a list")

    seen: set[str] = set()

    def claim(ident, kind):
        if ident in seen:
            raise DuplicateIdError(ident, kind)
        seen.add(ident)

    buses, processors, raw_dests = [], [], {}
    for rb in raw_buses:
        bid = _str_id(_require(rb, "id", "bus"), "bus id")
        claim(bid, "bus id")
        rate = _positive_real(_require(rb, "service_rate", f"bus {bid}"), f"service_rate of bus {bid}")
        rps = _require(rb, "processors", f"bus {bid}")
        if not isinstance(rps, list) or not rps:
            raise SchemaError(f"bus {bid} must have at least one processor")
        pids = []
        for rp in rps:
            pid = _str_id(_require(rp, "id", f"processor on bus {bid}"), "processor id")
            claim(pid, "processor id")
            lam = _positive_real(_require(rp, "arrival_rate", f"processor {pid}"), f"arrival_rate of processor {pid}")
            dests = _require(rp, "destinations", f"processor {pid}")
            if not isinstance(dests, list) or not dests:
                raise ProbabilityError(f"processor {pid} needs a non-empty destination list")
            raw_dests[pid] = dests
            processors.append([pid, lam, bid])
            pids.append(pid)
        buses.append(Bus(bid, rate, tuple(pids)))

    bus_ids = {b.id for b in buses}
    bridges, pairs = [], set()
    for rbr in raw_bridges:
        brid = _str_id(_require(rbr, "id", "bridge"), "bridge id")
        claim(brid, "bridge id")
        between = _require(rbr, "between", f"bridge {brid}")
        if not isinstance(between, list) or len(between) != 2:
            raise SchemaError(f"bridge {brid}: 'between' must list exactly two bus ids")
        for ref in between:
            if ref not in bus_ids:
                raise UnknownIdError(ref, f"bridge {brid}")
        a, b = between
        if a == b:
            raise SchemaError(f"bridge {brid} joins bus {a} to itself")
        key = frozenset((a, b))
        if key in pairs:
            raise DuplicateIdError(f"{a}-{b}", "bridge bus pair")
        pairs.add(key)
        bridges.append(Bridge(brid, a, b))

    proc_ids = {p[0] for p in processors}
    procs = []
    for pid, lam, bid in processors:
        dests, total = [], 0.0
        targets = set()
        for d in raw_dests[pid]:
            to = _require(d, "to", f"destination of processor {pid}")
            if to not in proc_ids:
                raise UnknownIdError(to, f"destinations of processor {pid}")
            if to in targets:
                raise DuplicateIdError(to, f"destination of processor {pid}")
            targets.add(to)
            pr = _require(d, "p", f"destination of processor {pid}")
            if isinstance(pr, bool) or not isinstance(pr, (int, float)) or not 0.0 <= pr <= 1.0:
                raise ProbabilityError(f"processor {pid}: probability {pr!r} outside [0, 1]")
            if to == pid and pr >= 1.0:
                raise ProbabilityError(f"processor {pid} sends all traffic to itself")
            total += pr
            dests.append((to, float(pr)))
        if abs(total - 1.0) > PROB_TOL:
            raise ProbabilityError(f"processor {pid}: destination probabilities sum to {total}, not 1")
        procs.append(Processor(pid, lam, tuple(dests), bid))

    arch = Architecture(tuple(buses), tuple(procs), tuple(bridges), budget, seed)
    for qid in arch.queue_ids[len(procs):]:
        if qid in seen:
            raise DuplicateIdError(qid, "queue id")
    _check_connected(arch)
    validate_routes(arch)
    if budget < arch.queue_count:
        raise BudgetError(f"budget {budget} is below the queue count {arch.queue_count}")
    return arch


def _components(arch: Architecture) -> list[set[str]]:
    adj = arch.adjacency()
    seen, comps = set(), []
    for b in sorted(adj):
        if b in seen:
            continue
        comp, todo = {b}, [b]
        while todo:
            for nb, _ in adj[todo.pop()]:
                if nb not in comp:
                    comp.add(nb)
                    todo.append(nb)
        seen |= comp
        comps.append(comp)
    return comps


def _check_connected(arch: Architecture) -> None:
    # Buses without any bridge are allowed as local islands; every bridged
    # bus must sit in one component.
    bridged = [c for c in _components(arch) if len(c) > 1]
    if len(bridged) > 1:
        names = " | ".join(",".join(sorted(c)) for c in bridged)
        raise DisconnectedError(f"bus-bridge graph has several bridged components: {names}")


def _bus_path(adj, src: str, dst: str):
    """Lexicographically smallest among the shortest bus paths, or None."""
    dist = {dst: 0}
    todo = deque([dst])
    while todo:
        u = todo.popleft()
        for v, _ in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                todo.append(v)
    if src not in dist:
        return None
    buses, bridges = [src], []
    cur = src
    while cur != dst:
        # adj lists are sorted by neighbour id, so the first hit is the smallest
        nxt, br = next((v, b) for v, b in adj[cur] if dist.get(v) == dist[cur] - 1)
        buses.append(nxt)
        bridges.append(br)
        cur = nxt
    return tuple(buses), tuple(bridges)


def validate_routes(arch: Architecture) -> list[Route]:
    """One route per (source, destination) pair with positive probability."""
    adj = arch.adjacency()
    routes = []
    for p in arch.processors:
        for to, pr in p.destinations:
            if pr <= 0:
                continue
            path = _bus_path(adj, p.bus, arch.bus_of(to))
            if path is None:
                raise UnreachableError(f"processor {to} is unreachable from processor {p.id}")
            routes.append(Route(p.id, to, pr, path[0], path[1]))
    return routes


def load_architecture(path) -> Architecture:
    with open(path, encoding="utf-8") as fh:
        return parse_architecture(fh.read())
