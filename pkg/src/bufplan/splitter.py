"""Cut every bridge into a pair of buffers so each bus becomes a linear subsystem.

A bridge between buses A and B turns into two bridge buffers: ``br>A`` holds
requests that crossed into A and waits for bus A; ``br>B`` is the mirror.
Each buffer therefore belongs to the subsystem whose bus drains it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .arch import Architecture, bridge_queue_id, validate_routes

INGRESS = "ingress"
EGRESS = "egress"


@dataclass(frozen=True)
class QueueSpec:
    id: str
    kind: str  # "processor" | "bridge"
    arrival_rate: float
    subsystem: str
    bridge: str | None = None
    direction: str | None = None
    from_bus: str | None = None


@dataclass(frozen=True)
class Subsystem:
    id: str
    bus: str
    service_rate: float
    queues: tuple[QueueSpec, ...]

    @property
    def queue_ids(self) -> list[str]:
        return [q.id for q in self.queues]

    @property
    def arrival_rates(self) -> list[float]:
        return [q.arrival_rate for q in self.queues]

    @property
    def bridge_queues(self) -> list[QueueSpec]:
        return [q for q in self.queues if q.kind == "bridge"]


@dataclass(frozen=True)
class SplitPlan:
    subsystems: tuple[Subsystem, ...]
    bridge_pairs: tuple[tuple[str, str], ...]

    def subsystem_of_bus(self, bus: str) -> Subsystem:
        return next(s for s in self.subsystems if s.bus == bus)

    def queue(self, qid: str) -> QueueSpec:
        for s in self.subsystems:
            for q in s.queues:
                if q.id == qid:
                    return q
        raise KeyError(qid)

    def to_dict(self) -> dict:
        return {
            "subsystems": [
                {
                    "id": s.id,
                    "bus": s.bus,
                    "service_rate": s.service_rate,
                    "queues": [
                        {k: v for k, v in vars(q).items() if v is not None}
                        for q in s.queues
                    ],
                }
                for s in self.subsystems
            ],
            "bridge_pairs": [list(p) for p in self.bridge_pairs],
        }


def subsystem_id(bus: str) -> str:
    return f"sub-{bus}"


def detect_coupling(arch: Architecture) -> list[tuple[str, str]]:
    """Bus pairs joined by a bridge; each would add quadratic terms to a joint model."""
    return sorted(tuple(sorted((br.bus_a, br.bus_b))) for br in arch.bridges)


def split(arch: Architecture) -> SplitPlan:
    subs = []
    for bus in arch.buses:
        sid = subsystem_id(bus.id)
        queues = [
            QueueSpec(pid, "processor", arch.processor(pid).arrival_rate, sid)
            for pid in bus.processors
        ]
        for br in sorted(arch.bridges, key=lambda b: b.id):
            if bus.id in (br.bus_a, br.bus_b):
                queues.append(QueueSpec(
                    bridge_queue_id(br.id, bus.id), "bridge", 0.0, sid,
                    bridge=br.id, direction=INGRESS, from_bus=br.other(bus.id),
                ))
        subs.append(Subsystem(sid, bus.id, bus.service_rate, tuple(queues)))
    pairs = tuple(
        (bridge_queue_id(br.id, br.bus_a), bridge_queue_id(br.id, br.bus_b))
        for br in arch.bridges
    )
    return SplitPlan(tuple(subs), pairs)


def estimate_bridge_rates(arch: Architecture, plan: SplitPlan) -> SplitPlan:
    """Fill bridge buffer arrival rates with the zero-loss offered load."""
    load: dict[str, float] = {}
    for r in validate_routes(arch):
        rate = arch.processor(r.source).arrival_rate * r.probability
        for br, into in zip(r.bridges, r.buses[1:]):
            qid = bridge_queue_id(br, into)
            load[qid] = load.get(qid, 0.0) + rate
    subs = []
    for s in plan.subsystems:
        qs = tuple(
            replace(q, arrival_rate=load.get(q.id, 0.0)) if q.kind == "bridge" else q
            for q in s.queues
        )
        subs.append(replace(s, queues=qs))
    return replace(plan, subsystems=tuple(subs))


def plan_architecture(arch: Architecture) -> SplitPlan:
    return estimate_bridge_rates(arch, split(arch))
