"""Event-driven simulation of the full (unsplit) architecture with finite buffers.

Every processor emits Poisson requests into its own queue. A request keeps
its slot while the bus serves it; a cross-bus request then moves into the
bridge buffer of the next hop and is lost if that buffer is full. Each bus
serves one request at a time, exponentially, and picks the next queue with
the configured arbitration policy whenever it is free.

Statistics cover only requests that entered a queue after the warm-up
boundary, so ``arrivals == served + lost + residual`` holds exactly for
every queue.
"""

from __future__ import annotations

import heapq
import time
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .arch import Architecture, bridge_queue_id, validate_routes
from .errors import SimulationError
from .policy import BufferAllocation, StationaryPolicy
from .splitter import SplitPlan, split

POLICIES = ("fcfs", "longest", "timeout", "ctmdp")
STATE_MAPS = ("scaled", "truncate")


def level_map(capacity: int, model_cap: int, mode: str = "scaled") -> list[int]:
    """Model level for each real occupancy 0..capacity.

    ``truncate``: ``min(n, model_cap)``. ``scaled``: ``ceil(n * model_cap / capacity)``
    when the buffer is larger than the model, so a full buffer always reads as
    the model's top level; identical to truncation otherwise.
    """
    if mode == "truncate" or capacity <= model_cap:
        return [min(n, model_cap) for n in range(capacity + 1)]
    return [-(-n * model_cap // capacity) for n in range(capacity + 1)]


@dataclass
class SimConfig:
    allocation: BufferAllocation
    policy: str = "fcfs"
    policies: dict | None = None  # subsystem id -> StationaryPolicy, for "ctmdp"
    threshold: float | None = None  # for "timeout"
    horizon_time: float | None = None
    horizon_events: int | None = None
    seed: int = 1
    warmup: float = 0.1
    state_map: str = "scaled"  # how real occupancies map onto model levels under "ctmdp"

    def check(self):
        if self.policy not in POLICIES:
            raise SimulationError(f"unknown policy {self.policy!r}")
        if (self.horizon_time is None) == (self.horizon_events is None):
            raise SimulationError("give exactly one of horizon_time / horizon_events")
        if (self.horizon_time or self.horizon_events) <= 0:
            raise SimulationError("horizon must be > 0")
        if not 0 <= self.warmup < 1:
            raise SimulationError("warmup fraction must lie in [0, 1)")
        if self.policy == "timeout" and not (self.threshold and self.threshold > 0):
            raise SimulationError("timeout policy needs a threshold > 0")
        if self.policy == "ctmdp" and not self.policies:
            raise SimulationError("ctmdp policy needs one stationary policy per subsystem")
        if self.state_map not in STATE_MAPS:
            raise SimulationError(f"unknown state map {self.state_map!r}")


@dataclass
class QueueStats:
    id: str
    kind: str
    capacity: int
    arrivals: int = 0
    served: int = 0
    lost: int = 0
    timed_out: int = 0
    residual: int = 0
    wait_sum: float = 0.0
    area: float = 0.0

    @property
    def loss_rate(self) -> float:
        return self.lost / self.arrivals if self.arrivals else 0.0

    @property
    def mean_wait(self) -> float:
        return self.wait_sum / self.served if self.served else 0.0


@dataclass
class SimulationReport:
    queues: list
    processors: list  # dicts: id, offered, lost (end-to-end, attributed to source)
    duration: float  # simulated time covered by the statistics
    events: int
    seed: int
    policy: str
    runtime: float = field(default=0.0, compare=False)

    @property
    def total_arrivals(self) -> int:
        return sum(p["offered"] for p in self.processors)

    @property
    def total_lost(self) -> int:
        return sum(q.lost for q in self.queues)

    @property
    def loss_rate(self) -> float:
        a = self.total_arrivals
        return self.total_lost / a if a else 0.0

    def queue(self, qid) -> QueueStats:
        return next(q for q in self.queues if q.id == qid)

    def processor_loss(self) -> dict:
        return {p["id"]: p["lost"] for p in self.processors}

    def to_dict(self) -> dict:
        # wall-clock runtime is left out so reports stay byte-reproducible
        return {
            "seed": self.seed,
            "policy": self.policy,
            "events": self.events,
            "duration": self.duration,
            "aggregate": {
                "arrivals": self.total_arrivals,
                "lost": self.total_lost,
                "loss_rate": self.loss_rate,
            },
            "queues": [
                {
                    "id": q.id, "kind": q.kind, "capacity": q.capacity,
                    "arrivals": q.arrivals, "served": q.served, "lost": q.lost,
                    "timed_out": q.timed_out, "residual": q.residual,
                    "loss_rate": q.loss_rate, "mean_wait": q.mean_wait,
                    "mean_occupancy": q.area / self.duration if self.duration > 0 else 0.0,
                }
                for q in self.queues
            ],
            "processors": [dict(p) for p in self.processors],
        }

    @classmethod
    def from_dict(cls, d) -> "SimulationReport":
        qs = []
        for q in d["queues"]:
            qs.append(QueueStats(
                q["id"], q["kind"], q["capacity"], q["arrivals"], q["served"], q["lost"],
                q["timed_out"], q["residual"], q["mean_wait"] * q["served"],
                q["mean_occupancy"] * d["duration"],
            ))
        return cls(qs, [dict(p) for p in d["processors"]], d["duration"], d["events"], d["seed"], d["policy"])

    def csv_rows(self, budget=None, phase="") -> list[list]:
        return [
            [q.id, q.kind, q.arrivals, q.served, q.lost, repr(q.loss_rate), repr(q.mean_wait),
             self.seed, self.policy, "" if budget is None else budget, phase]
            for q in self.queues
        ]


CSV_HEADER = ["queue_id", "kind", "arrivals", "served", "lost", "loss_rate", "mean_wait",
              "seed", "policy", "budget", "phase"]


def _queue_layout(arch: Architecture, plan: SplitPlan):
    """Queue ids/kinds in subsystem order and each bus's queue indices."""
    ids, kinds, bus_queues = [], [], []
    for s in plan.subsystems:
        local = []
        for q in s.queues:
            local.append(len(ids))
            ids.append(q.id)
            kinds.append(q.kind)
        bus_queues.append(local)
    return ids, kinds, bus_queues


def simulate(arch: Architecture, cfg: SimConfig) -> SimulationReport:
    cfg.check()
    started = time.perf_counter()
    plan = split(arch)
    ids, kinds, bus_queues = _queue_layout(arch, plan)
    missing = [q for q in ids if q not in cfg.allocation.capacities]
    if missing:
        raise SimulationError(f"allocation has no capacity for queues {missing}")
    if cfg.horizon_events is not None and all(p.arrival_rate <= 0 for p in arch.processors):
        raise SimulationError("all arrival rates are zero; an event-count horizon would never end")

    qindex = {q: i for i, q in enumerate(ids)}
    nq = len(ids)
    cap = [int(cfg.allocation[q]) for q in ids]
    bus_ids = [s.bus for s in plan.subsystems]
    qbus = [0] * nq
    for b, local in enumerate(bus_queues):
        for qi in local:
            qbus[qi] = b
    mu = [arch.bus(b).service_rate for b in bus_ids]

    # per processor: cumulative destination probabilities and queue paths
    routes = {}
    for r in validate_routes(arch):
        path = [qindex[r.source]]
        for br, into in zip(r.bridges, r.buses[1:]):
            path.append(qindex[bridge_queue_id(br, into)])
        routes.setdefault(r.source, []).append((r.probability, tuple(path)))
    proc_cum, proc_paths, lam = [], [], []
    for p in arch.processors:
        rs = routes.get(p.id, [])
        total = sum(pr for pr, _ in rs) or 1.0
        acc, cum = 0.0, []
        for pr, _ in rs:
            acc += pr / total
            cum.append(acc)
        if cum:
            cum[-1] = 1.0
        proc_cum.append(cum)
        proc_paths.append([path for _, path in rs])
        lam.append(p.arrival_rate)

    seed = cfg.seed
    arr_streams = [rng.ExpStream(seed, rng.ARRIVALS + i) for i in range(len(lam))]
    route_streams = [rng.Stream(seed, rng.ROUTING + i) for i in range(len(lam))]
    svc_streams = [rng.ExpStream(seed, rng.SERVICE + b) for b in range(len(mu))]
    arb_streams = [rng.Stream(seed, rng.ARBITER + b) for b in range(len(mu))]

    policy = cfg.policy
    tables, strides = [], []
    if policy == "ctmdp":
        for s, local in zip(plan.subsystems, bus_queues):
            pol: StationaryPolicy = cfg.policies.get(s.id)
            if pol is None:
                raise SimulationError(f"no stationary policy for subsystem {s.id}")
            if len(pol.model.caps) != len(local):
                raise SimulationError(f"policy for {s.id} covers {len(pol.model.caps)} queues, bus has {len(local)}")
            tables.append(pol.lookup_table())
            st = [int(v) for v in pol.model.strides]
            # per queue: real occupancy -> contribution to the model state index
            strides.append([
                [lv * st[j] for lv in level_map(cap[qi], int(pol.model.caps[j]), cfg.state_map)]
                for j, qi in enumerate(local)
            ])
    threshold = cfg.threshold if policy == "timeout" else None

    queues = [deque() for _ in range(nq)]
    busy = [False] * len(mu)
    serving = [-1] * len(mu)
    arrivals = [0] * nq
    served = [0] * nq
    lost = [0] * nq
    timed_out = [0] * nq
    wait_sum = [0.0] * nq
    area = [0.0] * nq
    last_t = [0.0] * nq
    p_offered = [0] * len(lam)
    p_lost = [0] * len(lam)

    horizon_t = cfg.horizon_time if cfg.horizon_time is not None else float("inf")
    horizon_n = cfg.horizon_events if cfg.horizon_events is not None else None
    warm_t = cfg.warmup * horizon_t if cfg.horizon_time is not None else float("inf")
    warm_n = int(cfg.warmup * horizon_n) if horizon_n is not None else None
    tracking = cfg.warmup == 0
    t0 = 0.0

    heap = []
    seq = 0
    for i, rate in enumerate(lam):
        if rate > 0:
            heapq.heappush(heap, (arr_streams[i].next() / rate, seq, 0, i))
            seq += 1

    now = 0.0
    events = 0

    def dispatch(b):
        nonlocal seq
        local = bus_queues[b]
        while True:
            if policy == "ctmdp":
                offs = strides[b]
                x = 0
                for j, qi in enumerate(local):
                    x += offs[j][len(queues[qi])]
                a = tables[b][x]
                if a.__class__ is not int:
                    cum, acts = a
                    a = acts[bisect_right(cum, arb_streams[b].uniform())] if len(acts) > 1 else acts[0]
                if a == 0:
                    return
                qi = local[a - 1]
            elif policy == "longest":
                qi, best = -1, 0
                for q in local:
                    n = len(queues[q])
                    if n > best:
                        qi, best = q, n
                if qi < 0:
                    return
            else:  # fcfs / timeout: oldest head first
                qi, best = -1, float("inf")
                for q in local:
                    dq = queues[q]
                    if dq and dq[0][0] < best:
                        qi, best = q, dq[0][0]
                if qi < 0:
                    return
                if threshold is not None and now - best > threshold:
                    # lazy eviction: the inspected head has timed out
                    entry = queues[qi].popleft()
                    if entry[1]:
                        lost[qi] += 1
                        timed_out[qi] += 1
                        p_lost[entry[2]] += 1
                    if tracking:
                        area[qi] += (len(queues[qi]) + 1) * (now - last_t[qi])
                        last_t[qi] = now
                    continue
            busy[b] = True
            serving[b] = qi
            heapq.heappush(heap, (now + svc_streams[b].next() / mu[b], seq, 1, b))
            seq += 1
            return

    def enqueue(qi, entry):
        dq = queues[qi]
        if entry[1]:
            arrivals[qi] += 1
        if len(dq) >= cap[qi]:
            if entry[1]:
                lost[qi] += 1
                p_lost[entry[2]] += 1
            return
        if tracking:
            area[qi] += len(dq) * (now - last_t[qi])
            last_t[qi] = now
        dq.append(entry)
        b = qbus[qi]
        if not busy[b]:
            dispatch(b)

    heappop, heappush = heapq.heappop, heapq.heappush
    while heap:
        t, _, kind, idx = heap[0]
        if t > horizon_t:
            break
        if horizon_n is not None and events >= horizon_n:
            break
        heappop(heap)
        now = t
        events += 1
        if not tracking and (t >= warm_t or (warm_n is not None and events > warm_n)):
            tracking = True
            t0 = now
            for qi in range(nq):
                last_t[qi] = now
        if kind == 0:
            heappush(heap, (now + arr_streams[idx].next() / lam[idx], seq, 0, idx))
            seq += 1
            cum = proc_cum[idx]
            k = bisect_right(cum, route_streams[idx].uniform()) if len(cum) > 1 else 0
            if k >= len(cum):
                k = len(cum) - 1
            path = proc_paths[idx][k]
            if tracking:
                p_offered[idx] += 1
            enqueue(path[0], (now, tracking, idx, path, 0))
        else:
            b = idx
            qi = serving[b]
            dq = queues[qi]
            if tracking:
                area[qi] += len(dq) * (now - last_t[qi])
                last_t[qi] = now
            entry = dq.popleft()
            if entry[1]:
                served[qi] += 1
                wait_sum[qi] += now - entry[0]
            busy[b] = False
            serving[b] = -1
            pos = entry[4] + 1
            path = entry[3]
            if pos < len(path):
                enqueue(path[pos], (now, tracking, entry[2], path, pos))
            dispatch(b)

    end = now if cfg.horizon_time is None else horizon_t
    if not tracking:
        t0 = end
    residual = [0] * nq
    for qi in range(nq):
        if tracking:
            area[qi] += len(queues[qi]) * (end - last_t[qi])
        residual[qi] = sum(1 for e in queues[qi] if e[1])

    qstats = [
        QueueStats(ids[i], kinds[i], cap[i], arrivals[i], served[i], lost[i], timed_out[i],
                   residual[i], wait_sum[i], area[i])
        for i in range(nq)
    ]
    procs = [
        {"id": p.id, "offered": p_offered[i], "lost": p_lost[i],
         "loss_rate": p_lost[i] / p_offered[i] if p_offered[i] else 0.0}
        for i, p in enumerate(arch.processors)
    ]
    return SimulationReport(
        queues=qstats,
        processors=procs,
        duration=end - t0,
        events=events,
        seed=seed,
        policy=policy,
        runtime=time.perf_counter() - started,
    )


def calibrate_timeout(arch: Architecture, allocation: BufferAllocation, horizon_time=None,
                      seed: int = 1, horizon_events=None, warmup: float = 0.1) -> float:
    """Mean time a served request spends in a buffer under FCFS without timeouts."""
    rep = simulate(arch, SimConfig(allocation, "fcfs", horizon_time=horizon_time,
                                   horizon_events=horizon_events, seed=seed, warmup=warmup))
    n = sum(q.served for q in rep.queues)
    if n == 0:
        raise SimulationError("no request was served during calibration")
    return sum(q.wait_sum for q in rep.queues) / n


def _pct(pre, post):
    return (post - pre) / pre * 100.0 if pre else (0.0 if post == pre else float("inf"))


def compare(pre: SimulationReport, post: SimulationReport) -> dict:
    """Loss deltas post - pre, per queue, per processor and in aggregate."""
    if [q.id for q in pre.queues] != [q.id for q in post.queues]:
        raise SimulationError("reports cover different queue sets")
    queues = []
    for a, b in zip(pre.queues, post.queues):
        queues.append({
            "id": a.id, "pre": a.lost, "post": b.lost, "delta": b.lost - a.lost,
            "pct": _pct(a.lost, b.lost), "increased": b.lost > a.lost,
        })
    procs = []
    for a, b in zip(pre.processors, post.processors):
        procs.append({
            "id": a["id"], "pre": a["lost"], "post": b["lost"], "delta": b["lost"] - a["lost"],
            "pct": _pct(a["lost"], b["lost"]), "increased": b["lost"] > a["lost"],
        })
    agg = {
        "pre": pre.total_lost, "post": post.total_lost,
        "delta": post.total_lost - pre.total_lost,
        "pct": _pct(pre.total_lost, post.total_lost),
        "pre_rate": pre.loss_rate, "post_rate": post.loss_rate,
    }
    return {
        "queues": queues,
        "processors": procs,
        "aggregate": agg,
        "increased_queues": [q["id"] for q in queues if q["increased"]],
        "increased_processors": [p["id"] for p in procs if p["increased"]],
    }
