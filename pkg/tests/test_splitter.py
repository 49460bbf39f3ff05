import pytest

from bufplan.arch import parse_architecture
from bufplan.ctmdp import build_model, choose_caps
from bufplan.splitter import detect_coupling, estimate_bridge_rates, plan_architecture, split

from conftest import chain_doc, doc_text, two_proc_doc


def test_coupling_single_bus_is_empty():
    arch = parse_architecture(doc_text(two_proc_doc()))
    assert detect_coupling(arch) == []


def test_coupling_figure1(figure1):
    assert detect_coupling(figure1) == [("b", "f"), ("b", "g"), ("f", "g")]


def test_coupling_chain(chain):
    assert detect_coupling(chain) == [("a", "b"), ("b", "c")]


def test_split_single_bus():
    plan = split(parse_architecture(doc_text(two_proc_doc())))
    assert len(plan.subsystems) == 1
    (s,) = plan.subsystems
    assert len(s.queues) == 2 and s.bridge_queues == []


def test_split_figure1_has_four_subsystems(figure1):
    plan = split(figure1)
    assert [s.bus for s in plan.subsystems] == ["a", "b", "f", "g"]
    # every bridge yields one buffer on each side
    assert len(plan.bridge_pairs) == 3
    for qa, qb in plan.bridge_pairs:
        assert plan.queue(qa).bridge == plan.queue(qb).bridge
        assert plan.queue(qa).subsystem != plan.queue(qb).subsystem


def _components_without_bridges(arch):
    """Union-find over the bus graph with every bridge edge removed."""
    parent = {b.id: b.id for b in arch.buses}

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    kept = []  # no edge survives the cut
    for u, v in kept:
        parent[find(u)] = find(v)
    return {find(b) for b in parent}


def test_split_chain(chain):
    plan = split(chain)
    assert len(plan.subsystems) == len(_components_without_bridges(chain)) == 3
    mid = plan.subsystem_of_bus("b")
    assert sorted(q.id for q in mid.bridge_queues) == ["ab>b", "bc>b"]
    assert len(plan.subsystem_of_bus("a").bridge_queues) == 1


def test_split_invariants(netproc16):
    plan = split(netproc16)
    procs = [q.id for s in plan.subsystems for q in s.queues if q.kind == "processor"]
    assert sorted(procs) == sorted(p.id for p in netproc16.processors)
    assert len({s.bus for s in plan.subsystems}) == len(plan.subsystems) == len(netproc16.buses)
    assert all(s.queues for s in plan.subsystems)
    # bridge-free input <=> processor-only subsystems
    for s in plan.subsystems:
        has_bridge = any(s.bus in (br.bus_a, br.bus_b) for br in netproc16.bridges)
        assert bool(s.bridge_queues) == has_bridge


def test_no_cross_traffic_means_zero_bridge_rates():
    def bus(bid, p, q):
        return {"id": bid, "service_rate": 1.0, "processors": [
            {"id": p, "arrival_rate": 0.2, "destinations": [{"to": q, "p": 1.0}]},
            {"id": q, "arrival_rate": 0.2, "destinations": [{"to": p, "p": 1.0}]}]}

    doc = {"budget": 20, "buses": [bus("a", "1", "2"), bus("b", "3", "4"), bus("c", "5", "6")],
           "bridges": chain_doc()["bridges"]}
    plan = plan_architecture(parse_architecture(doc_text(doc)))
    assert sum(len(s.bridge_queues) for s in plan.subsystems) == 4
    assert all(q.arrival_rate == 0.0 for s in plan.subsystems for q in s.bridge_queues)


def test_single_crossing_route_rate():
    doc = {
        "budget": 10,
        "buses": [
            {"id": "a", "service_rate": 3.0, "processors": [
                {"id": "1", "arrival_rate": 2.0, "destinations": [{"to": "2", "p": 0.5}, {"to": "1b", "p": 0.5}]},
                {"id": "1b", "arrival_rate": 1.0, "destinations": [{"to": "1", "p": 1.0}]}]},
            {"id": "b", "service_rate": 3.0, "processors": [
                {"id": "2", "arrival_rate": 1.0, "destinations": [{"to": "2b", "p": 1.0}]},
                {"id": "2b", "arrival_rate": 1.0, "destinations": [{"to": "2", "p": 1.0}]}]},
        ],
        "bridges": [{"id": "ab", "between": ["a", "b"]}],
    }
    plan = plan_architecture(parse_architecture(doc_text(doc)))
    assert plan.queue("ab>b").arrival_rate == pytest.approx(1.0)
    assert plan.queue("ab>a").arrival_rate == 0.0


def _bfs_path(arch, src, dst):
    """Independent route oracle: BFS from src, neighbours in sorted order."""
    adj = {}
    for br in arch.bridges:
        adj.setdefault(br.bus_a, []).append((br.bus_b, br.id))
        adj.setdefault(br.bus_b, []).append((br.bus_a, br.id))
    frontier = [(src,)]
    seen = {src}
    while frontier:
        nxt = []
        for path in sorted(frontier):
            if path[-1] == dst:
                return path
            for v, _ in sorted(adj.get(path[-1], [])):
                if v not in seen:
                    seen.add(v)
                    nxt.append(path + (v,))
        frontier = nxt
    raise AssertionError("unreachable")


def _brute_force_rates(arch):
    rates = {}
    for p in arch.processors:
        for to, pr in p.destinations:
            path = _bfs_path(arch, p.bus, arch.bus_of(to))
            for u, v in zip(path, path[1:]):
                br = next(b.id for b in arch.bridges if {b.bus_a, b.bus_b} == {u, v})
                rates[f"{br}>{v}"] = rates.get(f"{br}>{v}", 0.0) + p.arrival_rate * pr
    return rates


def test_bridge_rates_match_brute_force(figure1, netproc16):
    for arch in (figure1, netproc16):
        plan = plan_architecture(arch)
        expect = _brute_force_rates(arch)
        for s in plan.subsystems:
            for q in s.bridge_queues:
                assert q.arrival_rate == pytest.approx(expect.get(q.id, 0.0), abs=1e-12)


def test_flow_conservation_over_final_hops(netproc16, figure1, chain):
    for arch in (netproc16, figure1, chain):
        plan = plan_architecture(arch)
        total = sum(p.arrival_rate for p in arch.processors)
        # final-hop load: same-bus traffic ends at its source queue, the rest
        # at the last bridge buffer on its route
        final = 0.0
        for p in arch.processors:
            for to, pr in p.destinations:
                final += p.arrival_rate * pr
        assert final == pytest.approx(total)
        crossing = sum(p.arrival_rate * pr for p in arch.processors for to, pr in p.destinations
                       if arch.bus_of(to) != p.bus)
        # every crossing request enters at least one bridge buffer
        into = sum(q.arrival_rate for s in plan.subsystems for q in s.bridge_queues)
        assert into >= crossing - 1e-12


def test_models_reference_one_bus(figure1):
    plan = plan_architecture(figure1)
    for s in plan.subsystems:
        m = build_model(s, choose_caps(s, 3 * len(s.queues), 2))
        assert m.subsystem == s.id
        assert set(m.queue_ids) == set(s.queue_ids)
        assert m.service_rate == figure1.bus(s.bus).service_rate


def test_estimate_is_pure(figure1):
    plan = split(figure1)
    estimate_bridge_rates(figure1, plan)
    assert all(q.arrival_rate == 0.0 for s in plan.subsystems for q in s.bridge_queues)


def test_plan_to_dict(figure1):
    d = plan_architecture(figure1).to_dict()
    assert [s["id"] for s in d["subsystems"]] == ["sub-a", "sub-b", "sub-f", "sub-g"]
    assert d["bridge_pairs"][0] == ["bf>b", "bf>f"]
