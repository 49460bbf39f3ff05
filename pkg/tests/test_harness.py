import json

import numpy as np
import pytest

from bufplan.arch import parse_architecture
from bufplan.errors import ConfigError
from bufplan.harness import (
    ExperimentResult,
    ExperimentSpec,
    build_lp,
    ctmdp_sizing,
    figure3_csv,
    figure3_gnuplot,
    guard_weights,
    initial_weights,
    reweight,
    run_experiment,
    summarize,
    summary_csv,
    table1_csv,
)
from bufplan.splitter import plan_architecture

from conftest import doc_text, single_queue_arch, two_proc_doc


@pytest.fixture(scope="module")
def small_result():
    from conftest import DATA
    spec = ExperimentSpec(arch_path=str(DATA / "figure1.json"), budgets=(24, 40), iterations=2,
                          horizon_time=1500.0)
    return run_experiment(spec)


def test_grid_is_complete(small_result):
    r = small_result
    assert r.failures == []
    assert r.policies == ["equal", "proportional", "timeout", "ctmdp"]
    assert set(r.reports) == {(b, i, p) for b in (24, 40) for i in range(2) for p in r.policies}
    assert r.seeds == [1, 2]
    assert set(r.thresholds) == {(b, i) for b in (24, 40) for i in range(2)}
    for (b, i), s in r.sizing.items():
        assert s["allocation"]["total"] == b
        assert sum(s["subsystem_budgets"]) == b
        assert all(v <= 1 for v in s["randomized_states"].values())


def test_matched_seeds(small_result):
    for (b, i, p), rep in small_result.reports.items():
        assert rep.seed == small_result.seeds[i]
    # the same arrival streams feed every policy of a row
    offered = {p: small_result.report(24, 0, p).total_arrivals for p in small_result.policies}
    assert len(set(offered.values())) == 1


def test_weights_trace(small_result):
    for b, trace in small_result.weights.items():
        assert len(trace) == 2
        for w in trace:
            assert sum(w) == pytest.approx(1.0)


def test_result_roundtrip(small_result):
    d = small_result.to_dict()
    again = ExperimentResult.from_dict(json.loads(json.dumps(d)))
    assert again.to_dict() == d
    assert json.dumps(summarize(again), sort_keys=True) == json.dumps(summarize(small_result), sort_keys=True)


def test_summary_consistency(small_result):
    s = summarize(small_result)
    assert s["figure_budget"] == 24
    for row in s["aggregate"]:
        reps = [small_result.report(row["budget"], i, row["policy"]) for i in range(2)]
        assert row["mean_lost"] == pytest.approx(np.mean([r.total_lost for r in reps]))
    # per-processor means add up to the aggregate mean
    for b in (24, 40):
        for col, pol in (("pre", "equal"), ("post", "ctmdp")):
            total = sum(row[f"{col}_{b}"] for row in s["table1"])
            agg = next(r for r in s["aggregate"] if r["budget"] == b and r["policy"] == pol)
            assert total == pytest.approx(agg["mean_lost"])
    for imp in s["improvements"]:
        vals = small_result.improvement(imp["budget"], imp["baseline"])
        assert imp["wins"] == sum(1 for v in vals if v is not None and v > 0)


def test_summary_filter(small_result):
    s = summarize(small_result, processors=["1", "3"], figure_budget=40)
    assert [r["processor"] for r in s["table1"]] == ["1", "3"]
    assert s["figure_budget"] == 40
    with pytest.raises(ConfigError):
        summarize(small_result, processors=["nope"])


def test_text_emitters(small_result):
    s = summarize(small_result)
    csv = summary_csv(s).splitlines()
    assert csv[0].startswith("budget,policy")
    t1 = table1_csv(s, small_result.budgets).splitlines()
    assert t1[0].split(",")[:3] == ["processor", "pre_24", "post_24"]
    assert len(t1) == 1 + len(s["table1"])
    dat = figure3_gnuplot(s)
    assert dat.count("\n\n\n") == len(s["figure3"]) - 1
    assert len(figure3_csv(s).splitlines()) == 1 + len(s["figure3"])


def test_first_iteration_independent_of_iteration_count(figure1):
    one = run_experiment(ExperimentSpec(arch=figure1, budgets=(30,), iterations=1, horizon_time=800.0))
    two = run_experiment(ExperimentSpec(arch=figure1, budgets=(30,), iterations=2, horizon_time=800.0))
    for p in one.policies:
        assert one.report(30, 0, p).to_dict() == two.report(30, 0, p).to_dict()


def test_parallel_matches_serial(figure1):
    kw = dict(arch=figure1, budgets=(24, 36), iterations=1, horizon_time=500.0)
    a = run_experiment(ExperimentSpec(**kw))
    b = run_experiment(ExperimentSpec(**kw, jobs=2))
    assert a.to_dict() == b.to_dict()


def test_generous_budget_single_bus():
    arch = parse_architecture(doc_text(two_proc_doc(budget=30)))
    r = run_experiment(ExperimentSpec(arch=arch, budgets=(30,), iterations=1, horizon_time=5000.0,
                                      baselines=("equal",)))
    assert r.policies == ["equal", "ctmdp"]
    assert r.report(30, 0, "ctmdp").total_lost <= r.report(30, 0, "equal").total_lost


@pytest.mark.parametrize("kw", [
    {"iterations": 0},
    {"budgets": ()},
    {"budgets": (3,)},
    {"baselines": ("random",)},
    {"loss_weights": {"99": 1.0}},
    {"loss_weights": {"1": -1.0}},
    {"seeds": [1]},
    {"seeds": [4, 4, 5]},
])
def test_spec_validation(figure1, kw):
    base = dict(arch=figure1, budgets=(40,), iterations=3)
    base.update(kw)
    with pytest.raises(ConfigError):
        ExperimentSpec(**base).resolve()
    with pytest.raises(ConfigError):
        ExperimentSpec().resolve()


def test_weights_guard(figure1):
    plan = plan_architecture(figure1)
    w = initial_weights(plan, 40)
    assert w.sum() == pytest.approx(1.0)
    floors = np.array([len(s.queues) for s in plan.subsystems]) / 40
    g = guard_weights(plan, np.eye(len(w))[0], 40)
    assert np.all(g >= floors / (1 + floors.sum()) - 1e-12)
    assert g.sum() == pytest.approx(1.0)


def test_reweight_moves_towards_loss(figure1):
    from bufplan.policy import equal_allocation
    from bufplan.sim import SimConfig, simulate
    plan = plan_architecture(figure1)
    w = initial_weights(plan, 24)
    rep = simulate(figure1, SimConfig(equal_allocation(figure1.queue_ids, 24), horizon_time=2000.0))
    lost = np.array([sum(rep.queue(q.id).lost for q in s.queues) for s in plan.subsystems], float)
    new = reweight(plan, w, rep, 24)
    expect = guard_weights(plan, 0.5 * w + 0.5 * lost / lost.sum(), 24)
    np.testing.assert_allclose(new, expect)


def test_build_lp_and_sizing(figure1):
    plan = plan_architecture(figure1)
    w = initial_weights(plan, 40)
    models, lp, sub = build_lp(plan, 40, w)
    assert len(models) == len(plan.subsystems) == len(lp.b_ub)
    assert sum(sub) == 40
    out = ctmdp_sizing(plan, 40, w)
    assert out.allocation.total == 40
    assert set(out.allocation.capacities) == set(figure1.queue_ids)
    for s, sb in zip(plan.subsystems, out.subsystem_budgets):
        assert sum(out.allocation[q.id] for q in s.queues) == sb


def test_loss_weights_shift_capacity():
    arch = parse_architecture(doc_text(two_proc_doc(budget=6)))
    plan = plan_architecture(arch)
    w = initial_weights(plan, 6)
    plain = ctmdp_sizing(plan, 6, w, epsilon=0.2)
    heavy = ctmdp_sizing(plan, 6, w, epsilon=0.2, loss_weights={"2": 50.0})
    sid = plan.subsystems[0].id
    m = heavy.policies[sid].model
    # a costly queue gets served first whenever both are busy, so it needs fewer slots
    for x in range(m.n_states):
        if 0 < m.states[x][0] <= m.states[x][1]:
            acts, probs = heavy.policies[sid].distribution(x)
            assert acts[np.argmax(probs)] == 2
    assert heavy.allocation["2"] <= plain.allocation["2"]
    assert heavy.objective != plain.objective
