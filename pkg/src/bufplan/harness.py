"""Experiment loop: size, solve, resimulate, re-weight, sweep budgets.

For each budget the harness simulates the constant-sizing baselines
(equal split and traffic-proportional, both FCFS), a timeout baseline on the
equal split, and the CTMDP pipeline (split -> models -> stacked LP ->
policy + allocation). Iteration ``i`` uses ``seeds[i]`` for every policy, so
the arrival streams match across a row of the grid. After each iteration
the per-subsystem budget weights move halfway towards the observed
per-subsystem loss shares.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import lp as lpmod
from .arch import Architecture, load_architecture
from .ctmdp import DEFAULT_MAX_LEVEL, build_model, choose_caps, fit_max_level
from .errors import ConfigError, NumericalError
from .policy import (
    BufferAllocation,
    apportion,
    equal_allocation,
    extract_policy,
    occupancy_marginals,
    proportional_allocation,
    size_buffers,
)
from .sim import SimConfig, SimulationReport, calibrate_timeout, compare, simulate
from .splitter import SplitPlan, plan_architecture

log = logging.getLogger(__name__)

DEFAULT_BUDGETS = (160, 320, 640)
BASELINES = ("equal", "proportional", "timeout")
LP_MAX_STATES = 1000


@dataclass
class ExperimentSpec:
    arch_path: str | None = None
    arch: Architecture | None = None
    budgets: tuple = DEFAULT_BUDGETS
    iterations: int = 10
    seeds: list | None = None
    epsilon: float = 0.01
    max_level: int = DEFAULT_MAX_LEVEL
    max_states: int = LP_MAX_STATES
    horizon_time: float = 20_000.0
    warmup: float = 0.1
    baselines: tuple = BASELINES
    sizing: str = "quantile"
    state_map: str = "scaled"
    loss_weights: dict | None = None
    jobs: int = 1

    def resolve(self) -> tuple[Architecture, list]:
        if self.arch is None:
            if self.arch_path is None:
                raise ConfigError("experiment needs an architecture")
            self.arch = load_architecture(self.arch_path)
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not self.budgets or any(int(b) <= 0 for b in self.budgets):
            raise ConfigError("budgets must be positive integers")
        for b in self.budgets:
            if b < self.arch.queue_count:
                raise ConfigError(f"budget {b} is below the queue count {self.arch.queue_count}")
        unknown = set(self.baselines) - set(BASELINES)
        if unknown:
            raise ConfigError(f"unknown baselines {sorted(unknown)}")
        if self.loss_weights:
            procs = {p.id for p in self.arch.processors}
            bad = sorted(set(self.loss_weights) - procs)
            if bad:
                raise ConfigError(f"loss weights name unknown processors {bad}")
            if any(float(v) < 0 for v in self.loss_weights.values()):
                raise ConfigError("loss weights must be non-negative")
        seeds = list(self.seeds) if self.seeds is not None else [self.arch.seed + i for i in range(self.iterations)]
        if len(seeds) < self.iterations:
            raise ConfigError(f"{self.iterations} iterations need {self.iterations} seeds, got {len(seeds)}")
        seeds = seeds[: self.iterations]
        if len(set(seeds)) != len(seeds):
            raise ConfigError("seeds must be distinct")
        return self.arch, seeds


@dataclass
class SizingOutcome:
    allocation: BufferAllocation
    policies: dict
    subsystem_budgets: list
    caps: dict
    objective: float
    lp_iterations: int
    randomized: dict  # subsystem id -> randomized states
    budget_rows: int
    residuals: dict


@dataclass
class ExperimentResult:
    budgets: list
    seeds: list
    policies: list
    reports: dict  # (budget, iteration, policy) -> SimulationReport
    weights: dict  # budget -> [weights per iteration]
    thresholds: dict  # (budget, iteration) -> timeout threshold
    sizing: dict  # (budget, iteration) -> summary dict of the CTMDP step
    failures: list = field(default_factory=list)

    def report(self, budget, iteration, policy) -> SimulationReport:
        return self.reports[(budget, iteration, policy)]

    def improvement(self, budget, baseline) -> list:
        """Per-iteration (baseline_loss - ctmdp_loss) / baseline_loss, None when baseline_loss is 0."""
        out = []
        for i in range(len(self.seeds)):
            key_b, key_c = (budget, i, baseline), (budget, i, "ctmdp")
            if key_b not in self.reports or key_c not in self.reports:
                out.append(None)
                continue
            pre = self.reports[key_b].total_lost
            post = self.reports[key_c].total_lost
            out.append((pre - post) / pre if pre > 0 else None)
        return out

    def to_dict(self) -> dict:
        return {
            "budgets": list(self.budgets),
            "seeds": list(self.seeds),
            "policies": list(self.policies),
            "reports": [
                {"budget": b, "iteration": i, "policy": p, "report": r.to_dict()}
                for (b, i, p), r in sorted(self.reports.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2]))
            ],
            "weights": {str(b): [list(map(float, w)) for w in ws] for b, ws in sorted(self.weights.items())},
            "thresholds": [
                {"budget": b, "iteration": i, "threshold": t} for (b, i), t in sorted(self.thresholds.items())
            ],
            "sizing": [
                {"budget": b, "iteration": i, **s} for (b, i), s in sorted(self.sizing.items())
            ],
            "failures": list(self.failures),
        }

    @classmethod
    def from_dict(cls, d) -> "ExperimentResult":
        reports = {
            (e["budget"], e["iteration"], e["policy"]): SimulationReport.from_dict(e["report"])
            for e in d["reports"]
        }
        return cls(
            budgets=list(d["budgets"]),
            seeds=list(d["seeds"]),
            policies=list(d["policies"]),
            reports=reports,
            weights={int(b): ws for b, ws in d["weights"].items()},
            thresholds={(e["budget"], e["iteration"]): e["threshold"] for e in d["thresholds"]},
            sizing={(e["budget"], e["iteration"]): {k: v for k, v in e.items() if k not in ("budget", "iteration")}
                    for e in d["sizing"]},
            failures=list(d.get("failures", [])),
        )


def initial_weights(plan: SplitPlan, budget: int) -> np.ndarray:
    load = np.array([sum(s.arrival_rates) for s in plan.subsystems], dtype=float)
    w = load / load.sum() if load.sum() > 0 else np.full(len(load), 1.0 / len(load))
    return guard_weights(plan, w, budget)


def guard_weights(plan: SplitPlan, w, budget: int) -> np.ndarray:
    """Keep every subsystem's share at or above one slot per queue."""
    floor = np.array([len(s.queues) for s in plan.subsystems], dtype=float) / budget
    w = np.maximum(np.asarray(w, dtype=float), floor)
    return w / w.sum()


def reweight(plan: SplitPlan, weights, report: SimulationReport, budget: int) -> np.ndarray:
    lost = {q.id: q.lost for q in report.queues}
    per_sub = np.array([sum(lost[q.id] for q in s.queues) for s in plan.subsystems], dtype=float)
    if per_sub.sum() <= 0:
        return np.asarray(weights, dtype=float)
    share = per_sub / per_sub.sum()
    return guard_weights(plan, 0.5 * np.asarray(weights) + 0.5 * share, budget)


def build_lp(plan: SplitPlan, budget: int, weights, max_level=DEFAULT_MAX_LEVEL, max_states=LP_MAX_STATES,
             loss_weights=None):
    """Per-subsystem budgets, models sized to ``max_states``, and the stacked LP."""
    lw = loss_weights or {}
    floors = [len(s.queues) for s in plan.subsystems]
    sub_budgets = apportion(weights, budget, floors=floors)
    models = []
    for s, sb in zip(plan.subsystems, sub_budgets):
        level = fit_max_level(len(s.queues), max_level, max_states)
        qw = [float(lw.get(q.id, 1.0)) for q in s.queues]
        models.append(build_model(s, choose_caps(s, sb, level), loss_weights=qw))
    return models, lpmod.formulate(models, budget, weights), sub_budgets


def ctmdp_sizing(plan: SplitPlan, budget: int, weights, epsilon=0.01, max_level=DEFAULT_MAX_LEVEL,
                 max_states=LP_MAX_STATES, sizing="quantile", cache=None, loss_weights=None) -> SizingOutcome:
    """Models for every subsystem, one stacked LP, then policies and capacities.

    ``loss_weights`` maps processor ids to cost multipliers; unlisted queues weigh 1.
    """
    subs = plan.subsystems
    models, lp, sub_budgets = build_lp(plan, budget, weights, max_level, max_states, loss_weights)
    meas = lpmod.solve_measure(lp, cache=cache)
    alloc = BufferAllocation({})
    policies, randomized, residuals = {}, {}, {}
    for s, m, z, sb, rhs in zip(subs, models, meas.z, sub_budgets, lp.b_ub):
        chk = lpmod.verify_measure(m, z, rhs)
        if not chk["ok"]:
            raise NumericalError(f"subsystem {s.id}: occupation measure fails verification {chk}")
        pol = extract_policy(m, z)
        k = pol.randomized_states()
        if k > 1:
            raise NumericalError(f"subsystem {s.id}: {k} randomized states exceed its single budget row")
        policies[s.id] = pol
        randomized[s.id] = k
        residuals[s.id] = {key: chk[key] for key in ("balance_residual", "normalization_residual", "budget_slack")}
        margs = occupancy_marginals(m, z)
        alloc = alloc.merged(size_buffers(margs, sb, epsilon, s.queue_ids, method=sizing))
    return SizingOutcome(
        allocation=alloc,
        policies=policies,
        subsystem_budgets=sub_budgets,
        caps={m.subsystem: list(m.caps) for m in models},
        objective=meas.objective_value,
        lp_iterations=meas.iterations,
        randomized=randomized,
        budget_rows=len(lp.b_ub),
        residuals=residuals,
    )


def _run_budget(arch: Architecture, spec: ExperimentSpec, seeds: list, budget: int):
    plan = plan_architecture(arch)
    queue_ids = [q.id for s in plan.subsystems for q in s.queues]
    rates = [q.arrival_rate for s in plan.subsystems for q in s.queues]
    allocs = {
        "equal": equal_allocation(queue_ids, budget),
        "proportional": proportional_allocation(queue_ids, rates, budget),
    }
    reports, thresholds, sizing_info, failures = {}, {}, {}, []
    weights = initial_weights(plan, budget)
    trace = []
    cache = {}
    horizon = spec.horizon_time

    def cfg(alloc, policy, seed, **kw):
        return SimConfig(alloc, policy, horizon_time=horizon, seed=seed, warmup=spec.warmup, **kw)

    for i, seed in enumerate(seeds):
        trace.append([float(w) for w in weights])
        for name in ("equal", "proportional"):
            if name in spec.baselines:
                reports[(budget, i, name)] = simulate(arch, cfg(allocs[name], "fcfs", seed))
        if "timeout" in spec.baselines:
            try:
                thr = calibrate_timeout(arch, allocs["equal"], horizon, seed, warmup=spec.warmup)
                thresholds[(budget, i)] = thr
                reports[(budget, i, "timeout")] = simulate(arch, cfg(allocs["equal"], "timeout", seed, threshold=thr))
            except Exception as exc:  # keep the rest of the grid
                failures.append({"budget": budget, "iteration": i, "policy": "timeout", "error": str(exc)})
        try:
            out = ctmdp_sizing(plan, budget, weights, spec.epsilon, spec.max_level, spec.max_states,
                               spec.sizing, cache, spec.loss_weights)
        except Exception as exc:
            failures.append({"budget": budget, "iteration": i, "policy": "ctmdp", "error": str(exc)})
            continue
        sizing_info[(budget, i)] = {
            "allocation": out.allocation.to_dict(),
            "subsystem_budgets": out.subsystem_budgets,
            "caps": out.caps,
            "objective": out.objective,
            "lp_iterations": out.lp_iterations,
            "randomized_states": out.randomized,
            "budget_rows": out.budget_rows,
            "residuals": out.residuals,
        }
        post = simulate(arch, cfg(out.allocation, "ctmdp", seed, policies=out.policies, state_map=spec.state_map))
        reports[(budget, i, "ctmdp")] = post
        log.info("budget %d iteration %d: ctmdp loss %.4f", budget, i, post.loss_rate)
        weights = reweight(plan, weights, post, budget)
    return budget, reports, trace, thresholds, sizing_info, failures


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    arch, seeds = spec.resolve()
    budgets = [int(b) for b in spec.budgets]
    args = [(arch, spec, seeds, b) for b in budgets]
    if spec.jobs > 1 and len(budgets) > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as ex:
            parts = list(ex.map(_run_budget, *zip(*args)))
    else:
        parts = [_run_budget(*a) for a in args]
    reports, weights, thresholds, sizing, failures = {}, {}, {}, {}, []
    # merge in budget order whatever the completion order was
    for budget, reps, trace, thr, siz, fail in sorted(parts, key=lambda p: p[0]):
        reports.update(reps)
        weights[budget] = trace
        thresholds.update(thr)
        sizing.update(siz)
        failures.extend(fail)
    policies = [p for p in ("equal", "proportional", "timeout") if p in spec.baselines] + ["ctmdp"]
    return ExperimentResult(budgets, seeds, policies, reports, weights, thresholds, sizing, failures)


# ---------------------------------------------------------------- summaries

def _mean(xs):
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else None


def summarize(result: ExperimentResult, processors=None, figure_budget=None) -> dict:
    """Aggregate loss table, per-processor loss by budget, and per-processor bar data."""
    iters = range(len(result.seeds))
    any_rep = next(iter(result.reports.values()))
    proc_ids = [p["id"] for p in any_rep.processors]
    if processors:
        unknown = [p for p in processors if p not in proc_ids]
        if unknown:
            raise ConfigError(f"unknown processors {unknown}")
        proc_ids = [p for p in proc_ids if p in set(processors)]

    def mean_lost(budget, policy, pid=None):
        vals = []
        for i in iters:
            r = result.reports.get((budget, i, policy))
            if r is None:
                continue
            vals.append(r.processor_loss()[pid] if pid is not None else r.total_lost)
        return _mean(vals)

    def mean_rate(budget, policy, pid):
        vals = []
        for i in iters:
            r = result.reports.get((budget, i, policy))
            if r is not None:
                vals.extend(p["loss_rate"] for p in r.processors if p["id"] == pid)
        return _mean(vals)

    aggregate = []
    for b in result.budgets:
        for p in result.policies:
            reps = [result.reports[(b, i, p)] for i in iters if (b, i, p) in result.reports]
            if not reps:
                continue
            aggregate.append({
                "budget": b,
                "policy": p,
                "runs": len(reps),
                "mean_lost": _mean([r.total_lost for r in reps]),
                "mean_loss_rate": _mean([r.loss_rate for r in reps]),
                "std_loss_rate": float(np.std([r.loss_rate for r in reps])),
            })
    improvements = []
    for b in result.budgets:
        for base in result.policies:
            if base == "ctmdp":
                continue
            vals = result.improvement(b, base)
            wins = sum(1 for v in vals if v is not None and v > 0)
            improvements.append({
                "budget": b, "baseline": base, "mean_improvement_pct": None if _mean(vals) is None else 100 * _mean(vals),
                "wins": wins, "runs": sum(1 for v in vals if v is not None),
            })
    table1 = []
    for pid in proc_ids:
        row = {"processor": pid}
        for b in result.budgets:
            row[f"pre_{b}"] = mean_lost(b, "equal", pid)
            row[f"post_{b}"] = mean_lost(b, "ctmdp", pid)
            row[f"pre_rate_{b}"] = mean_rate(b, "equal", pid)
            row[f"post_rate_{b}"] = mean_rate(b, "ctmdp", pid)
        table1.append(row)
    fb = result.budgets[0] if figure_budget is None else figure_budget
    figure3 = [
        {"processor": pid, "pre": mean_lost(fb, "equal", pid), "post": mean_lost(fb, "ctmdp", pid),
         "timeout": mean_lost(fb, "timeout", pid)}
        for pid in proc_ids
    ]
    mixed = []
    for i in iters:
        pre, post = result.reports.get((fb, i, "equal")), result.reports.get((fb, i, "ctmdp"))
        if pre is None or post is None:
            continue
        d = compare(pre, post)
        mixed.append({
            "iteration": i,
            "aggregate_pct": d["aggregate"]["pct"],
            "increased_processors": d["increased_processors"],
        })
    return {
        "aggregate": aggregate,
        "improvements": improvements,
        "table1": table1,
        "figure3": figure3,
        "figure_budget": fb,
        "mixed_deltas": mixed,
    }


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def summary_csv(summary: dict) -> str:
    lines = ["budget,policy,runs,mean_lost,mean_loss_rate,std_loss_rate"]
    for r in summary["aggregate"]:
        lines.append(",".join(_fmt(r[k]) for k in ("budget", "policy", "runs", "mean_lost", "mean_loss_rate", "std_loss_rate")))
    lines.append("")
    lines.append("budget,baseline,mean_improvement_pct,wins,runs")
    for r in summary["improvements"]:
        lines.append(",".join(_fmt(r[k]) for k in ("budget", "baseline", "mean_improvement_pct", "wins", "runs")))
    return "\n".join(lines) + "\n"


def table1_csv(summary: dict, budgets) -> str:
    head = ["processor"] + [f"{k}_{b}" for b in budgets for k in ("pre", "post", "pre_rate", "post_rate")]
    lines = [",".join(head)]
    for row in summary["table1"]:
        lines.append(",".join(_fmt(row[h]) for h in head))
    return "\n".join(lines) + "\n"


def figure3_gnuplot(summary: dict) -> str:
    """One data block per processor: ``processor pre post timeout``; blocks split by two blank lines."""
    out = [f"# loss per processor before/after sizing, budget {summary['figure_budget']}",
           "# processor pre post timeout"]
    blocks = []
    for r in summary["figure3"]:
        blocks.append(" ".join(_fmt(r[k]) if r[k] is not None else "?" for k in ("processor", "pre", "post", "timeout")))
    return "\n".join(out) + "\n" + "\n\n\n".join(blocks) + "\n"


def figure3_csv(summary: dict) -> str:
    lines = ["processor,pre,post,timeout"]
    for r in summary["figure3"]:
        lines.append(",".join(_fmt(r[k]) for k in ("processor", "pre", "post", "timeout")))
    return "\n".join(lines) + "\n"
