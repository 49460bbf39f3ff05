"""``bufplan`` command line.

Exit codes: 0 success, 1 invalid input (architecture, flags, files),
2 numerical failure (LP infeasible/unbounded/iteration cap, model too large).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from importlib import resources
from pathlib import Path

from . import harness
from . import lp as lpmod
from .arch import load_architecture
from .errors import BufplanError, ConfigError, NumericalError, ValidationError
from .policy import BufferAllocation, equal_allocation, proportional_allocation
from .sim import CSV_HEADER, POLICIES, STATE_MAPS, SimConfig, calibrate_timeout, simulate
from .splitter import plan_architecture

SCHEMA_HELP = """\
architecture JSON:
  {"budget": <int total buffer slots>, "seed": <int, optional>,
   "buses": [{"id": str, "service_rate": float > 0,
              "processors": [{"id": str, "arrival_rate": float > 0,
                              "destinations": [{"to": <processor id>, "p": float}]}]}],
   "bridges": [{"id": str, "between": [<bus id>, <bus id>]}]}
  destination probabilities of a processor sum to 1; every destination must be
  reachable over bridges. Bundled architectures (figure1.json, netproc16.json)
  can be named directly.
"""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"bufplan: error [cli]: {message}\n")
        raise SystemExit(1)


# ---------------------------------------------------------------- io helpers

def bundled(name: str) -> Path | None:
    res = resources.files("bufplan") / "data" / Path(name).name
    return Path(str(res)) if res.is_file() else None


def resolve_arch(path: str) -> Path:
    p = Path(path)
    if p.is_file():
        return p
    alt = bundled(path)
    if alt is not None:
        return alt
    raise ConfigError(f"architecture file not found: {path}")


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def csv_text(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _budgets(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"budgets must be comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("at least one budget is needed")
    return vals


def _load(args):
    arch = load_architecture(resolve_arch(args.arch))
    if getattr(args, "seed", None) is not None:
        arch = arch.with_seed(args.seed)
    if getattr(args, "budget", None) is not None:
        arch = arch.with_budget(args.budget)
    return arch


def _out(args) -> Path:
    return Path(args.out) if args.out else Path.cwd()


def _weights(path):
    if not path:
        return None
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read loss weights {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("loss weights must be a JSON object {processor id: weight}")
    return {str(k): float(v) for k, v in doc.items()}


# ---------------------------------------------------------------- commands

def cmd_validate(args) -> int:
    arch = _load(args)
    print(f"ok: {len(arch.processors)} processors, {len(arch.buses)} buses, "
          f"{len(arch.bridges)} bridges, {arch.queue_count} queues, budget {arch.total_budget}")
    return 0


def cmd_split(args) -> int:
    arch = _load(args)
    plan = plan_architecture(arch)
    write_atomic(_out(args) / "split.json", dumps(plan.to_dict()))
    for s in plan.subsystems:
        print(f"{s.id}: bus {s.bus}, {len(s.queues)} queues, load {sum(s.arrival_rates):.4g}/{s.service_rate:.4g}")
    return 0


def _sizing(args, arch):
    plan = plan_architecture(arch)
    budget = arch.total_budget
    if budget < arch.queue_count:
        raise ConfigError(f"budget {budget} is below the queue count {arch.queue_count}")
    weights = harness.initial_weights(plan, budget)
    lw = _weights(getattr(args, "loss_weights", None))
    if args.dump_lp:
        _, lp, _ = harness.build_lp(plan, budget, weights, args.max_level, args.max_states, lw)
        write_atomic(_out(args) / args.dump_lp, lpmod.format_lp(lp))
    out = harness.ctmdp_sizing(plan, budget, weights, args.epsilon, args.max_level, args.max_states,
                               getattr(args, "sizing", "quantile"), loss_weights=lw)
    return plan, budget, weights, out


def cmd_solve(args) -> int:
    arch = _load(args)
    plan, budget, weights, out = _sizing(args, arch)
    doc = {
        "budget": budget,
        "budget_weights": [float(w) for w in weights],
        "subsystem_budgets": out.subsystem_budgets,
        "caps": out.caps,
        "objective": out.objective,
        "lp_iterations": out.lp_iterations,
        "budget_rows": out.budget_rows,
        "randomized_states": out.randomized,
        "residuals": out.residuals,
    }
    write_atomic(_out(args) / "solve.json", dumps(doc))
    print(f"objective {out.objective:.6g} (expected loss rate), {out.lp_iterations} pivots, "
          f"randomized states {sum(out.randomized.values())} <= budget rows {out.budget_rows}")
    return 0


def cmd_size(args) -> int:
    arch = _load(args)
    _, budget, _, out = _sizing(args, arch)
    write_atomic(_out(args) / "allocation.json", dumps(out.allocation.to_dict()))
    for q, c in out.allocation.capacities.items():
        print(f"{q}\t{c}")
    print(f"total\t{out.allocation.total} / {budget}")
    return 0


def cmd_simulate(args) -> int:
    arch = _load(args)
    plan = plan_architecture(arch)
    budget = arch.total_budget
    ids = [q.id for s in plan.subsystems for q in s.queues]
    policies = None
    kind = args.allocation
    if kind == "equal":
        alloc = equal_allocation(ids, budget)
    elif kind == "proportional":
        alloc = proportional_allocation(ids, [q.arrival_rate for s in plan.subsystems for q in s.queues], budget)
    elif kind == "ctmdp":
        _, _, _, out = _sizing(args, arch)
        alloc, policies = out.allocation, out.policies
    else:
        try:
            alloc = BufferAllocation.from_dict(json.loads(Path(kind).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read allocation {kind}: {exc}") from None
    if args.policy == "ctmdp" and policies is None:
        raise ConfigError("--policy ctmdp needs --allocation ctmdp")
    threshold = args.threshold
    if args.policy == "timeout" and threshold is None:
        threshold = calibrate_timeout(arch, alloc, args.horizon, arch.seed)
    cfg = SimConfig(alloc, args.policy, policies=policies, threshold=threshold,
                    horizon_time=args.horizon, seed=arch.seed, state_map=args.state_map)
    rep = simulate(arch, cfg)
    if args.format == "csv":
        write_atomic(_out(args) / "report.csv", csv_text(rep.csv_rows(budget, "sim"), CSV_HEADER))
    else:
        write_atomic(_out(args) / "report.json", dumps(rep.to_dict()))
    print(f"{rep.policy}: arrivals {rep.total_arrivals}, lost {rep.total_lost}, loss rate {rep.loss_rate:.6g}")
    return 0


def _write_summary(result: harness.ExperimentResult, out: Path, fmt: str | None) -> dict:
    summ = harness.summarize(result)
    files = {
        "summary.csv": harness.summary_csv(summ),
        "table1.csv": harness.table1_csv(summ, result.budgets),
        "figure3.csv": harness.figure3_csv(summ),
        "figure3.dat": harness.figure3_gnuplot(summ),
        "summary.json": dumps(summ),
        "reports.csv": csv_text(
            [row for (b, i, p), r in sorted(result.reports.items()) for row in r.csv_rows(b, f"iter{i}")],
            CSV_HEADER,
        ),
    }
    wanted = {"csv": ("summary.csv", "table1.csv", "figure3.csv", "reports.csv"),
              "gnuplot": ("figure3.dat",),
              "json": ("summary.json",)}
    names = list(files) if fmt is None else wanted[fmt]
    for name in names:
        write_atomic(out / name, files[name])
    return summ


def _print_headline(summ: dict) -> None:
    for r in summ["improvements"]:
        if r["mean_improvement_pct"] is None:
            continue
        print(f"budget {r['budget']}: ctmdp vs {r['baseline']}: {r['mean_improvement_pct']:+.1f}% "
              f"mean improvement, better in {r['wins']}/{r['runs']} seeds")


def cmd_experiment(args) -> int:
    arch = _load(args)
    spec = harness.ExperimentSpec(
        arch=arch,
        budgets=tuple(args.budgets),
        iterations=args.iterations,
        epsilon=args.epsilon,
        max_level=args.max_level,
        max_states=args.max_states,
        horizon_time=args.horizon,
        sizing=args.sizing,
        state_map=args.state_map,
        loss_weights=_weights(args.loss_weights),
        jobs=args.jobs,
    )
    result = harness.run_experiment(spec)
    out = _out(args)
    write_atomic(out / "result.json", dumps(result.to_dict()))
    summ = _write_summary(result, out, args.format)
    _print_headline(summ)
    for f in result.failures:
        print(f"failed: budget {f['budget']} iteration {f['iteration']} {f['policy']}: {f['error']}", file=sys.stderr)
    return 2 if result.failures else 0


def cmd_report(args) -> int:
    try:
        doc = json.loads(Path(args.result).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read result {args.result}: {exc}") from None
    try:
        result = harness.ExperimentResult.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed result document: {exc}") from None
    summ = _write_summary(result, _out(args), args.format)
    _print_headline(summ)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bufplan", description="Buffer sizing for bus architectures with bridges.",
                epilog=SCHEMA_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, arch=True):
        if arch:
            sp.add_argument("--arch", required=True, help="architecture JSON (path or bundled name)")
            sp.add_argument("--seed", type=int, help="override the architecture seed")
        sp.add_argument("--out", help="output directory (default: current directory)")

    def model(sp):
        sp.add_argument("--budget", type=int, help="override the architecture budget")
        sp.add_argument("--epsilon", type=float, default=0.01, help="tail mass for quantile sizing")
        sp.add_argument("--max-level", type=int, default=harness.DEFAULT_MAX_LEVEL,
                        help="largest per-queue level in the CTMDP models")
        sp.add_argument("--max-states", type=int, default=harness.LP_MAX_STATES,
                        help="state ceiling per subsystem model; levels shrink to fit")
        sp.add_argument("--sizing", choices=("quantile", "mean"), default="quantile")
        sp.add_argument("--loss-weights", help="JSON {processor id: weight} for the loss cost")
        sp.add_argument("--dump-lp", help="write the LP as a plain-text listing (relative to --out)")

    sp = sub.add_parser("validate", help="check an architecture file")
    common(sp)
    sp.add_argument("--budget", type=int, help="override the architecture budget")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("split", help="split at bridges into subsystems")
    common(sp)
    sp.set_defaults(func=cmd_split)

    for name, fn, text in (("solve", cmd_solve, "solve the stacked occupation-measure LP"),
                           ("size", cmd_size, "buffer capacities from the LP solution")):
        sp = sub.add_parser(name, help=text)
        common(sp)
        model(sp)
        sp.set_defaults(func=fn)

    sp = sub.add_parser("simulate", help="discrete-event simulation of one configuration")
    common(sp)
    model(sp)
    sp.add_argument("--policy", choices=POLICIES, default="fcfs")
    sp.add_argument("--allocation", default="equal",
                    help="equal | proportional | ctmdp | path to an allocation JSON")
    sp.add_argument("--threshold", type=float, help="timeout threshold (default: calibrated)")
    sp.add_argument("--horizon", type=float, default=20_000.0, help="simulated time")
    sp.add_argument("--state-map", choices=STATE_MAPS, default="scaled")
    sp.add_argument("--format", choices=("json", "csv"), default="json")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("experiment", help="budget sweep with baselines and re-weighting")
    common(sp)
    model(sp)
    sp.add_argument("--budgets", type=_budgets, default=list(harness.DEFAULT_BUDGETS),
                    help="comma-separated budgets (default 160,320,640)")
    sp.add_argument("--iterations", type=int, default=10)
    sp.add_argument("--horizon", type=float, default=20_000.0, help="simulated time per run")
    sp.add_argument("--state-map", choices=STATE_MAPS, default="scaled")
    sp.add_argument("--format", choices=("json", "csv", "gnuplot"),
                    help="only write this kind of summary next to result.json (default: all)")
    sp.add_argument("--jobs", type=int, default=1, help="budgets run in parallel processes")
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("report", help="rebuild summaries from an experiment's result.json")
    common(sp, arch=False)
    sp.add_argument("--result", required=True, help="result.json written by experiment")
    sp.add_argument("--format", choices=("json", "csv", "gnuplot"),
                    help="only write this kind of summary (default: all)")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"bufplan: numerical failure [{exc.module}]: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"bufplan: error [{exc.module}]: {exc}", file=sys.stderr)
        return 1
    except BufplanError as exc:
        print(f"bufplan: error [{exc.module}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"bufplan: error [io]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
