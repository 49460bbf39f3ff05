"""Occupation-measure LP over all subsystems at once.

For subsystem ``s`` with pairs ``(x, a)`` the variables ``z_s(x, a) >= 0``
satisfy

* balance, one row per state ``y``:  sum_{x,a} z(x,a) q(x,a,y) = 0
  (``q(x,a,x)`` is minus the total outflow),
* normalisation:  sum z = 1,
* budget:  sum z(x,a) occ(x) <= w_s * B,

and the objective is the total expected loss rate ``sum_s sum z c``.
Constraint matrices are kept sparse; ``solve_lp`` finds the independent
blocks and runs the dense simplex on each of them.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from . import simplex
from .ctmdp import IDLE, CtmdpModel
from .errors import ConfigError, InfeasibleError

MEASURE_TOL = 1e-8


@dataclass
class LinearProgram:
    c: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    var_names: list  # (subsystem, state index, action) per column
    col_ranges: list  # per subsystem [start, stop)
    eq_row_names: list = field(default_factory=list)
    ub_row_names: list = field(default_factory=list)
    start: np.ndarray | None = None  # columns of a feasible deterministic policy, warm-start hint

    @property
    def shape(self):
        return (self.A_eq.shape[0] + self.A_ub.shape[0], len(self.c))


@dataclass
class OccupationMeasure:
    z: list  # one array per subsystem, indexed like the model's pairs
    objective_value: float
    iterations: int
    budget_slack: list
    subsystem_ids: list

    def __getitem__(self, i):
        return self.z[i]


def default_budget_weights(models) -> np.ndarray:
    """Weights proportional to each subsystem's total arrival rate."""
    load = np.array([m.arrival_rates.sum() for m in models], dtype=float)
    if load.sum() <= 0:
        return np.full(len(models), 1.0 / len(models))
    return load / load.sum()


def balance_matrix(model: CtmdpModel) -> sp.csr_matrix:
    S, K = model.n_states, model.n_pairs
    rows = np.concatenate([model.trans_to, model.sa_state])
    cols = np.concatenate([model.trans_sa, np.arange(K)])
    vals = np.concatenate([model.trans_rate, -model.out_rates()])
    return sp.csr_matrix((vals, (rows, cols)), shape=(S, K))


def greedy_pairs(model: CtmdpModel) -> np.ndarray:
    """Pair index of the longest-queue action in every state."""
    occ = model.states
    best = np.where(occ.max(axis=1) > 0, occ.argmax(axis=1) + 1, IDLE)
    return np.flatnonzero(model.sa_action == best[model.sa_state])


def formulate(models, total_budget, budget_weights=None) -> LinearProgram:
    if not models:
        raise ConfigError("formulate needs at least one model")
    w = default_budget_weights(models) if budget_weights is None else np.asarray(budget_weights, float)
    if len(w) != len(models) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ConfigError("budget weights must be non-negative, one per model, summing to 1")

    eq_blocks, ub_blocks, b_eq, b_ub = [], [], [], []
    c, names, ranges, eq_names, ub_names, starts = [], [], [], [], [], []
    start = 0
    for s, m in enumerate(models):
        K = m.n_pairs
        bal = balance_matrix(m)
        norm = sp.csr_matrix(np.ones((1, K)))
        eq_blocks.append(sp.vstack([bal, norm]))
        b_eq.append(np.concatenate([np.zeros(m.n_states), [1.0]]))
        eq_names += [(m.subsystem, "balance", y) for y in range(m.n_states)]
        eq_names.append((m.subsystem, "normalize", None))
        ub_blocks.append(sp.csr_matrix(m.occupancy[m.sa_state].reshape(1, K)))
        b_ub.append(w[s] * total_budget)
        ub_names.append((m.subsystem, "budget", None))
        c.append(m.cost)
        starts.append(start + greedy_pairs(m))
        names += [(m.subsystem, int(x), int(a)) for x, a in zip(m.sa_state, m.sa_action)]
        ranges.append((start, start + K))
        start += K
    return LinearProgram(
        c=np.concatenate(c),
        A_eq=sp.block_diag(eq_blocks, format="csr"),
        b_eq=np.concatenate(b_eq),
        A_ub=sp.block_diag(ub_blocks, format="csr"),
        b_ub=np.asarray(b_ub, dtype=float),
        var_names=names,
        col_ranges=ranges,
        eq_row_names=eq_names,
        ub_row_names=ub_names,
        start=np.concatenate(starts),
    )


def _blocks(lp: LinearProgram):
    """Partition columns and rows into independent groups."""
    n = len(lp.c)
    A = sp.vstack([lp.A_eq, lp.A_ub]).tocoo()
    m = A.shape[0]
    # bipartite graph: nodes 0..n-1 are columns, n..n+m-1 rows
    g = sp.coo_matrix((np.ones(A.nnz), (A.col, n + A.row)), shape=(n + m, n + m))
    k, labels = connected_components(g, directed=False)
    col_lab, row_lab = labels[:n], labels[n:]
    for lab in np.unique(col_lab):
        yield np.flatnonzero(col_lab == lab), np.flatnonzero(row_lab == lab)
    # rows touching no column: must be satisfiable by 0
    for lab in np.setdiff1d(np.unique(row_lab), col_lab):
        yield np.zeros(0, dtype=int), np.flatnonzero(row_lab == lab)


def _block_key(c, A_eq, b_eq, A_ub) -> bytes:
    h = hashlib.sha256()
    for arr in (c, b_eq, A_eq.data, A_eq.indices, A_eq.indptr, A_ub.data, A_ub.indices, A_ub.indptr):
        h.update(np.ascontiguousarray(arr).tobytes())
        h.update(b"|")
    return h.digest()


def _cached(entries, A_ub, b_ub):
    """A cached block solution still optimal for ``b_ub``.

    Exact rhs matches are reused as is. A solution whose <= rows were all
    slack is also optimal for the problem without those rows, so it stays
    optimal for any rhs it still satisfies.
    """
    for rhs, x, all_slack in entries:
        if np.array_equal(rhs, b_ub):
            return x
        if all_slack and np.all(A_ub @ x <= b_ub - simplex.FEAS_TOL):
            return x
    return None


def solve_lp(lp: LinearProgram, rule: str = "hybrid", cache: dict | None = None) -> tuple[np.ndarray, float, int]:
    """Solve ``lp`` block by block; returns (x, objective, total pivots).

    ``cache`` (any dict, owned by the caller) keeps block solutions between
    calls that differ only in the <= right-hand sides.
    """
    n = len(lp.c)
    m_eq = lp.A_eq.shape[0]
    A_eq = lp.A_eq.tocsr()
    A_ub = lp.A_ub.tocsr()
    x = np.zeros(n)
    iters = 0
    for cols, rows in _blocks(lp):
        eq_rows = rows[rows < m_eq]
        ub_rows = rows[rows >= m_eq] - m_eq
        if not len(cols):
            if np.any(np.abs(lp.b_eq[eq_rows]) > simplex.FEAS_TOL) or np.any(lp.b_ub[ub_rows] < -simplex.FEAS_TOL):
                raise InfeasibleError("empty constraint row with a nonzero right-hand side")
            continue
        c_b, Ae, be = lp.c[cols], A_eq[eq_rows][:, cols], lp.b_eq[eq_rows]
        Au, bu = A_ub[ub_rows][:, cols], lp.b_ub[ub_rows]
        key = None
        if cache is not None:
            key = (rule, _block_key(c_b, Ae, be, Au))
            hit = _cached(cache.get(key, []), Au, bu)
            if hit is not None:
                x[cols] = hit
                continue
        hint = None
        if lp.start is not None:
            hint = np.flatnonzero(np.isin(cols, lp.start))
        res = simplex.solve(c_b, Ae, be, Au, bu, rule=rule, start=hint)
        x[cols] = res.x
        iters += res.iterations
        if key is not None:
            slack_ok = bool(np.all(res.slack > simplex.FEAS_TOL)) if len(bu) else True
            cache.setdefault(key, []).append((bu.copy(), res.x.copy(), slack_ok))
    return x, float(lp.c @ x), iters


def solve_measure(lp: LinearProgram, rule: str = "hybrid", cache: dict | None = None) -> OccupationMeasure:
    x, obj, iters = solve_lp(lp, rule, cache)
    zs = [x[a:b].copy() for a, b in lp.col_ranges]
    slack = list(lp.b_ub - lp.A_ub @ x)
    subs = [lp.var_names[a][0] for a, _ in lp.col_ranges]
    return OccupationMeasure(zs, obj, iters, slack, subs)


def verify_measure(model: CtmdpModel, z, budget_rhs: float | None = None) -> dict:
    z = np.asarray(z, dtype=float)
    if z.shape != (model.n_pairs,):
        raise ValueError(f"measure has shape {z.shape}, model has {model.n_pairs} pairs")
    bal = balance_matrix(model) @ z
    occ = float(model.occupancy[model.sa_state] @ z)
    report = {
        "balance_residual": float(np.abs(bal).max()),
        "normalization_residual": float(abs(z.sum() - 1.0)),
        "min_value": float(z.min()),
        "budget_slack": None if budget_rhs is None else float(budget_rhs - occ),
        "mean_occupancy": occ,
    }
    report["ok"] = (
        report["balance_residual"] <= MEASURE_TOL
        and report["normalization_residual"] <= MEASURE_TOL
        and report["min_value"] >= -1e-12
        and (budget_rhs is None or report["budget_slack"] >= -MEASURE_TOL)
    )
    return report


def randomized_states(model: CtmdpModel, z, tol: float = 1e-9) -> int:
    """Number of states where two or more actions carry mass above ``tol``."""
    z = np.asarray(z)
    counts = np.bincount(model.sa_state[z > tol], minlength=model.n_states)
    return int((counts >= 2).sum())


def format_lp(lp: LinearProgram) -> str:
    """Plain-text listing: one VAR line per column, one row line per constraint.

    ``VAR j subsystem state action cost`` then ``EQ|LE i rhs name : j:coef ...``.
    """
    lines = [f"# bufplan LP  rows={lp.shape[0]} cols={lp.shape[1]}  sense=min"]
    for j, (sub, x, a) in enumerate(lp.var_names):
        lines.append(f"VAR {j} {sub} {x} {a} {float(lp.c[j])!r}")
    for tag, A, b, names in (("EQ", lp.A_eq, lp.b_eq, lp.eq_row_names), ("LE", lp.A_ub, lp.b_ub, lp.ub_row_names)):
        A = A.tocsr()
        for i in range(A.shape[0]):
            lo, hi = A.indptr[i], A.indptr[i + 1]
            terms = " ".join(f"{j}:{float(v)!r}" for j, v in zip(A.indices[lo:hi], A.data[lo:hi]))
            name = "/".join(str(p) for p in names[i] if p is not None) if names else ""
            lines.append(f"{tag} {i} {float(b[i])!r} {name} : {terms}")
    return "\n".join(lines) + "\n"


def dump_lp(lp: LinearProgram, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_lp(lp))
