"""Dense two-phase primal simplex (revised form, explicit basis inverse).

Solves ``min c x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  x >= 0``.

The basis inverse is a dense ``m x m`` array updated by rank-one pivots and
rebuilt from the original columns every ``REINVERT_EVERY`` pivots, whenever
a periodic check shows the updates have drifted, and before optimality is
declared. Columns are held sparse because CTMDP balance
matrices are.

Pivoting: Dantzig pricing with a Harris ratio test. After ``DEGENERATE_RUN``
consecutive degenerate pivots the near-zero basic variables are lifted by
random amounts of order ``PERTURB`` (the rhs moves inside the column space,
so dependent rows stay consistent). Once the perturbed problem is optimal
the true rhs is restored and dual simplex pivots remove any infeasibility
this leaves. Should degeneracy persist under perturbation, the solver falls
back to Bland's smallest-index rule. ``rule="bland"`` uses Bland's rule
throughout and never perturbs.

Bland's leaving rule skips ratio ties whose pivot is below
``BLAND_PIVOT_RATIO`` times the largest tied pivot; taking near-zero pivots
on large balance systems drives the basis towards singularity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .errors import InfeasibleError, IterationLimitError, NumericalError, UnboundedError

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-9
DEGENERATE_RUN = 30
REINVERT_EVERY = 200
BLAND_PIVOT_RATIO = 1e-3
DRIFT_CHECK_EVERY = 10
DRIFT_TOL = 1e-9
PERTURB = 1e-7


@dataclass
class SimplexResult:
    x: np.ndarray
    objective: float
    iterations: int
    basis: np.ndarray  # column indices into [x, slacks]
    slack: np.ndarray  # value of each <= row's slack
    redundant_rows: list


def _as_sparse(A, n):
    if A is None:
        return sp.csc_matrix((0, n))
    if sp.issparse(A):
        return sp.csc_matrix(A, dtype=float)
    return sp.csc_matrix(np.asarray(A, dtype=float).reshape(-1, n))


class _Revised:
    def __init__(self, A, b, basis, rule, max_iter):
        self.A = A.tocsc()
        self.AT = self.A.T.tocsr()
        self.b = b
        self.basis = basis
        self.rule = rule
        self.max_iter = max_iter
        self.iterations = 0
        self.rng = np.random.default_rng(0)  # fixed: solves stay reproducible

    def set_rows(self, A, b, basis):
        self.A = A.tocsc()
        self.AT = self.A.T.tocsr()
        self.b = b
        self.basis = basis

    def reinvert(self):
        B = self.A[:, self.basis].toarray()
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            raise NumericalError("basis matrix became singular") from None
        self.xB = self.Binv @ self.b

    def drifted(self) -> bool:
        """Does ``Binv @ B`` still reproduce the identity on a ones vector?"""
        B = self.A[:, self.basis]
        return float(np.abs(self.Binv @ (B @ np.ones(len(self.basis))) - 1.0).max()) > DRIFT_TOL

    def column(self, e):
        lo, hi = self.A.indptr[e], self.A.indptr[e + 1]
        return self.Binv[:, self.A.indices[lo:hi]] @ self.A.data[lo:hi]

    def pivot(self, r, e, col):
        piv = col[r]
        prow = self.Binv[r] / piv
        self.Binv -= np.outer(col, prow)
        self.Binv[r] = prow
        xr = self.xB[r] / piv
        self.xB -= col * xr
        self.xB[r] = xr
        self.basis[r] = e

    def reduced_costs(self, cost, n_cols):
        y = cost[self.basis] @ self.Binv
        d = cost[:n_cols] - self.AT[:n_cols] @ y
        d[self.basis[self.basis < n_cols]] = 0.0
        return d

    def run(self, cost, n_cols):
        """Minimise ``cost`` using only the first ``n_cols`` columns as entering candidates."""
        b_orig = self.b
        self.reinvert()
        degenerate = 0
        since = 0
        perturbed = False
        while True:
            bland = self.rule == "bland" or (degenerate >= DEGENERATE_RUN and perturbed)
            if degenerate >= DEGENERATE_RUN and not perturbed and self.rule != "bland":
                self.perturb()
                perturbed = True
                degenerate = 0
                continue
            d = self.reduced_costs(cost, n_cols)
            if bland:
                cand = np.flatnonzero(d < -PIVOT_TOL)
                e = int(cand[0]) if len(cand) else None
            else:
                e = int(np.argmin(d))
                if d[e] >= -PIVOT_TOL:
                    e = None
            if e is None:
                if since:
                    self.reinvert()
                    since = 0
                    continue
                if perturbed:
                    # back to the true rhs; repair any small infeasibility
                    self.b = b_orig
                    self.reinvert()
                    perturbed = False
                    degenerate = 0
                    self.dual_cleanup(cost, n_cols)
                    continue
                return
            if self.iterations >= self.max_iter:
                raise IterationLimitError(f"simplex hit the iteration cap of {self.max_iter}")
            col = self.column(e)
            ok = np.flatnonzero(col > PIVOT_TOL * max(1.0, np.abs(col).max()))
            if not len(ok):
                raise UnboundedError("LP is unbounded")
            xb = np.maximum(self.xB[ok], 0.0)
            ratios = xb / col[ok]
            if bland:
                step = ratios.min()
                ties = ok[ratios <= step + 1e-12 * max(1.0, step)]
                # smallest index among the ties whose pivot is not tiny
                ties = ties[col[ties] >= BLAND_PIVOT_RATIO * col[ties].max()]
                r = ties[np.argmin(self.basis[ties])]
            else:
                # Harris: among rows within the feasibility tolerance of the
                # minimum ratio take the largest pivot element
                bound = ((xb + FEAS_TOL) / col[ok]).min()
                near = ratios <= bound
                r = ok[near][np.argmax(col[ok][near])]
                step = float(max(self.xB[r], 0.0) / col[r])
            self.pivot(r, e, col)
            self.iterations += 1
            since += 1
            degenerate = degenerate + 1 if step <= FEAS_TOL else 0
            if since >= REINVERT_EVERY or (since % DRIFT_CHECK_EVERY == 0 and self.drifted()):
                self.reinvert()
                since = 0

    def perturb(self):
        """Lift near-zero basic variables by small random amounts.

        The rhs moves by ``B @ delta``, which lies in the column space of the
        constraint matrix, so dependent equality rows stay consistent.
        """
        scale = max(1.0, float(np.abs(self.b).max(initial=0.0)))
        low = self.xB < PERTURB * scale
        delta = np.zeros(len(self.xB))
        delta[low] = PERTURB * scale * (1.0 + self.rng.random(int(low.sum())))
        self.b = self.b + self.A[:, self.basis] @ delta
        self.reinvert()

    def dual_cleanup(self, cost, n_cols):
        """Dual simplex pivots until the basic solution is feasible again."""
        scale = max(1.0, float(np.abs(self.b).max(initial=0.0)))
        since = 0
        while True:
            r = int(np.argmin(self.xB))
            if self.xB[r] >= -FEAS_TOL * scale:
                return
            if self.iterations >= self.max_iter:
                raise IterationLimitError(f"simplex hit the iteration cap of {self.max_iter}")
            alpha = self.AT[:n_cols] @ self.Binv[r]
            d = np.maximum(self.reduced_costs(cost, n_cols), 0.0)
            cand = np.flatnonzero(alpha < -PIVOT_TOL * max(1.0, np.abs(alpha).max()))
            if not len(cand):
                raise NumericalError(f"cannot restore feasibility after perturbation (row {r})")
            ratios = d[cand] / -alpha[cand]
            near = cand[ratios <= ratios.min() + FEAS_TOL]
            e = int(near[np.argmax(-alpha[near])])
            self.pivot(r, e, self.column(e))
            self.iterations += 1
            since += 1
            if since % DRIFT_CHECK_EVERY == 0 and self.drifted():
                self.reinvert()


def _crash(A, b, basis, start):
    """Basis from the slack columns already in ``basis`` plus the ``start`` columns.

    Rows left uncovered get artificials (``-1`` entries, kept at their own
    row position). Returns None when the columns are dependent or the basic
    solution is infeasible, in which case the caller keeps the slack basis.
    """
    free = np.flatnonzero(basis < 0)
    if len(start) > len(free):
        return None
    H = A[free][:, start].toarray()
    P, _, U = la.lu(H)
    diag = np.abs(np.diag(U))
    if len(diag) and diag.min() <= PIVOT_TOL * max(1.0, diag.max()):
        return None
    pivots = free[P.argmax(axis=0)[: len(start)]]
    out = basis.copy()
    out[pivots] = start
    cols = out[out >= 0]
    rows = np.flatnonzero(out >= 0)
    # artificials sit at zero, so feasibility only depends on the covered rows
    try:
        xb = np.linalg.solve(A[rows][:, cols].toarray(), b[rows])
    except np.linalg.LinAlgError:
        return None
    if xb.min(initial=0.0) < -FEAS_TOL * max(1.0, np.abs(b).max()):
        return None
    uncovered = np.flatnonzero(out < 0)
    if len(uncovered):
        # artificial values must come out non-negative as well
        x = np.zeros(A.shape[1])
        x[cols] = xb
        if (b[uncovered] - A[uncovered] @ x).min() < -FEAS_TOL * max(1.0, np.abs(b).max()):
            return None
    return out


def solve(c, A_eq=None, b_eq=None, A_ub=None, b_ub=None, rule="hybrid", max_iter=None,
          start=None) -> SimplexResult:
    """``start``: optional structural columns to crash into the initial basis."""
    c = np.asarray(c, dtype=float).ravel()
    n = len(c)
    A_eq = _as_sparse(A_eq, n)
    A_ub = _as_sparse(A_ub, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    m_eq, m_ub = A_eq.shape[0], A_ub.shape[0]
    m = m_eq + m_ub
    if len(b_eq) != m_eq or len(b_ub) != m_ub:
        raise ValueError("constraint matrix and rhs sizes differ")
    if not (np.all(np.isfinite(b_eq)) and np.all(np.isfinite(b_ub))):
        raise ValueError("rhs must be finite")

    n_std = n + m_ub
    b = np.concatenate([b_eq, b_ub])
    sign = np.where(b < 0, -1.0, 1.0)
    b = b * sign
    A = sp.diags(sign) @ sp.bmat(
        [[A_eq, sp.csc_matrix((m_eq, m_ub))], [A_ub, sp.identity(m_ub)]], format="csc"
    ) if m else sp.csc_matrix((0, n_std))
    A = sp.csc_matrix(A)

    basis = np.full(m, -1, dtype=np.int64)
    for i in range(m_ub):
        if sign[m_eq + i] > 0:
            basis[m_eq + i] = n + i
    if start is not None and len(start):
        crashed = _crash(A, b, basis, np.asarray(start, dtype=np.int64))
        if crashed is not None:
            basis = crashed
    art_rows = np.flatnonzero(basis < 0)
    n_art = len(art_rows)
    N = n_std + n_art
    if max_iter is None:
        max_iter = 50 * (m + N)
    art = sp.csc_matrix((np.ones(n_art), (art_rows, np.arange(n_art))), shape=(m, n_art))
    basis[art_rows] = n_std + np.arange(n_art)

    solver = _Revised(sp.hstack([A, art], format="csc"), b, basis, rule, max_iter)
    redundant = []
    if n_art:
        # phase 1: minimise the sum of artificials
        cost1 = np.zeros(N)
        cost1[n_std:] = 1.0
        solver.run(cost1, N)
        infeas = float(cost1[solver.basis] @ solver.xB)
        if infeas > FEAS_TOL * max(1.0, np.abs(b).max()):
            raise InfeasibleError(f"LP is infeasible (phase-1 residual {infeas:.3g})")
        # drive zero-level artificials out of the basis; a row with no
        # structural entry left is linearly dependent and gets dropped
        keep = np.ones(m, dtype=bool)
        for r in range(m):
            if solver.basis[r] < n_std:
                continue
            row = solver.AT[:n_std] @ solver.Binv[r]
            cand = np.flatnonzero(np.abs(row) > PIVOT_TOL * max(1.0, np.abs(row).max()))
            if len(cand):
                e = int(cand[np.argmax(np.abs(row[cand]))])
                solver.pivot(r, e, solver.column(e))
            else:
                keep[r] = False
        redundant = [int(r) for r in np.flatnonzero(~keep)]
        solver.set_rows(A[keep], b[keep], solver.basis[keep])
        m = int(keep.sum())

    c_std = np.concatenate([c, np.zeros(m_ub)])
    solver.run(c_std, n_std)
    basis = solver.basis

    x_std = np.zeros(n_std)
    x_std[basis] = solver.xB
    if x_std.min(initial=0.0) < -10 * FEAS_TOL:
        raise NumericalError(f"final basis lost feasibility ({x_std.min():.3g})")
    x_std[x_std < 0] = 0.0
    x = x_std[:n]
    return SimplexResult(
        x=x,
        objective=float(c @ x),
        iterations=solver.iterations,
        basis=basis.copy(),
        slack=x_std[n:].copy(),
        redundant_rows=redundant,
    )
