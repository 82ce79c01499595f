"""Parametric dual simplex for l1-minimization column programs.

Solves, for one unit vector e and a symmetric m x m matrix R,

    min ||beta||_1   subject to   ||R beta - e||_inf <= lam

simultaneously for a whole descending grid of lam values. In LP form
the variables are x = (beta+, beta-, r) with A = [R, -R, -I], A x = e,
beta+- >= 0 and r in [-lam, lam]. For lam >= 1 the all-r basis is
optimal with beta = 0; as lam decreases, basic variables hit their
(moving) bounds at computable breakpoints and each breakpoint costs one
dual simplex pivot. Between breakpoints the basis stays optimal, so
solutions for every grid value in the gap are read off the same basis.
Warm-starting across the grid is what makes dense lambda grids cheap:
one pass down the path prices every grid point.

Every extracted solution is certified: primal feasibility within 1e-7,
dual feasibility of y = c_B B^{-1} (||R y||_inf <= 1 + 1e-7), and
duality gap within 1e-6 (1 + ||beta||_1). A failed certificate triggers
refactorization and then a one-shot scipy fallback for that grid point,
so the post-conditions hold regardless of which engine produced the
numbers.

The pivot loop is deliberately low-level: state lives in preallocated
buffers, the basis inverse is updated in place through BLAS dger, and
reduced costs are maintained incrementally (with periodic
refactorization to cap drift). This engine is the runtime floor for
the multiple-testing pipeline, which solves one program per sample
column per tuning level.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg.blas import dger

from .errors import ConvergenceError

_EPS_PIVOT = 1e-11
_EPS_EVENT = 1e-12
_FEAS_TOL = 1e-7
_GAP_REL = 1e-6
_REFACTOR_EVERY = 120
_NEG_INF = -np.inf


class _Infeasible(Exception):
    """Raised internally when the program becomes infeasible as lam shrinks."""


class _PathState:
    # variable layout: [0, m) beta+, [m, 2m) beta-, [2m, 3m) r

    def __init__(self, R: np.ndarray, col: int):
        m = R.shape[0]
        self.R = R
        self.m = m
        self.col = col
        # start from the all-r basis, optimal for lam >= 1
        self.basis = np.arange(2 * m, 3 * m)
        self.lo_mask = np.zeros(3 * m, dtype=bool)
        self.lo_mask[: 2 * m] = True
        self.up_mask = np.zeros(3 * m, dtype=bool)
        self.is_beta = np.zeros(m, dtype=bool)
        self.not_beta = np.ones(m, dtype=bool)
        self.binv = np.asfortranarray(-np.eye(m))
        self.since_refactor = 0
        # work buffers, reused across pivots
        self.d = np.empty(3 * m)
        self.w = np.empty(m)
        self.v = np.empty(m)
        self._ar = np.empty(m)
        self._alpha = np.empty(3 * m)
        self._b1 = np.empty(3 * m, dtype=bool)
        self._b2 = np.empty(3 * m, dtype=bool)
        self._cb = np.empty(m)
        self._cu = np.empty(m)
        self._cl = np.empty(m)
        self._nu = np.empty(m)
        self._mt = np.empty(m)
        self._e1 = np.empty(m, dtype=bool)
        self.refresh()

    def refresh(self):
        """Recompute duals, reduced costs, and the affine solution
        parts from scratch (x_B(lam) = u + lam v)."""
        m = self.m
        c_b = (self.basis < 2 * m).astype(np.float64)
        y = self.binv.T @ c_b
        ry = self.R @ y
        d = self.d
        d[:m] = 1.0 - ry
        d[m:2 * m] = 1.0 + ry
        d[2 * m:] = y
        d[self.basis] = 0.0
        np.less(self.basis, 2 * m, out=self.is_beta)
        np.logical_not(self.is_beta, out=self.not_beta)
        w = self.w
        w.fill(0.0)
        w[self.up_mask[2 * m:]] = 1.0
        w[self.lo_mask[2 * m:]] = -1.0
        # u is a live view into the basis inverse: in-place pivots keep
        # it current for free
        self.u = self.binv[:, self.col]
        np.dot(self.binv, w, out=self.v)

    def refactor(self):
        m = self.m
        bmat = np.empty((m, m))
        for t, j in enumerate(self.basis):
            j = int(j)
            if j < m:
                bmat[:, t] = self.R[:, j]
            elif j < 2 * m:
                bmat[:, t] = -self.R[:, j - m]
            else:
                bmat[:, t] = 0.0
                bmat[j - 2 * m, t] = -1.0
        try:
            self.binv = np.asfortranarray(np.linalg.inv(bmat))
        except np.linalg.LinAlgError as exc:  # pragma: no cover
            raise ConvergenceError("basis matrix is singular") from exc
        self.since_refactor = 0
        self.refresh()

    def next_event(self):
        """Largest lam below the current interval at which a basic
        variable hits a bound. Returns (lam_event, row, side) with side
        0 for a lower-bound hit, 1 for upper; row -1 when the basis
        stays optimal down to lam = 0."""
        u, v = self.u, self.v
        mt, e1 = self._mt, self._e1

        # basic beta rows leave at zero where x(lam) = u + lam v falls
        cb = self._cb
        cb.fill(_NEG_INF)
        np.greater(v, _EPS_PIVOT, out=e1)
        e1 &= self.is_beta
        nu = self._nu
        np.negative(u, out=nu)
        np.divide(nu, v, out=cb, where=e1)
        # basic r rows hit the moving bounds -lam, +lam
        cu = self._cu
        cu.fill(_NEG_INF)
        np.subtract(1.0, v, out=mt)
        np.greater(mt, _EPS_PIVOT, out=e1)
        e1 &= self.not_beta
        np.divide(u, mt, out=cu, where=e1)
        cl = self._cl
        cl.fill(_NEG_INF)
        np.add(1.0, v, out=mt)
        np.greater(mt, _EPS_PIVOT, out=e1)
        e1 &= self.not_beta
        np.divide(nu, mt, out=cl, where=e1)

        rb = int(cb.argmax())
        ru = int(cu.argmax())
        rl = int(cl.argmax())
        lam_ev, row, side = cb[rb], rb, 0
        if cu[ru] > lam_ev:
            lam_ev, row, side = cu[ru], ru, 1
        if cl[rl] > lam_ev:
            lam_ev, row, side = cl[rl], rl, 0
        if lam_ev == _NEG_INF:
            return _NEG_INF, -1, 0
        return float(lam_ev), row, side

    def pivot(self, row: int, side: int, bland: bool) -> bool:
        """One dual simplex step: the basic variable in `row` leaves at
        the bound indicated by `side` (0 lower, 1 upper). Returns False
        when the pivot element is too small to trust."""
        m = self.m
        binv = self.binv
        rowvec = binv[row]
        alpha = self._alpha
        np.dot(self.R, rowvec, out=self._ar)
        alpha[:m] = self._ar
        np.negative(self._ar, out=alpha[m:2 * m])
        np.negative(rowvec, out=alpha[2 * m:])

        b1, b2 = self._b1, self._b2
        if side == 1:
            np.greater(alpha, _EPS_PIVOT, out=b1)
            np.less(alpha, -_EPS_PIVOT, out=b2)
        else:
            np.less(alpha, -_EPS_PIVOT, out=b1)
            np.greater(alpha, _EPS_PIVOT, out=b2)
        b1 &= self.lo_mask
        b2 &= self.up_mask
        b1 |= b2
        idx = b1.nonzero()[0]
        if idx.size == 0:
            raise _Infeasible
        asel = alpha[idx]
        ratios = self.d[idx]
        ratios = ratios / asel
        if side == 0:
            np.negative(ratios, out=ratios)
        np.maximum(ratios, 0.0, out=ratios)  # clip dual fp noise
        near = idx[ratios <= ratios.min() + 1e-9]
        if bland:
            q = int(near[0])
        else:
            q = int(near[np.abs(alpha[near]).argmax()])

        if q < m:
            a_q = binv @ self.R[:, q]
        elif q < 2 * m:
            a_q = -(binv @ self.R[:, q - m])
        else:
            a_q = -binv[:, q - 2 * m]
        piv = a_q[row]
        if abs(piv) < _EPS_PIVOT:
            return False

        # dual step: every reduced cost shifts by -(d_q/piv) alpha_j,
        # which lands the entering column at zero and the leaver on the
        # feasible side of its bound
        dq = self.d[q]
        if dq != 0.0:
            np.multiply(alpha, dq / piv, out=alpha)
            self.d -= alpha
        self.d[q] = 0.0

        leaving = int(self.basis[row])
        if side == 0:
            self.lo_mask[leaving] = True
        else:
            self.up_mask[leaving] = True
        if leaving >= 2 * m:
            self.w[leaving - 2 * m] = -1.0 if side == 0 else 1.0
        if q >= 2 * m:
            self.w[q - 2 * m] = 0.0
        self.basis[row] = q
        self.lo_mask[q] = False
        self.up_mask[q] = False
        qb = q < 2 * m
        self.is_beta[row] = qb
        self.not_beta[row] = not qb

        bt = rowvec / piv
        a_q = a_q.copy() if a_q.base is not None else a_q
        a_q[row] = 0.0
        dger(-1.0, a_q, bt, a=binv, overwrite_a=1)
        binv[row] = bt
        np.dot(binv, self.w, out=self.v)
        self.since_refactor += 1
        if self.since_refactor >= _REFACTOR_EVERY:
            self.refactor()
        return True

    def extract(self, lam: float) -> np.ndarray:
        m = self.m
        xb = self.u + lam * self.v
        beta = np.zeros(m)
        is_plus = self.basis < m
        is_minus = (self.basis >= m) & (self.basis < 2 * m)
        beta[self.basis[is_plus]] = xb[is_plus]
        np.subtract.at(beta, self.basis[is_minus] - m, xb[is_minus])
        return beta

    def certify(self, lam: float, beta: np.ndarray, e: np.ndarray) -> bool:
        res = float(np.max(np.abs(self.R @ beta - e)))
        if res > lam + _FEAS_TOL:
            return False
        c_b = (self.basis < 2 * self.m).astype(np.float64)
        y = self.binv.T @ c_b
        if float(np.max(np.abs(self.R @ y))) > 1.0 + _FEAS_TOL:
            return False
        obj = float(np.sum(np.abs(beta)))
        dual = float(e @ y) - lam * float(np.sum(np.abs(y)))
        return obj - dual <= _GAP_REL * (1.0 + obj)


def _scipy_solve(R: np.ndarray, col: int, lam: float) -> np.ndarray | None:
    # one-shot fallback used only when a certificate fails
    from scipy.optimize import linprog

    m = R.shape[0]
    e = np.zeros(m)
    e[col] = 1.0
    c = np.ones(2 * m)
    a_ub = np.block([[R, -R], [-R, R]])
    b_ub = np.concatenate([lam + e, lam - e])
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=(0, None),
                  method="highs-ds", options={"presolve": False})
    if res.status == 2:
        return None
    if res.status != 0:
        raise ConvergenceError(
            f"fallback solver failed on column {col + 1} at lam={lam:.6g}: "
            f"{res.message}"
        )
    return res.x[:m] - res.x[m:]


def solve_column_path(
    R: np.ndarray,
    col: int,
    lams: np.ndarray,
    max_iter: int | None = None,
) -> list[np.ndarray | None]:
    """beta for each lam in the strictly descending grid `lams`.

    Entries are None where the program is infeasible (which, once hit,
    persists for all smaller lam). Raises ConvergenceError if the pivot
    budget (default 10 m^2) is exhausted.
    """
    R = np.ascontiguousarray(R, dtype=np.float64)
    m = R.shape[0]
    if R.shape != (m, m):
        raise ValueError("R must be square")
    if not (0 <= col < m):
        raise ValueError("column index out of range")
    lams = np.asarray(lams, dtype=np.float64)
    if np.any(lams < 0):
        raise ValueError("lam values must be nonnegative")
    if lams.size > 1 and np.any(np.diff(lams) >= 0):
        raise ValueError("lam grid must be strictly descending")
    budget = 10 * m * m if max_iter is None else max_iter

    e = np.zeros(m)
    e[col] = 1.0
    state = _PathState(R, col)
    out: list[np.ndarray | None] = []
    pivots = 0
    stall = 0
    last_event = np.inf

    gi = 0
    while gi < lams.size:
        lam_g = float(lams[gi])
        try:
            while True:
                lam_ev, row, side = state.next_event()
                if row < 0 or lam_ev <= lam_g + _EPS_EVENT:
                    break
                if lam_ev > last_event + 1e-7:
                    # events must shrink along the path; drift this
                    # large means the factorization went stale
                    state.refactor()
                    lam_ev, row, side = state.next_event()
                    if row < 0 or lam_ev <= lam_g + _EPS_EVENT:
                        break
                if pivots >= budget:
                    raise ConvergenceError(
                        f"pivot budget {budget} exhausted on column {col + 1}"
                    )
                if abs(lam_ev - last_event) <= 1e-13:
                    stall += 1
                else:
                    stall = 0
                last_event = min(lam_ev, last_event)
                ok = state.pivot(row, side, bland=stall > 3 * m)
                if not ok:
                    state.refactor()
                    ok = state.pivot(row, side, bland=True)
                    if not ok:
                        raise ConvergenceError(
                            f"no acceptable pivot on column {col + 1}"
                        )
                pivots += 1
        except _Infeasible:
            out.extend([None] * (lams.size - gi))
            return out

        beta = state.extract(lam_g)
        if not state.certify(lam_g, beta, e):
            state.refactor()
            beta = state.extract(lam_g)
            if not state.certify(lam_g, beta, e):
                beta = _scipy_solve(R, col, lam_g)
                if beta is None:
                    out.extend([None] * (lams.size - gi))
                    return out
        out.append(beta)
        gi += 1
    return out
