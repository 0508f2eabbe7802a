"""Dense two-phase revised simplex.

Solves   min c @ x   s.t.   a_eq @ x == b_eq,  a_ub @ x <= b_ub,  x >= 0.

The implementation keeps an explicit dense basis inverse that is rebuilt
periodically for numerical hygiene. Pivoting uses Dantzig's rule (most
negative reduced cost) while the objective is making progress and switches
to Bland's rule after a run of degenerate pivots, which rules out cycling.
Ratio-test ties go to the largest pivot element (then the smallest basis
variable index), which keeps the basis well conditioned on degenerate
instances; under Bland's rule the smallest basis index wins outright, as
the anti-cycling argument requires. Runs are deterministic either way.
Phase one minimizes the sum of artificial variables (slack columns seed
the basis where the right-hand side allows); redundant equality rows
surface as zero rows and are dropped.

Tolerances: phase-one feasibility 1e-9, reduced-cost optimality 1e-10,
pivot magnitude 1e-9.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

STALL_LIMIT = 30


@dataclass
class SimplexResult:
    status: str                       # optimal | infeasible | unbounded | iteration_limit
    x: Optional[np.ndarray] = None
    objective: Optional[float] = None
    duals_eq: Optional[np.ndarray] = None
    duals_ub: Optional[np.ndarray] = None  # nonnegative multipliers of the <= rows
    n_pivots: int = 0


def solve(c, a_eq=None, b_eq=None, a_ub=None, b_ub=None, *,
          feas_tol: float = 1e-9, opt_tol: float = 1e-10,
          piv_tol: float = 1e-9, max_pivots: int = 200_000) -> SimplexResult:
    c = np.asarray(c, dtype=float)
    n0 = c.size
    a_eq = np.zeros((0, n0)) if a_eq is None else np.asarray(a_eq, dtype=float)
    b_eq = np.zeros(0) if b_eq is None else np.atleast_1d(np.asarray(b_eq, dtype=float))
    a_ub = np.zeros((0, n0)) if a_ub is None else np.asarray(a_ub, dtype=float)
    b_ub = np.zeros(0) if b_ub is None else np.atleast_1d(np.asarray(b_ub, dtype=float))
    m_eq, m_ub = a_eq.shape[0], a_ub.shape[0]
    m = m_eq + m_ub
    n = n0 + m_ub

    A = np.zeros((m, n))
    A[:m_eq, :n0] = a_eq
    A[m_eq:, :n0] = a_ub
    if m_ub:
        A[m_eq:, n0:] = np.eye(m_ub)
    b = np.concatenate([b_eq, b_ub])
    cost = np.concatenate([c, np.zeros(m_ub)])

    flipped = b < 0
    A[flipped] *= -1.0
    b = np.where(flipped, -b, b)

    # initial basis: unflipped slack columns where available, else artificials
    basis = np.arange(n, n + m)
    for i in range(m_ub):
        if not flipped[m_eq + i]:
            basis[m_eq + i] = n0 + i

    state = _State(A=A, b=b, basis=basis, n_eq=m_eq, flipped=flipped,
                   piv_tol=piv_tol)

    # phase one: minimize the total artificial mass
    status = state.run_phase(np.zeros(n), artificial_cost=1.0, opt_tol=opt_tol,
                             max_pivots=max_pivots)
    if status != "optimal":
        return SimplexResult(status=status, n_pivots=state.n_pivots)
    if state.artificial_mass() > feas_tol:
        return SimplexResult(status="infeasible", n_pivots=state.n_pivots)
    state.eliminate_artificials()

    status = state.run_phase(cost, artificial_cost=0.0, opt_tol=opt_tol,
                             max_pivots=max_pivots)
    if status != "optimal":
        return SimplexResult(status=status, n_pivots=state.n_pivots)

    x = np.zeros(n)
    x[state.basis] = np.maximum(state.xB, 0.0)
    y = state.duals(cost, 0.0)
    y = np.where(state.flipped, -y, y)
    return SimplexResult(
        status="optimal",
        x=x[:n0],
        objective=float(cost @ x),
        duals_eq=y[:state.n_eq],
        duals_ub=np.maximum(0.0, -y[state.n_eq:]),
        n_pivots=state.n_pivots,
    )


class _State:
    """Mutable revised-simplex state shared across the two phases."""

    def __init__(self, A, b, basis, n_eq, flipped, piv_tol):
        self.A = A
        self.b = b
        self.basis = basis
        self.n_eq = n_eq
        self.flipped = flipped
        self.piv_tol = piv_tol
        self.m, self.n = A.shape
        self.n_pivots = 0
        self.Binv = np.eye(self.m)
        self.xB = b.copy()
        self.refactor()

    def refactor(self):
        B = np.zeros((self.m, self.m))
        for i, j in enumerate(self.basis):
            if j < self.n:
                B[:, i] = self.A[:, j]
            else:
                B[j - self.n, i] = 1.0
        self.Binv = np.linalg.inv(B)
        self.xB = np.maximum(self.Binv @ self.b, 0.0)

    def basic_cost(self, cvec, artificial_cost):
        return np.where(self.basis < self.n,
                        cvec[np.minimum(self.basis, self.n - 1)],
                        artificial_cost)

    def artificial_mass(self) -> float:
        return float(self.xB[self.basis >= self.n].sum())

    def duals(self, cvec, artificial_cost):
        return self.basic_cost(cvec, artificial_cost) @ self.Binv

    def run_phase(self, cvec, artificial_cost, opt_tol, max_pivots) -> str:
        bland = False
        stall = 0
        z_prev = np.inf
        while True:
            if self.n_pivots >= max_pivots:
                return "iteration_limit"
            y = self.duals(cvec, artificial_cost)
            reduced = cvec - y @ self.A
            if bland:
                negatives = np.flatnonzero(reduced < -opt_tol)
                if negatives.size == 0:
                    return "optimal"
                enter = int(negatives[0])
            else:
                enter = int(np.argmin(reduced))
                if reduced[enter] >= -opt_tol:
                    return "optimal"
            u = self.Binv @ self.A[:, enter]
            pos = u > self.piv_tol
            if not pos.any():
                return "unbounded"
            ratios = np.where(pos, self.xB / np.where(pos, u, 1.0), np.inf)
            tmin = ratios.min()
            candidates = np.flatnonzero((ratios <= tmin + 1e-10 * (1.0 + abs(tmin))) & pos)
            if bland:
                leave = int(candidates[np.argmin(self.basis[candidates])])
            else:
                best = u[candidates] >= u[candidates].max() * (1.0 - 1e-12)
                candidates = candidates[best]
                leave = int(candidates[np.argmin(self.basis[candidates])])
            self._pivot(enter, leave, u)
            z = float(self.basic_cost(cvec, artificial_cost) @ self.xB)
            if z < z_prev - 1e-12 * (1.0 + abs(z_prev)):
                stall = 0
                bland = False
            else:
                stall += 1
                if stall >= STALL_LIMIT:
                    bland = True
            z_prev = z

    def _pivot(self, enter, leave, u):
        theta = self.xB[leave] / u[leave]
        self.xB -= theta * u
        self.xB[leave] = theta
        np.maximum(self.xB, 0.0, out=self.xB)
        pivot_row = self.Binv[leave] / u[leave]
        u_other = u.copy()
        u_other[leave] = 0.0
        self.Binv -= np.outer(u_other, pivot_row)
        self.Binv[leave] = pivot_row
        self.basis[leave] = enter
        self.n_pivots += 1
        if self.n_pivots % 100 == 0:
            self.refactor()

    def eliminate_artificials(self):
        """Pivot leftover basic artificials out; drop rows that prove redundant."""
        redundant = []
        for row in range(self.m):
            if self.basis[row] < self.n:
                continue
            wrow = self.Binv[row] @ self.A
            candidates = np.flatnonzero(np.abs(wrow) > 1e-9)
            candidates = candidates[~np.isin(candidates, self.basis)]
            if candidates.size:
                enter = int(candidates[0])
                self._pivot(enter, row, self.Binv @ self.A[:, enter])
            else:
                redundant.append(row)
        if redundant:
            keep = np.setdiff1d(np.arange(self.m), redundant)
            self.n_eq -= sum(1 for r in redundant if r < self.n_eq)
            self.A = self.A[keep]
            self.b = self.b[keep]
            self.flipped = self.flipped[keep]
            self.basis = self.basis[keep]
            self.m = keep.size
            self.refactor()
