"""Exact linear-programming oracle over occupation measures.

The optimal normalized cost of a constrained MDP is the value of

    min  sum_{s,a} c(s,a) nu(s,a)
    s.t. sum_a nu(s',a) - gamma sum_{s,a} P(s'|s,a) nu(s,a) = (1-gamma) mu0(s')
         sum_{s,a} d_k(s,a) nu(s,a) <= q_k                  for each k
         nu >= 0,

with one column per admissible state-action pair. The flow rows pin total
mass to one, so the program is never unbounded; an empty feasible region
reports "infeasible". Dual multipliers of the auxiliary-cost rows are
returned alongside the primal solution (they are the optimal Lagrange
multipliers), which downstream bound checks use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import simplex
from .core import OccupationMeasure, StationaryPolicy, TabularCMDP

MAX_PAIRS = 100_000


@dataclass
class OracleSolution:
    status: str                       # optimal | infeasible
    c_star: Optional[float] = None    # normalized optimal cost
    nu: Optional[OccupationMeasure] = None
    policy: Optional[StationaryPolicy] = None
    dual_slacks: Optional[np.ndarray] = None   # q_k - D_k at the optimum
    lambda_star: Optional[np.ndarray] = None   # multipliers of the aux rows
    discount: Optional[float] = None
    n_pivots: int = 0

    @property
    def c_star_unnormalized(self) -> Optional[float]:
        if self.c_star is None:
            return None
        return self.c_star / (1.0 - self.discount)


def solve_lp(cmdp: TabularCMDP, *, max_pivots: int = 200_000) -> OracleSolution:
    """Solve the occupation-measure LP of a tabular constrained MDP."""
    cmdp.require_valid()
    S, A = cmdp.n_states, cmdp.n_actions
    mask = cmdp.mask()
    n_admissible = int(mask.sum())
    if n_admissible > MAX_PAIRS:
        raise ValueError(
            f"instance has {n_admissible} admissible state-action pairs, "
            f"above the dense-oracle guard of {MAX_PAIRS}")
    cols_s, cols_a = np.nonzero(mask)
    n_cols = cols_s.size
    gamma = cmdp.discount

    a_eq = -gamma * cmdp.kernel[cols_s, cols_a].T.copy()   # (S, n_cols)
    a_eq[cols_s, np.arange(n_cols)] += 1.0
    b_eq = (1.0 - gamma) * cmdp.init_dist
    a_ub = cmdp.aux_costs[:, cols_s, cols_a]
    b_ub = cmdp.thresholds
    c_vec = cmdp.cost[cols_s, cols_a]

    res = simplex.solve(c_vec, a_eq=a_eq, b_eq=b_eq, a_ub=a_ub, b_ub=b_ub,
                        max_pivots=max_pivots)
    if res.status != "optimal":
        status = "infeasible" if res.status == "infeasible" else res.status
        return OracleSolution(status=status, discount=gamma, n_pivots=res.n_pivots)

    nu = np.zeros((S, A))
    nu[cols_s, cols_a] = np.maximum(res.x, 0.0)
    nu_s = nu.sum(axis=1)
    probs = np.where(mask, mask.astype(float), 0.0)
    visited = nu_s > 0.0
    probs[visited] = nu[visited] / nu_s[visited, None]
    probs /= probs.sum(axis=1, keepdims=True)
    constraint_vals = np.tensordot(cmdp.aux_costs, nu, axes=([1, 2], [0, 1]))
    return OracleSolution(
        status="optimal",
        c_star=float(res.objective),
        nu=OccupationMeasure(nu),
        policy=StationaryPolicy(probs),
        dual_slacks=cmdp.thresholds - constraint_vals,
        lambda_star=res.duals_ub,
        discount=gamma,
        n_pivots=res.n_pivots,
    )


def check_complementary_slackness(solution: OracleSolution, tol: float = 1e-7) -> list:
    """Violations of slack_k * lambda_k ~= 0 at the reported optimum."""
    problems = []
    if solution.status != "optimal":
        return [f"solution status is {solution.status}"]
    for k, (slack, lam) in enumerate(zip(solution.dual_slacks, solution.lambda_star)):
        if abs(slack * lam) > tol:
            problems.append(
                f"constraint {k}: slack {slack:.6g} * multiplier {lam:.6g} "
                f"= {slack * lam:.3g} exceeds {tol:g}")
        if slack < -tol:
            problems.append(f"constraint {k}: threshold violated by {-slack:.6g}")
    return problems


def solution_to_json_dict(solution: OracleSolution) -> dict:
    payload = {"status": solution.status, "n_pivots": solution.n_pivots}
    if solution.status == "optimal":
        payload.update({
            "c_star": solution.c_star,
            "c_star_unnormalized": solution.c_star_unnormalized,
            "dual_slacks": solution.dual_slacks.tolist(),
            "lambda_star": solution.lambda_star.tolist(),
            "nu": solution.nu.nu.tolist(),
            "policy": solution.policy.probs.tolist(),
        })
    return payload
