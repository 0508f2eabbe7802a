"""Projected primal-dual mirror descent for constrained MDPs.

One iteration evaluates the state-action values of the current policy
under the multiplier-modified cost together with the constraint values,
then takes a projected subgradient ascent step on the multipliers and a
softmax (entropy-mirror) descent step on the policy:

    lam_m = Proj{ lam_{m-1} + eta_{m-1} (D(pi_{m-1}) - q) }
    pi_m(a|s) propto pi_{m-1}(a|s) exp(-eta_{m-1} q_values(s, a))

The projection domain is the nonnegative orthant intersected with a
Euclidean ball; clipping negatives and rescaling onto the ball is the
exact projection. The returned policy is the step-weighted mixture of all
iterates, whose occupation measure (and therefore cost and constraint
values) is the matching weighted average.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import sampling
from .core import (MixingPolicy, StationaryPolicy, TabularCMDP,
                   costs_of_policy, evaluate_policy_exact,
                   mixing_to_stationary, uniform_policy)

PROB_FLOOR = 1e-300


@dataclass
class StepSchedule:
    """Step sizes eta_m, either constant or proportional to 1/sqrt(m+1)."""

    kind: str
    base: float

    def __post_init__(self):
        if self.kind not in ("constant", "inverse_sqrt"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.base <= 0.0:
            raise ValueError("step size base must be positive")

    def eta(self, m: int) -> float:
        if self.kind == "constant":
            return self.base
        return self.base / math.sqrt(m + 1.0)

    def etas(self, T: int) -> np.ndarray:
        return np.array([self.eta(m) for m in range(T)])


def schedule_kappas(schedule: StepSchedule, horizons: Sequence[int]):
    """Constants kappa1, kappa2 tying partial step sums to sqrt(T) and log T.

    kappa1 is the smallest sum(eta)/sqrt(T) and kappa2 the largest
    sum(eta^2)/log(T) over the tested horizons, so
    sum eta >= kappa1 sqrt(T) and sum eta^2 <= kappa2 log T on the grid.
    """
    k1 = math.inf
    k2 = 0.0
    for T in horizons:
        etas = schedule.etas(T)
        k1 = min(k1, etas.sum() / math.sqrt(T))
        k2 = max(k2, float((etas ** 2).sum()) / math.log(T))
    return k1, k2


def project_lambda(v: np.ndarray, radius: Optional[float]) -> np.ndarray:
    """Euclidean projection onto {lam >= 0, ||lam|| <= radius}.

    Clipping negatives first and then rescaling onto the ball is exact
    because the ball is centered at the origin. radius None means the
    plain nonnegative orthant.
    """
    w = np.maximum(np.asarray(v, dtype=float), 0.0)
    if radius is not None:
        norm = float(np.linalg.norm(w))
        if norm > radius:
            w = w * (radius / norm)
    return w


@dataclass
class DualState:
    lam: np.ndarray
    radius: Optional[float] = None   # M + r
    slack: float = 1.0               # r

    def __post_init__(self):
        self.lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        if (self.lam < 0).any():
            raise ValueError("multipliers must be nonnegative")
        if self.radius is not None and np.linalg.norm(self.lam) > self.radius + 1e-12:
            raise ValueError("multipliers lie outside the projection ball")


def dual_update(state: DualState, subgrad: np.ndarray, eta: float) -> DualState:
    lam = project_lambda(state.lam + eta * np.asarray(subgrad, dtype=float),
                         state.radius)
    return DualState(lam=lam, radius=state.radius, slack=state.slack)


def policy_update(policy: StationaryPolicy, q_values: np.ndarray,
                  eta: float) -> StationaryPolicy:
    """Multiplicative-weights step, normalized in log space.

    Equivalent to minimizing <q, p> + KL(p || policy) / eta over each
    state's simplex. Actions outside the current support stay at zero;
    surviving probabilities are floored at 1e-300 before normalization.
    """
    support = policy.probs > 0.0
    with np.errstate(divide="ignore"):
        scores = np.where(support, np.log(policy.probs), -np.inf) - eta * q_values
    scores = scores - scores.max(axis=1, keepdims=True)
    probs = np.where(support, np.maximum(np.exp(scores), PROB_FLOOR), 0.0)
    return StationaryPolicy(probs / probs.sum(axis=1, keepdims=True))


def violation_norm(constraint_vals: np.ndarray, thresholds: np.ndarray) -> float:
    """Euclidean norm of the positive part of D - q."""
    excess = np.maximum(np.asarray(constraint_vals) - np.asarray(thresholds), 0.0)
    return float(np.linalg.norm(excess))


def slater_lambda_bound(c_tilde: float, objective: float,
                        constraints: np.ndarray, thresholds: np.ndarray) -> float:
    """Upper bound on ||lambda*|| from a strictly feasible policy.

    Requires every constraint strictly satisfied and c_tilde below the
    optimal cost; the bound is (objective - c_tilde) / min_k (q_k - D_k).
    """
    gaps = np.asarray(thresholds, dtype=float) - np.asarray(constraints, dtype=float)
    if (gaps <= 0.0).any():
        k = int(np.flatnonzero(gaps <= 0.0)[0])
        raise ValueError(f"policy is not strictly feasible: constraint {k} "
                         f"has slack {gaps[k]:.6g}")
    if objective < c_tilde:
        raise ValueError("c_tilde exceeds the supplied policy's objective; "
                         "it cannot lower-bound the optimal cost")
    return float((objective - c_tilde) / gaps.min())


@dataclass
class TheoremConstants:
    """Quantities entering the convergence bounds.

    g_bound dominates every observed subgradient norm and |q| value,
    phi0 is the occupation-weighted KL from the optimal policy to the
    initial one, and the kappas tie step-sum growth to sqrt(T)/log T for
    the decreasing schedule.
    """

    g_bound: float
    phi0: float
    discount: float
    kappa1: float = math.nan
    kappa2: float = math.nan
    lambda_star_norm: float = 0.0
    lambda0_norm: float = 0.0


@dataclass
class TheoremBounds:
    violation: float
    gap_upper: float
    gap_lower: float


def theorem1_bounds(constants: TheoremConstants, schedule: StepSchedule,
                    T: int, slack: float) -> TheoremBounds:
    """Right-hand sides of the convergence guarantees after T iterations."""
    g2 = constants.g_bound ** 2
    one_m = 1.0 - constants.discount
    phi0 = constants.phi0
    lam0 = constants.lambda0_norm
    r = slack
    if schedule.kind == "constant":
        eta = schedule.base
        violation = ((g2 + phi0 / one_m) / (2.0 * r * T * eta)
                     + (0.5 + 1.0 / (8.0 * one_m)) * g2 * eta / (2.0 * r))
        gap_upper = ((phi0 / one_m + 0.5 * lam0 ** 2) / (T * eta)
                     + 5.0 * g2 * eta / (8.0 * one_m))
    else:
        log_t = math.log(T)
        root_t = math.sqrt(T)
        k1, k2 = constants.kappa1, constants.kappa2
        violation = ((g2 * (1.0 + 0.625 * k2 * log_t) + phi0)
                     / (2.0 * r * one_m * k1 * root_t))
        gap_upper = ((0.625 * g2 * k2 * log_t + phi0 + 0.5 * lam0 ** 2)
                     / (one_m * k1 * root_t))
    gap_lower = -constants.lambda_star_norm * violation
    return TheoremBounds(violation=violation, gap_upper=gap_upper,
                         gap_lower=gap_lower)


@dataclass
class SolverConfig:
    schedule: StepSchedule
    iterations: int
    seed: int = 0
    evaluator: str = "exact"                      # exact | mc
    mc: Optional[sampling.MCConfig] = None
    initial_policy: Optional[StationaryPolicy] = None
    initial_lambda: Optional[np.ndarray] = None
    dual_radius: Optional[float] = None           # M; radius of the ball is M + slack
    dual_slack: float = 1.0                       # r
    slater_policy: Optional[StationaryPolicy] = None
    c_tilde: Optional[float] = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if self.evaluator not in ("exact", "mc"):
            raise ValueError(f"unknown evaluator {self.evaluator!r}")
        if self.evaluator == "mc" and self.mc is None:
            raise ValueError("evaluator 'mc' needs an MCConfig")


@dataclass
class IterationRecord:
    m: int
    eta: float
    lam: np.ndarray
    objective: float
    constraint_vals: np.ndarray
    running_avg_objective: float
    running_violation: float
    se_objective: float
    running_violation_periter: float


@dataclass
class RunResult:
    mixing_policy: MixingPolicy
    lambda_bar: np.ndarray
    trail: list
    stationary_equivalent: Optional[StationaryPolicy]
    diagnostics: dict


def resolve_dual_radius(cmdp: TabularCMDP, config: SolverConfig) -> float:
    """Ball parameter M, explicit or from the Slater bound."""
    if config.dual_radius is not None:
        return float(config.dual_radius)
    if config.slater_policy is None:
        raise ValueError("provide dual_radius or a strictly feasible slater_policy")
    objective, constraints = costs_of_policy(cmdp, config.slater_policy)
    c_tilde = config.c_tilde
    if c_tilde is None:
        c_tilde = float(cmdp.cost[cmdp.mask()].min())
    return slater_lambda_bound(c_tilde, objective, constraints, cmdp.thresholds)


def run(cmdp: TabularCMDP, config: SolverConfig) -> RunResult:
    """Execute T - 1 primal-dual iterations and return averaged outputs.

    The trail has one record per iterate m = 0..T-1, each holding the
    multiplier, the evaluated objective and constraint values, and running
    weighted averages over the prefix. With the exact evaluator the run is
    deterministic; with the Monte Carlo evaluator it is deterministic per
    seed.
    """
    cmdp.require_valid()
    T = config.iterations
    policy = config.initial_policy or uniform_policy(cmdp)
    lam0 = (np.zeros(cmdp.n_constraints) if config.initial_lambda is None
            else np.atleast_1d(np.asarray(config.initial_lambda, dtype=float)))
    m_ball = resolve_dual_radius(cmdp, config)
    dual = DualState(lam=lam0, radius=m_ball + config.dual_slack,
                     slack=config.dual_slack)
    mask = cmdp.mask()
    cols_s, cols_a = np.nonzero(mask)
    etas = config.schedule.etas(T)

    env = sampler = None
    if config.evaluator == "mc":
        env = sampling.TabularEnv(cmdp)

    members = []
    lam_rows = []
    trail = []
    sum_eta = 0.0
    sum_eta_obj = 0.0
    sum_eta_cons = np.zeros(cmdp.n_constraints)
    sum_eta_viol = 0.0
    sup_q = 0.0
    sup_subgrad = 0.0

    for m in range(T):
        if config.evaluator == "exact":
            tables = evaluate_policy_exact(cmdp, policy, dual.lam)
            q_values = tables.q
            objective, constraints = costs_of_policy(cmdp, policy)
            se_obj = 0.0
        else:
            sampler = sampling.TabularPolicySampler(policy)
            q_est = sampling.estimate_q(
                env, sampler, dual.lam, cols_s, cols_a, config.mc,
                thresholds=cmdp.thresholds, context=f"it{m}/q")
            q_values = np.zeros((cmdp.n_states, cmdp.n_actions))
            q_values[cols_s, cols_a] = q_est.means
            ret = sampling.estimate_returns(env, sampler, config.mc,
                                            context=f"it{m}/ret")
            objective, constraints = ret.objective, ret.constraints
            se_obj = ret.objective_se

        subgrad = constraints - cmdp.thresholds
        sup_q = max(sup_q, float(np.abs(q_values[mask]).max()))
        sup_subgrad = max(sup_subgrad, float(np.linalg.norm(subgrad)))

        eta = etas[m]
        sum_eta += eta
        sum_eta_obj += eta * objective
        sum_eta_cons += eta * constraints
        sum_eta_viol += eta * violation_norm(constraints, cmdp.thresholds)
        trail.append(IterationRecord(
            m=m, eta=float(eta), lam=dual.lam.copy(),
            objective=float(objective), constraint_vals=np.array(constraints),
            running_avg_objective=sum_eta_obj / sum_eta,
            running_violation=violation_norm(sum_eta_cons / sum_eta, cmdp.thresholds),
            se_objective=float(se_obj),
            running_violation_periter=sum_eta_viol / sum_eta,
        ))
        members.append(policy)
        lam_rows.append(dual.lam.copy())

        if m < T - 1:
            dual = dual_update(dual, subgrad, eta)
            policy = policy_update(policy, q_values, eta)

    weights = etas / etas.sum()
    mixing = MixingPolicy(weights=weights, members=members)
    lambda_bar = (weights[:, None] * np.array(lam_rows)).sum(axis=0)
    diagnostics = {
        "g_observed": max(sup_q, sup_subgrad),
        "sup_q_observed": sup_q,
        "sup_subgrad_observed": sup_subgrad,
        "dual_radius_m": m_ball,
        "dual_slack": config.dual_slack,
    }
    return RunResult(
        mixing_policy=mixing,
        lambda_bar=lambda_bar,
        trail=trail,
        stationary_equivalent=mixing_to_stationary(cmdp, mixing),
        diagnostics=diagnostics,
    )
