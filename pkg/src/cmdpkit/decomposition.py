"""Weakly coupled constrained MDPs and their decomposed primal-dual solver.

A weakly coupled problem is a Cartesian product of independent sub-MDPs
whose only interaction is a set of K expected-resource constraints: each
subproblem carries link cost tables b^i(s, a), and the joint constraint is
sum_i B^i(pi^i) <= q on normalized expected link costs. Under a
decomposable (product-form) policy, both primal-dual steps split by
subproblem: the policy update applies the softmax step to each part with
modified cost c^i + lam @ b^i, and the dual subgradient is
sum_i B^i(pi^i) - q. The constant lam @ q is dropped inside per-part value
evaluation (softmax is invariant to row-constant shifts) and enters only
through reported Lagrangian values.

Subproblem evaluations within one iteration are independent; the dual
update is the per-iteration synchronization barrier.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from . import primal_dual as pd
from .core import (MixingPolicy, StationaryPolicy, TabularCMDP,
                   costs_of_policy, evaluate_policy_exact, uniform_policy)
from .sampling import env_workers

WC_CMDP_SCHEMA = "wc-cmdp-v1"
MAX_PRODUCT_STATES = 10_000


@dataclass
class SubProblem:
    """One independent sub-MDP plus its K link cost tables."""

    kernel: np.ndarray          # (S_i, A_i, S_i)
    cost: np.ndarray            # (S_i, A_i)
    link_costs: np.ndarray      # (K, S_i, A_i)
    init_dist: np.ndarray
    cost_lower_bound: float = 0.0
    action_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=float)
        self.cost = np.asarray(self.cost, dtype=float)
        self.link_costs = np.asarray(self.link_costs, dtype=float)
        if self.link_costs.ndim == 2:
            self.link_costs = self.link_costs[None, :, :]
        self.init_dist = np.asarray(self.init_dist, dtype=float)
        if self.action_mask is not None:
            self.action_mask = np.asarray(self.action_mask, dtype=bool)

    @property
    def n_states(self) -> int:
        return self.cost.shape[0]

    @property
    def n_actions(self) -> int:
        return self.cost.shape[1]

    @property
    def n_links(self) -> int:
        return self.link_costs.shape[0]

    def as_cmdp(self, discount: float) -> TabularCMDP:
        """Tabular view with zero thresholds, so the multiplier-modified
        cost is exactly c^i + lam @ b^i with no threshold offset."""
        return TabularCMDP(
            kernel=self.kernel, cost=self.cost, aux_costs=self.link_costs,
            thresholds=np.zeros(self.n_links), discount=discount,
            init_dist=self.init_dist, cost_lower_bound=self.cost_lower_bound,
            action_mask=self.action_mask)


@dataclass
class WeaklyCoupledCMDP:
    subproblems: Sequence[SubProblem]
    thresholds: np.ndarray
    discount: float

    def __post_init__(self):
        self.thresholds = np.atleast_1d(np.asarray(self.thresholds, dtype=float))

    @property
    def n_subproblems(self) -> int:
        return len(self.subproblems)

    @property
    def n_constraints(self) -> int:
        return self.thresholds.shape[0]

    def require_valid(self):
        problems = []
        for i, sub in enumerate(self.subproblems):
            if sub.n_links != self.n_constraints:
                problems.append(f"subproblem {i} has {sub.n_links} link "
                                f"tables, expected {self.n_constraints}")
                continue
            from .core import validate
            problems += [f"subproblem {i}: {msg}"
                         for msg in validate(sub.as_cmdp(self.discount))]
        if problems:
            raise ValueError("; ".join(problems))


@dataclass
class DecomposablePolicy:
    """Product-form policy: a StationaryPolicy per subproblem."""

    parts: Sequence[StationaryPolicy]

    def __post_init__(self):
        self.parts = list(self.parts)


@dataclass
class SubEvaluation:
    """What one subproblem contributes to an iteration: its q table under
    the modified cost, its objective C^i, and its link values B^i."""

    q_values: np.ndarray
    objective: float
    link_values: np.ndarray
    se_objective: float = 0.0


class SubEvaluator(Protocol):
    def __call__(self, index: int, policy: StationaryPolicy, lam: np.ndarray,
                 iteration: int = 0) -> SubEvaluation:
        ...


class ExactSubEvaluator:
    """Linear-solve evaluation of each tabular subproblem.

    work_units counts evaluated (state, action) pairs, the quantity that
    certifies per-iteration cost stays linear in the number of subproblems
    instead of growing with the joint product space.
    """

    def __init__(self, problem: WeaklyCoupledCMDP):
        self._cmdps = [sub.as_cmdp(problem.discount)
                       for sub in problem.subproblems]
        self.work_units = 0

    def __call__(self, index, policy, lam, iteration=0):
        cmdp = self._cmdps[index]
        tables = evaluate_policy_exact(cmdp, policy, lam)
        objective, links = costs_of_policy(cmdp, policy)
        self.work_units += cmdp.n_states * cmdp.n_actions
        return SubEvaluation(q_values=tables.q, objective=objective,
                             link_values=links, se_objective=0.0)


def uniform_decomposable_policy(problem: WeaklyCoupledCMDP) -> DecomposablePolicy:
    return DecomposablePolicy(
        [uniform_policy(sub.as_cmdp(problem.discount))
         for sub in problem.subproblems])


def _evaluate_all(problem, policy, lam, evaluator, iteration, workers):
    def one(i):
        try:
            return evaluator(i, policy.parts[i], lam, iteration=iteration)
        except Exception as exc:
            raise RuntimeError(f"subproblem {i} evaluation failed: {exc}") from exc

    indices = range(problem.n_subproblems)
    if workers > 1 and problem.n_subproblems > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, indices))
    return [one(i) for i in indices]


def decomposed_policy_update(problem: WeaklyCoupledCMDP,
                             policy: DecomposablePolicy, lam: np.ndarray,
                             eta: float, evaluator: SubEvaluator,
                             *, iteration: int = 0,
                             workers: int = 1) -> DecomposablePolicy:
    """Softmax step applied part by part with the modified sub-costs."""
    evals = _evaluate_all(problem, policy, lam, evaluator, iteration, workers)
    parts = [pd.policy_update(part, ev.q_values, eta)
             for part, ev in zip(policy.parts, evals)]
    return DecomposablePolicy(parts)


def aggregated_subgradient(problem: WeaklyCoupledCMDP,
                           policy: DecomposablePolicy,
                           evaluator: SubEvaluator,
                           *, iteration: int = 0,
                           workers: int = 1) -> np.ndarray:
    """Dual subgradient sum_i B^i(pi^i) - q."""
    evals = _evaluate_all(problem, policy, lam=np.zeros(problem.n_constraints),
                          evaluator=evaluator, iteration=iteration,
                          workers=workers)
    total = np.sum([ev.link_values for ev in evals], axis=0)
    return total - problem.thresholds


@dataclass
class DecomposedRunResult:
    mixing_parts: list
    lambda_bar: np.ndarray
    trail: list
    diagnostics: dict


def resolve_dual_radius_decomposed(problem: WeaklyCoupledCMDP,
                                   config: pd.SolverConfig) -> float:
    """Ball parameter M, explicit or from a strictly feasible product policy."""
    if config.dual_radius is not None:
        return float(config.dual_radius)
    if config.slater_policy is None:
        raise ValueError("provide dual_radius or a strictly feasible slater_policy")
    slater = config.slater_policy
    if not isinstance(slater, DecomposablePolicy):
        raise TypeError("slater_policy must be a DecomposablePolicy here")
    objective = 0.0
    links = np.zeros(problem.n_constraints)
    c_tilde = 0.0 if config.c_tilde is None else None
    for sub, part in zip(problem.subproblems, slater.parts):
        cmdp = sub.as_cmdp(problem.discount)
        obj_i, link_i = costs_of_policy(cmdp, part)
        objective += obj_i
        links += link_i
        if c_tilde is not None:
            c_tilde += float(cmdp.cost[cmdp.mask()].min())
    if c_tilde is None:
        c_tilde = float(config.c_tilde)
    return pd.slater_lambda_bound(c_tilde, objective, links, problem.thresholds)


def run_decomposed(problem: WeaklyCoupledCMDP, config: pd.SolverConfig,
                   *, evaluator: Optional[SubEvaluator] = None,
                   workers: Optional[int] = None) -> DecomposedRunResult:
    """Primal-dual run where both steps split across subproblems.

    The trail matches the joint-run trail format with the aggregated
    objective sum_i C^i and constraint values sum_i B^i; with the exact
    evaluator it reproduces the joint tabular run on the product MDP
    to numerical precision.
    """
    problem.require_valid()
    if workers is None:
        workers = env_workers()
    if evaluator is None:
        evaluator = ExactSubEvaluator(problem)
    T = config.iterations
    policy = config.initial_policy
    if policy is None:
        policy = uniform_decomposable_policy(problem)
    elif not isinstance(policy, DecomposablePolicy):
        raise TypeError("initial_policy must be a DecomposablePolicy")
    lam0 = (np.zeros(problem.n_constraints) if config.initial_lambda is None
            else np.atleast_1d(np.asarray(config.initial_lambda, dtype=float)))
    m_ball = resolve_dual_radius_decomposed(problem, config)
    dual = pd.DualState(lam=lam0, radius=m_ball + config.dual_slack,
                        slack=config.dual_slack)
    etas = config.schedule.etas(T)

    member_parts = [[] for _ in problem.subproblems]
    lam_rows = []
    trail = []
    sum_eta = 0.0
    sum_eta_obj = 0.0
    sum_eta_cons = np.zeros(problem.n_constraints)
    sum_eta_viol = 0.0
    sup_q_sum = 0.0
    sup_subgrad = 0.0

    for m in range(T):
        evals = _evaluate_all(problem, policy, dual.lam, evaluator, m, workers)
        objective = float(sum(ev.objective for ev in evals))
        constraints = np.sum([ev.link_values for ev in evals], axis=0)
        se_obj = float(np.sqrt(sum(ev.se_objective ** 2 for ev in evals)))
        subgrad = constraints - problem.thresholds
        # conservative joint bound: sup|Q_joint| <= sum_i sup|Q_i| + lam @ q
        per_sub_sup = sum(float(np.abs(ev.q_values).max()) for ev in evals)
        sup_q_sum = max(sup_q_sum, per_sub_sup + abs(float(dual.lam @ problem.thresholds)))
        sup_subgrad = max(sup_subgrad, float(np.linalg.norm(subgrad)))

        eta = etas[m]
        sum_eta += eta
        sum_eta_obj += eta * objective
        sum_eta_cons += eta * constraints
        sum_eta_viol += eta * pd.violation_norm(constraints, problem.thresholds)
        trail.append(pd.IterationRecord(
            m=m, eta=float(eta), lam=dual.lam.copy(),
            objective=objective, constraint_vals=np.array(constraints),
            running_avg_objective=sum_eta_obj / sum_eta,
            running_violation=pd.violation_norm(sum_eta_cons / sum_eta,
                                                problem.thresholds),
            se_objective=se_obj,
            running_violation_periter=sum_eta_viol / sum_eta,
        ))
        for parts, part in zip(member_parts, policy.parts):
            parts.append(part)
        lam_rows.append(dual.lam.copy())

        if m < T - 1:
            dual = pd.dual_update(dual, subgrad, eta)
            policy = DecomposablePolicy(
                [pd.policy_update(part, ev.q_values, eta)
                 for part, ev in zip(policy.parts, evals)])

    weights = etas / etas.sum()
    mixing_parts = [MixingPolicy(weights=weights, members=members)
                    for members in member_parts]
    lambda_bar = (weights[:, None] * np.array(lam_rows)).sum(axis=0)
    diagnostics = {
        "g_observed": max(sup_q_sum, sup_subgrad),
        "sup_q_observed": sup_q_sum,
        "sup_subgrad_observed": sup_subgrad,
        "dual_radius_m": m_ball,
        "dual_slack": config.dual_slack,
        "work_units": getattr(evaluator, "work_units", None),
    }
    return DecomposedRunResult(mixing_parts=mixing_parts,
                               lambda_bar=lambda_bar, trail=trail,
                               diagnostics=diagnostics)


def product_cmdp(problem: WeaklyCoupledCMDP) -> TabularCMDP:
    """Explicit joint MDP over the Cartesian product, for oracle use only.

    Joint states and actions use row-major order over the per-sub indices.
    Guarded at 10_000 joint states.
    """
    subs = list(problem.subproblems)
    state_dims = [sub.n_states for sub in subs]
    action_dims = [sub.n_actions for sub in subs]
    n_states = int(np.prod(state_dims))
    n_actions = int(np.prod(action_dims))
    if n_states > MAX_PRODUCT_STATES:
        raise ValueError(f"product space has {n_states} states, "
                         f"over the {MAX_PRODUCT_STATES} guard")

    kernel = np.ones((1, 1, 1))
    cost = np.zeros((1, 1))
    links = np.zeros((problem.n_constraints, 1, 1))
    init = np.ones(1)
    mask = np.ones((1, 1), dtype=bool)
    for sub in subs:
        kernel = np.einsum("sat,ubv->suabtv", kernel, sub.kernel).reshape(
            kernel.shape[0] * sub.n_states,
            kernel.shape[1] * sub.n_actions,
            kernel.shape[2] * sub.n_states)
        cost = (cost[:, None, :, None]
                + sub.cost[None, :, None, :]).reshape(
            cost.shape[0] * sub.n_states, cost.shape[1] * sub.n_actions)
        links = (links[:, :, None, :, None]
                 + sub.link_costs[:, None, :, None, :]).reshape(
            problem.n_constraints,
            links.shape[1] * sub.n_states, links.shape[2] * sub.n_actions)
        init = (init[:, None] * sub.init_dist[None, :]).reshape(-1)
        sub_mask = (np.ones((sub.n_states, sub.n_actions), dtype=bool)
                    if sub.action_mask is None else sub.action_mask)
        mask = (mask[:, None, :, None]
                & sub_mask[None, :, None, :]).reshape(
            mask.shape[0] * sub.n_states, mask.shape[1] * sub.n_actions)

    lower = sum(sub.cost_lower_bound for sub in subs)
    return TabularCMDP(kernel=kernel, cost=cost, aux_costs=links,
                       thresholds=problem.thresholds.copy(),
                       discount=problem.discount, init_dist=init,
                       cost_lower_bound=lower,
                       action_mask=None if mask.all() else mask)


def joint_policy(problem: WeaklyCoupledCMDP,
                 policy: DecomposablePolicy) -> StationaryPolicy:
    """The product policy as a StationaryPolicy on the product MDP."""
    probs = np.ones((1, 1))
    for part in policy.parts:
        probs = (probs[:, None, :, None] * part.probs[None, :, None, :]).reshape(
            probs.shape[0] * part.n_states, probs.shape[1] * part.n_actions)
    return StationaryPolicy(probs)


def to_json_dict(problem: WeaklyCoupledCMDP) -> dict:
    return {
        "schema": WC_CMDP_SCHEMA,
        "discount": problem.discount,
        "thresholds": problem.thresholds.tolist(),
        "subproblems": [
            {
                "kernel": sub.kernel.tolist(),
                "cost": sub.cost.tolist(),
                "link_costs": sub.link_costs.tolist(),
                "init_dist": sub.init_dist.tolist(),
                "cost_lower_bound": sub.cost_lower_bound,
                "action_mask": (None if sub.action_mask is None
                                else sub.action_mask.tolist()),
            }
            for sub in problem.subproblems
        ],
    }


def from_json_dict(payload: dict) -> WeaklyCoupledCMDP:
    if payload.get("schema") != WC_CMDP_SCHEMA:
        raise ValueError(f"expected schema {WC_CMDP_SCHEMA!r}, "
                         f"got {payload.get('schema')!r}")
    subs = []
    for entry in payload["subproblems"]:
        mask = entry.get("action_mask")
        subs.append(SubProblem(
            kernel=np.array(entry["kernel"], dtype=float),
            cost=np.array(entry["cost"], dtype=float),
            link_costs=np.array(entry["link_costs"], dtype=float),
            init_dist=np.array(entry["init_dist"], dtype=float),
            cost_lower_bound=float(entry.get("cost_lower_bound", 0.0)),
            action_mask=None if mask is None else np.array(mask, dtype=bool)))
    return WeaklyCoupledCMDP(subproblems=subs,
                             thresholds=np.array(payload["thresholds"]),
                             discount=float(payload["discount"]))


def save_json(problem: WeaklyCoupledCMDP, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_json_dict(problem), fh)


def load_json(path) -> WeaklyCoupledCMDP:
    with open(path, encoding="utf-8") as fh:
        return from_json_dict(json.load(fh))
