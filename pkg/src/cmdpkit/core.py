"""Tabular constrained MDP primitives.

Problem data lives in dense numpy arrays: a transition kernel P[s, a, s'],
a scalar objective cost c[s, a], K auxiliary cost tables d[k, s, a] with
thresholds q[k], a discount factor, and an initial state distribution.
All value-type quantities carry the (1 - gamma) normalization: the value of
a policy from state s is (1 - gamma) * E[sum_t gamma^t c(s_t, a_t) | s_0 = s],
so values are convex combinations of per-step costs and total occupation
mass is one.

States with restricted action sets are expressed through an optional boolean
``action_mask``; masked-out entries never enter policies, occupation
measures, or the LP oracle, and their kernel/cost entries are ignored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

CMDP_SCHEMA = "cmdp-v1"


@dataclass
class TabularCMDP:
    """Finite constrained MDP with dense tables.

    Attributes
    ----------
    kernel : (S, A, S) array, kernel[s, a, s'] = P(s' | s, a)
    cost : (S, A) array, objective per-step cost
    aux_costs : (K, S, A) array, auxiliary per-step costs
    thresholds : (K,) array, constraint levels on normalized expected aux cost
    discount : float in (0, 1)
    init_dist : (S,) array, initial state distribution
    cost_lower_bound : float, strict lower bound on all per-step costs
    action_mask : (S, A) bool array, True where the action is admissible
    """

    kernel: np.ndarray
    cost: np.ndarray
    aux_costs: np.ndarray
    thresholds: np.ndarray
    discount: float
    init_dist: np.ndarray
    cost_lower_bound: float = 0.0
    action_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=float)
        self.cost = np.asarray(self.cost, dtype=float)
        self.aux_costs = np.asarray(self.aux_costs, dtype=float)
        if self.aux_costs.ndim == 2:
            self.aux_costs = self.aux_costs[None, :, :]
        self.thresholds = np.atleast_1d(np.asarray(self.thresholds, dtype=float))
        self.init_dist = np.asarray(self.init_dist, dtype=float)
        if self.action_mask is not None:
            self.action_mask = np.asarray(self.action_mask, dtype=bool)

    @property
    def n_states(self) -> int:
        return self.kernel.shape[0]

    @property
    def n_actions(self) -> int:
        return self.kernel.shape[1]

    @property
    def n_constraints(self) -> int:
        return self.aux_costs.shape[0]

    def mask(self) -> np.ndarray:
        """Boolean admissibility table, all-True when no mask was given."""
        if self.action_mask is None:
            return np.ones((self.n_states, self.n_actions), dtype=bool)
        return self.action_mask

    def require_valid(self):
        problems = validate(self)
        if problems:
            raise ValueError("invalid CMDP: " + "; ".join(problems))


def validate(cmdp: TabularCMDP, atol: float = 1e-9) -> list:
    """Return a list of human-readable invariant violations (empty if valid)."""
    problems = []
    S, A = cmdp.n_states, cmdp.n_actions
    if cmdp.kernel.shape != (S, A, S):
        problems.append(f"kernel shape {cmdp.kernel.shape} != {(S, A, S)}")
        return problems
    if cmdp.cost.shape != (S, A):
        problems.append(f"cost shape {cmdp.cost.shape} != {(S, A)}")
    if cmdp.aux_costs.shape[1:] != (S, A):
        problems.append(f"aux_costs shape {cmdp.aux_costs.shape} incompatible with {(S, A)}")
    if cmdp.thresholds.shape != (cmdp.aux_costs.shape[0],):
        problems.append("thresholds length != number of aux cost tables")
    if not (0.0 < cmdp.discount < 1.0):
        problems.append(f"discount {cmdp.discount} outside (0, 1)")
    mask = cmdp.mask()
    if mask.shape != (S, A):
        problems.append(f"action_mask shape {mask.shape} != {(S, A)}")
        return problems
    if not mask.any(axis=1).all():
        bad = int(np.flatnonzero(~mask.any(axis=1))[0])
        problems.append(f"state {bad} has no admissible action")
    row_sums = cmdp.kernel.sum(axis=2)
    bad_rows = mask & (np.abs(row_sums - 1.0) > atol)
    if bad_rows.any():
        s, a = map(int, np.argwhere(bad_rows)[0])
        problems.append(f"kernel row (s={s}, a={a}) sums to {row_sums[s, a]:.12g}")
    if (cmdp.kernel < -atol).any():
        problems.append("kernel has negative entries")
    if cmdp.init_dist.shape != (S,):
        problems.append(f"init_dist shape {cmdp.init_dist.shape} != ({S},)")
    else:
        if abs(cmdp.init_dist.sum() - 1.0) > atol:
            problems.append(f"init_dist sums to {cmdp.init_dist.sum():.12g}")
        if (cmdp.init_dist < -atol).any():
            problems.append("init_dist has negative entries")
    if mask.any() and not (cmdp.cost[mask] > cmdp.cost_lower_bound).all():
        problems.append("cost_lower_bound is not a strict lower bound on admissible costs")
    return problems


@dataclass
class StationaryPolicy:
    """Stationary randomized policy, probs[s, a] = pi(a | s)."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        sums = self.probs.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-12:
            raise ValueError(f"policy rows must sum to 1, worst error {np.abs(sums - 1.0).max():.3g}")
        if (self.probs < 0).any():
            raise ValueError("policy has negative probabilities")

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]


@dataclass
class MixingPolicy:
    """Convex combination of stationary policies, executed by drawing one
    member at time zero and following it forever."""

    weights: np.ndarray
    members: Sequence[StationaryPolicy]

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.members) != self.weights.shape[0]:
            raise ValueError("one weight per member policy required")
        if abs(self.weights.sum() - 1.0) > 1e-10 or (self.weights < 0).any():
            raise ValueError("mixing weights must be a probability vector")


PolicyLike = Union[StationaryPolicy, MixingPolicy]


@dataclass
class OccupationMeasure:
    """Normalized discounted state-action occupation, nu[s, a]."""

    nu: np.ndarray

    def __post_init__(self):
        self.nu = np.asarray(self.nu, dtype=float)

    def state_marginal(self) -> np.ndarray:
        return self.nu.sum(axis=1)

    def total_mass(self) -> float:
        return float(self.nu.sum())


@dataclass
class ValueTables:
    """State values v[s] and state-action values q[s, a] for a fixed policy
    and multiplier, both carrying the (1 - gamma) normalization."""

    v: np.ndarray
    q: np.ndarray


def uniform_policy(cmdp: TabularCMDP) -> StationaryPolicy:
    """Uniform distribution over each state's admissible actions."""
    mask = cmdp.mask().astype(float)
    return StationaryPolicy(mask / mask.sum(axis=1, keepdims=True))


def modified_cost(cmdp: TabularCMDP, lam: np.ndarray) -> np.ndarray:
    """Lagrangian per-step cost c(s,a) + sum_k lam_k (d_k(s,a) - q_k).

    The threshold offset is included, so the expected normalized value of
    this cost under a policy equals the Lagrangian L(pi, lam).
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if lam.shape != (cmdp.n_constraints,):
        raise ValueError(f"lambda must have {cmdp.n_constraints} entries")
    if (lam < 0).any():
        raise ValueError("lambda must be componentwise nonnegative")
    shifted = cmdp.aux_costs - cmdp.thresholds[:, None, None]
    return cmdp.cost + np.tensordot(lam, shifted, axes=1)


def _policy_matrices(cmdp: TabularCMDP, policy: StationaryPolicy):
    """Per-state expected cost vector and state transition matrix under pi."""
    pi = policy.probs
    p_pi = np.einsum("sa,sat->st", pi, cmdp.kernel)
    return pi, p_pi


def evaluate_policy_exact(cmdp: TabularCMDP, policy: StationaryPolicy,
                          lam: np.ndarray) -> ValueTables:
    """Solve the linear Bellman system for v and q under the modified cost.

    v satisfies v = (1 - gamma) * c_pi + gamma * P_pi v and
    q(s, a) = (1 - gamma) * c_lam(s, a) + gamma * sum_s' P(s'|s,a) v(s').
    Masked-out actions get q = 0.
    """
    c_lam = modified_cost(cmdp, lam)
    mask = cmdp.mask()
    c_lam = np.where(mask, c_lam, 0.0)
    pi, p_pi = _policy_matrices(cmdp, policy)
    gamma = cmdp.discount
    c_pi = (pi * c_lam).sum(axis=1)
    v = np.linalg.solve(np.eye(cmdp.n_states) - gamma * p_pi, (1.0 - gamma) * c_pi)
    q = (1.0 - gamma) * c_lam + gamma * cmdp.kernel @ v
    q = np.where(mask, q, 0.0)
    return ValueTables(v=v, q=q)


def occupation_exact(cmdp: TabularCMDP, policy: PolicyLike) -> OccupationMeasure:
    """Normalized discounted occupation measure of a policy.

    Solves the flow balance system; a mixing policy's occupation is the
    weighted average of its members'.
    """
    if isinstance(policy, MixingPolicy):
        nu = np.zeros((cmdp.n_states, cmdp.n_actions))
        for w, member in zip(policy.weights, policy.members):
            if w > 0.0:
                nu += w * occupation_exact(cmdp, member).nu
        return OccupationMeasure(nu)
    _, p_pi = _policy_matrices(cmdp, policy)
    gamma = cmdp.discount
    nu_s = np.linalg.solve(np.eye(cmdp.n_states) - gamma * p_pi.T,
                           (1.0 - gamma) * cmdp.init_dist)
    return OccupationMeasure(nu_s[:, None] * policy.probs)


def costs_of_policy(cmdp: TabularCMDP, policy: PolicyLike):
    """Expected normalized objective and auxiliary costs (C, D_1..K)."""
    nu = occupation_exact(cmdp, policy).nu
    objective = float((cmdp.cost * nu).sum())
    constraints = np.tensordot(cmdp.aux_costs, nu, axes=([1, 2], [0, 1]))
    return objective, constraints


def mixing_to_stationary(cmdp: TabularCMDP, policy: MixingPolicy) -> StationaryPolicy:
    """Stationary policy with the same occupation measure as the mixture.

    Conditional action frequencies nu(s, a) / nu_s(s); states the mixture
    never visits fall back to the uniform admissible distribution.
    """
    nu = occupation_exact(cmdp, policy).nu
    nu_s = nu.sum(axis=1)
    mask = cmdp.mask().astype(float)
    probs = np.empty_like(nu)
    visited = nu_s > 0.0
    probs[visited] = nu[visited] / nu_s[visited, None]
    unvisited = ~visited
    if unvisited.any():
        probs[unvisited] = (mask[unvisited]
                            / mask[unvisited].sum(axis=1, keepdims=True))
    return StationaryPolicy(probs)


def weighted_kl(cmdp: TabularCMDP, anchor: PolicyLike,
                p1: StationaryPolicy, p2: StationaryPolicy) -> float:
    """State-occupation-weighted KL divergence between two policies.

    Weights are the state marginal of the anchor policy's occupation
    measure. Returns +inf when p2 puts zero mass on an action that p1 uses
    in a state the anchor visits.
    """
    nu_s = occupation_exact(cmdp, anchor).state_marginal()
    total = 0.0
    for s in np.flatnonzero(nu_s > 0.0):
        a_sup = p1.probs[s] > 0.0
        if (p2.probs[s][a_sup] <= 0.0).any():
            return float("inf")
        ratio = p1.probs[s][a_sup] / p2.probs[s][a_sup]
        total += nu_s[s] * float((p1.probs[s][a_sup] * np.log(ratio)).sum())
    return total


def performance_difference(cmdp: TabularCMDP, lam: np.ndarray,
                           p1: StationaryPolicy, p2: StationaryPolicy):
    """Both sides of the occupation-measure performance-difference identity.

    Returns (lhs, rhs) with
    lhs = E_mu0[v^{p2}] - E_mu0[v^{p1}] and
    rhs = (1 - gamma)^{-1} E_{(s,a) ~ nu^{p2}}[q^{p1}(s, a) - v^{p1}(s)],
    computed under the modified cost for the given multiplier.
    """
    tables1 = evaluate_policy_exact(cmdp, p1, lam)
    tables2 = evaluate_policy_exact(cmdp, p2, lam)
    lhs = float(cmdp.init_dist @ tables2.v) - float(cmdp.init_dist @ tables1.v)
    nu2 = occupation_exact(cmdp, p2).nu
    rhs = float((nu2 * (tables1.q - tables1.v[:, None])).sum()) / (1.0 - cmdp.discount)
    return lhs, rhs


def lagrangian_value(cmdp: TabularCMDP, policy: PolicyLike, lam: np.ndarray) -> float:
    """L(pi, lam) = C(pi) + sum_k lam_k (D_k(pi) - q_k)."""
    objective, constraints = costs_of_policy(cmdp, policy)
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    return objective + float(lam @ (constraints - cmdp.thresholds))


def to_json_dict(cmdp: TabularCMDP) -> dict:
    """Serialize to the cmdp-v1 wire format."""
    payload = {
        "schema": CMDP_SCHEMA,
        "n_states": cmdp.n_states,
        "n_actions": cmdp.n_actions,
        "n_constraints": cmdp.n_constraints,
        "discount": cmdp.discount,
        "cost_lower_bound": cmdp.cost_lower_bound,
        "kernel": cmdp.kernel.tolist(),
        "cost": cmdp.cost.tolist(),
        "aux_costs": cmdp.aux_costs.tolist(),
        "thresholds": cmdp.thresholds.tolist(),
        "init_dist": cmdp.init_dist.tolist(),
    }
    if cmdp.action_mask is not None:
        payload["action_mask"] = cmdp.action_mask.astype(int).tolist()
    return payload


def from_json_dict(payload: dict) -> TabularCMDP:
    if payload.get("schema") != CMDP_SCHEMA:
        raise ValueError(f"expected schema {CMDP_SCHEMA!r}, got {payload.get('schema')!r}")
    mask = payload.get("action_mask")
    cmdp = TabularCMDP(
        kernel=np.array(payload["kernel"], dtype=float),
        cost=np.array(payload["cost"], dtype=float),
        aux_costs=np.array(payload["aux_costs"], dtype=float),
        thresholds=np.array(payload["thresholds"], dtype=float),
        discount=float(payload["discount"]),
        init_dist=np.array(payload["init_dist"], dtype=float),
        cost_lower_bound=float(payload.get("cost_lower_bound", 0.0)),
        action_mask=None if mask is None else np.array(mask, dtype=bool),
    )
    cmdp.require_valid()
    return cmdp


def save_json(cmdp: TabularCMDP, path) -> None:
    with open(path, "w") as fh:
        json.dump(to_json_dict(cmdp), fh)


def load_json(path) -> TabularCMDP:
    with open(path) as fh:
        return from_json_dict(json.load(fh))
