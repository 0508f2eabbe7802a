"""Seeded random problem instances for tests and bound checks.

Instances are built so the uniform policy is strictly feasible with a
known margin, which keeps the optimal multipliers (and the Slater bound
on them) moderate.
"""

from __future__ import annotations

import numpy as np

from .core import StationaryPolicy, TabularCMDP, costs_of_policy, uniform_policy


def random_cmdp(rng: np.random.Generator, n_states: int = 4, n_actions: int = 3,
                n_constraints: int = 1, slater_margin: float = 0.15,
                discount: float = None) -> TabularCMDP:
    """Random dense instance whose uniform policy has the given Slater slack."""
    kernel = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    cost = rng.uniform(0.05, 1.0, size=(n_states, n_actions))
    aux = rng.uniform(0.0, 1.0, size=(n_constraints, n_states, n_actions))
    init = rng.dirichlet(np.ones(n_states))
    if discount is None:
        discount = float(rng.uniform(0.6, 0.95))
    cmdp = TabularCMDP(kernel=kernel, cost=cost, aux_costs=aux,
                       thresholds=np.zeros(n_constraints), discount=discount,
                       init_dist=init, cost_lower_bound=0.0)
    _, constraints = costs_of_policy(cmdp, uniform_policy(cmdp))
    cmdp.thresholds = constraints + slater_margin
    return cmdp


def random_policy(rng: np.random.Generator, cmdp: TabularCMDP) -> StationaryPolicy:
    """Full-support random policy over the admissible actions."""
    raw = rng.dirichlet(np.ones(cmdp.n_actions), size=cmdp.n_states)
    raw = np.where(cmdp.mask(), raw + 1e-9, 0.0)
    return StationaryPolicy(raw / raw.sum(axis=1, keepdims=True))
