"""Multi-product inventory replenishment with a shared resource budget.

Each product i holds an integer inventory level s_i in [lower, upper].
A period unfolds as: order up to a target level y_i (the action; ordering
is instantaneous), pay the resource cost v_i * [y_i]+ against the shared
budget, then a random demand w_i is drawn and the period cost
h_i * [y_i - w_i]+ + b_i * [w_i - y_i]+ is charged. The next level is
clamp(y_i - w_i, lower, upper): demand beyond the lower truncation is lost
costlessly through the clamp, while the period cost is charged on the raw
shortfall. Targets never exceed the upper bound, so the clamp only ever
binds below.

Actions are encoded as target levels on the same grid as states
(admissible targets satisfy y >= s), which makes transition rows, expected
costs, and budget costs depend on the action index alone. The joint
tabular instance exploits that: its kernel and cost tables are stored once
per action and broadcast across states without copying, keeping the full
two-product instance (441 states x 441 actions) inside a few megabytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import primal_dual as pd
from . import sampling
from .core import StationaryPolicy, TabularCMDP
from .decomposition import (DecomposablePolicy, DecomposedRunResult,
                            SubEvaluation, SubProblem, WeaklyCoupledCMDP,
                            run_decomposed)

MAX_TABULAR_PAIRS = 100_000


@dataclass
class InventoryConfig:
    """Problem data; per-product arrays all have length n_products."""

    demand_pmfs: list                 # pmf over demand values 0..len-1
    holding: np.ndarray
    backlog: np.ndarray
    resource: np.ndarray
    budget: float
    discount: float
    state_bounds: tuple = (-10, 10)
    max_order: Optional[np.ndarray] = None

    def __post_init__(self):
        self.demand_pmfs = [np.asarray(p, dtype=float) for p in self.demand_pmfs]
        self.holding = np.asarray(self.holding, dtype=float)
        self.backlog = np.asarray(self.backlog, dtype=float)
        self.resource = np.asarray(self.resource, dtype=float)
        lower, upper = self.state_bounds
        if not lower < upper:
            raise ValueError("state_bounds must satisfy lower < upper")
        for i, pmf in enumerate(self.demand_pmfs):
            if abs(pmf.sum() - 1.0) > 1e-12 or (pmf < 0).any():
                raise ValueError(f"demand pmf {i} is not a distribution")
        for name, arr in (("holding", self.holding), ("backlog", self.backlog),
                          ("resource", self.resource)):
            if (arr <= 0).any():
                raise ValueError(f"{name} costs must be positive")
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if self.max_order is not None:
            self.max_order = np.asarray(self.max_order, dtype=int)

    @property
    def n_products(self) -> int:
        return len(self.demand_pmfs)

    @property
    def grid(self) -> np.ndarray:
        lower, upper = self.state_bounds
        return np.arange(lower, upper + 1)

    @property
    def n_levels(self) -> int:
        lower, upper = self.state_bounds
        return upper - lower + 1


def reference_config() -> InventoryConfig:
    """Two products, uniform demand on 1..10, budget 10, discount 0.75."""
    pmf = np.zeros(11)
    pmf[1:] = 0.1
    return InventoryConfig(demand_pmfs=[pmf, pmf],
                           holding=np.array([1.0, 2.0]),
                           backlog=np.array([2.0, 3.0]),
                           resource=np.array([1.5, 1.0]),
                           budget=10.0, discount=0.75,
                           state_bounds=(-10, 10))


def reduced_config(budget: float = 10.0) -> InventoryConfig:
    """Small variant: bounds [-3, 3], demand uniform on {0, 1, 2}."""
    pmf = np.full(3, 1.0 / 3.0)
    return InventoryConfig(demand_pmfs=[pmf, pmf],
                           holding=np.array([1.0, 2.0]),
                           backlog=np.array([2.0, 3.0]),
                           resource=np.array([1.5, 1.0]),
                           budget=budget, discount=0.75,
                           state_bounds=(-3, 3))


def transition_levels(cfg: InventoryConfig, targets: np.ndarray,
                      demands: np.ndarray) -> np.ndarray:
    """Next inventory levels clamp(y - w) for integer-valued arrays."""
    lower, upper = cfg.state_bounds
    return np.clip(np.asarray(targets) - np.asarray(demands), lower, upper)


def realized_costs(cfg: InventoryConfig, targets: np.ndarray,
                   demands: np.ndarray):
    """Per-period cost and budget cost, summed over products.

    targets and demands have trailing axis n_products. The budget cost
    depends on the order-up-to levels only, never on the demand draw.
    """
    targets = np.asarray(targets, dtype=float)
    demands = np.asarray(demands, dtype=float)
    over = np.maximum(targets - demands, 0.0)
    short = np.maximum(demands - targets, 0.0)
    cost = over @ cfg.holding + short @ cfg.backlog
    aux = np.maximum(targets, 0.0) @ cfg.resource
    return cost, aux


def product_tables(cfg: InventoryConfig, product: int):
    """Action-indexed tables for one product.

    Returns (kernel2d, cost1d, link1d, mask2d): transition rows by target
    level, expected period cost and budget cost by target level, and the
    admissibility mask over (state, target) pairs.
    """
    grid = cfg.grid
    n = cfg.n_levels
    pmf = cfg.demand_pmfs[product]
    w_vals = np.arange(pmf.shape[0])
    lower, _ = cfg.state_bounds

    nxt = transition_levels(cfg, grid[:, None], w_vals[None, :])   # (n, W)
    kernel2d = np.zeros((n, n))
    rows = np.repeat(np.arange(n), w_vals.shape[0])
    np.add.at(kernel2d, (rows, (nxt - lower).ravel()),
              np.tile(pmf, n))

    over = np.maximum(grid[:, None] - w_vals[None, :], 0.0)
    short = np.maximum(w_vals[None, :] - grid[:, None], 0.0)
    cost1d = (cfg.holding[product] * over
              + cfg.backlog[product] * short) @ pmf
    link1d = cfg.resource[product] * np.maximum(grid, 0.0)

    mask2d = grid[None, :] >= grid[:, None]        # target >= current level
    if cfg.max_order is not None:
        mask2d = mask2d & (grid[None, :] - grid[:, None]
                           <= cfg.max_order[product])
    return kernel2d, cost1d, link1d, mask2d


def build_subproblem(cfg: InventoryConfig, product: int) -> SubProblem:
    kernel2d, cost1d, link1d, mask2d = product_tables(cfg, product)
    n = cfg.n_levels
    init = np.zeros(n)
    init[-cfg.state_bounds[0]] = 1.0               # zero inventory start
    return SubProblem(
        kernel=np.broadcast_to(kernel2d[None, :, :], (n, n, n)),
        cost=np.broadcast_to(cost1d[None, :], (n, n)),
        link_costs=np.broadcast_to(link1d[None, None, :], (1, n, n)),
        init_dist=init, cost_lower_bound=0.0, action_mask=mask2d)


def build_weakly_coupled(cfg: InventoryConfig) -> WeaklyCoupledCMDP:
    subs = [build_subproblem(cfg, i) for i in range(cfg.n_products)]
    return WeaklyCoupledCMDP(subproblems=subs,
                             thresholds=np.array([cfg.budget]),
                             discount=cfg.discount)


def state_index(cfg: InventoryConfig, levels) -> int:
    """Row-major joint index of a tuple of inventory levels."""
    lower, _ = cfg.state_bounds
    idx = 0
    for level in np.atleast_1d(levels):
        idx = idx * cfg.n_levels + (int(level) - lower)
    return idx


def index_levels(cfg: InventoryConfig, index: int) -> np.ndarray:
    lower, _ = cfg.state_bounds
    out = np.empty(cfg.n_products, dtype=int)
    for i in range(cfg.n_products - 1, -1, -1):
        out[i] = index % cfg.n_levels + lower
        index //= cfg.n_levels
    return out


def build_tabular(cfg: InventoryConfig) -> TabularCMDP:
    """Joint tabular instance over the product grid, for the LP oracle.

    All tables are broadcast views over action-indexed data, so memory is
    quadratic in the joint sizes, not cubic. Guarded on the number of
    admissible (state, action) pairs.
    """
    per_product = [product_tables(cfg, i) for i in range(cfg.n_products)]

    kernel2d = np.ones((1, 1))
    cost1d = np.zeros(1)
    link1d = np.zeros(1)
    mask = np.ones((1, 1), dtype=bool)
    for k2, c1, l1, m2 in per_product:
        n = c1.shape[0]
        kernel2d = np.einsum("av,bw->abvw", kernel2d, k2).reshape(
            kernel2d.shape[0] * n, kernel2d.shape[1] * n)
        cost1d = (cost1d[:, None] + c1[None, :]).reshape(-1)
        link1d = (link1d[:, None] + l1[None, :]).reshape(-1)
        mask = (mask[:, None, :, None] & m2[None, :, None, :]).reshape(
            mask.shape[0] * n, mask.shape[1] * n)

    n_joint = cost1d.shape[0]
    pairs = int(mask.sum())
    if pairs > MAX_TABULAR_PAIRS:
        raise ValueError(f"{pairs} admissible pairs exceed the "
                         f"{MAX_TABULAR_PAIRS} tabular guard")
    init = np.zeros(n_joint)
    init[state_index(cfg, np.zeros(cfg.n_products))] = 1.0
    return TabularCMDP(
        kernel=np.broadcast_to(kernel2d[None, :, :],
                               (n_joint, n_joint, n_joint)),
        cost=np.broadcast_to(cost1d[None, :], (n_joint, n_joint)),
        aux_costs=np.broadcast_to(link1d[None, None, :],
                                  (1, n_joint, n_joint)),
        thresholds=np.array([cfg.budget]), discount=cfg.discount,
        init_dist=init, cost_lower_bound=0.0, action_mask=mask)


class ProductInventoryEnv(sampling.VectorEnv):
    """Generative single-product environment with realized period costs.

    States and actions are grid indices (level - lower). Demand uses the
    purpose-keyed "demand" stream; when the bundle's antithetic flag is
    set, the underlying uniforms are mirrored (u -> 1 - u), which mirrors
    the demand draw for symmetric pmfs.
    """

    def __init__(self, cfg: InventoryConfig, product: int):
        self.cfg = cfg
        self.product = product
        self.discount = cfg.discount
        self.n_constraints = 1
        self.cost_lower_bound = 0.0
        self._cum_pmf = np.cumsum(cfg.demand_pmfs[product])
        self._w_vals = np.arange(cfg.demand_pmfs[product].shape[0])
        self._start = -cfg.state_bounds[0]

    def sample_initial(self, n: int, streams) -> np.ndarray:
        return np.full(n, self._start, dtype=int)

    def step(self, states, actions, streams):
        cfg = self.cfg
        lower, _ = cfg.state_bounds
        u = streams.get("demand").random(states.shape[0])
        if streams.antithetic:
            u = 1.0 - u
        cum = np.broadcast_to(self._cum_pmf, (states.shape[0],
                                              self._cum_pmf.shape[0]))
        w = self._w_vals[sampling._categorical_rows(cum, u)]
        targets = actions + lower
        h = cfg.holding[self.product]
        b = cfg.backlog[self.product]
        costs = (h * np.maximum(targets - w, 0.0)
                 + b * np.maximum(w - targets, 0.0))
        aux = (cfg.resource[self.product]
               * np.maximum(targets, 0.0))[:, None]
        nxt = transition_levels(cfg, targets, w) - lower
        return nxt, costs, aux


class InventorySubEvaluator:
    """Monte Carlo per-product evaluation for the decomposed solver.

    State-action values under the modified cost c_i + lam * b_i are
    estimated once per target level and broadcast across the states that
    admit it: the rollout from (s, y) does not depend on s, so every
    admissible row shares the same value. Each distinct entry still
    averages the full replication count.
    """

    def __init__(self, cfg: InventoryConfig, mc: sampling.MCConfig):
        self.cfg = cfg
        self.mc = mc
        self.envs = [ProductInventoryEnv(cfg, i)
                     for i in range(cfg.n_products)]
        self._masks = [product_tables(cfg, i)[3]
                       for i in range(cfg.n_products)]

    def __call__(self, index: int, policy: StationaryPolicy, lam: np.ndarray,
                 iteration: int = 0) -> SubEvaluation:
        env = self.envs[index]
        sampler = sampling.TabularPolicySampler(policy)
        n = self.cfg.n_levels
        targets = np.arange(n)
        starts = np.zeros(n, dtype=int)            # lowest level admits all
        q_est = sampling.estimate_q(
            env, sampler, lam, starts, targets, self.mc,
            context=f"p{index}/it{iteration}/q")
        q_table = np.where(self._masks[index], q_est.means[None, :], 0.0)
        ret = sampling.estimate_returns(env, sampler, self.mc,
                                        context=f"p{index}/it{iteration}/ret")
        return SubEvaluation(q_values=q_table, objective=ret.objective,
                             link_values=ret.constraints,
                             se_objective=ret.objective_se)


def never_order_policy(cfg: InventoryConfig) -> DecomposablePolicy:
    """Keep y = s for every product; from zero start its budget cost is 0,
    a strictly feasible point for any positive budget."""
    n = cfg.n_levels
    probs = np.eye(n)
    return DecomposablePolicy([StationaryPolicy(probs.copy())
                               for _ in range(cfg.n_products)])


def run_reference_experiment(schedule: Optional[pd.StepSchedule] = None,
                             seed: int = 0, iterations: int = 500,
                             config: Optional[InventoryConfig] = None,
                             mc: Optional[sampling.MCConfig] = None,
                             workers: Optional[int] = None):
    """Full sampling-based run on the two-product instance.

    Defaults follow the reference protocol: constant step 0.2, 500
    iterations, state-action values from 400 replications over 40 periods,
    multipliers started at zero, ball radius from the never-order Slater
    point with c_tilde = 0 and slack 1.

    Returns (DecomposedRunResult, summary dict). Reported cost scales:
    values are tracked normalized by (1 - gamma); the summary also carries
    the unnormalized equivalents (divided by 1 - gamma).
    """
    config = config or reference_config()
    schedule = schedule or pd.StepSchedule("constant", 0.2)
    mc = mc or sampling.MCConfig(replications=400, horizon=40, seed=seed,
                                 chunk_size=400)
    problem = build_weakly_coupled(config)
    evaluator = InventorySubEvaluator(config, mc)
    solver_cfg = pd.SolverConfig(
        schedule=schedule, iterations=iterations, seed=seed,
        evaluator="mc", mc=mc,
        slater_policy=never_order_policy(config), c_tilde=0.0,
        dual_slack=1.0)
    result = run_decomposed(problem, solver_cfg, evaluator=evaluator,
                            workers=workers)
    scale = 1.0 / (1.0 - config.discount)
    last = result.trail[-1]
    summary = {
        "iterations": iterations,
        "schedule": {"kind": schedule.kind, "base": schedule.base},
        "seed": seed,
        "final_running_avg_cost": last.running_avg_objective,
        "final_running_avg_cost_unnormalized":
            last.running_avg_objective * scale,
        "final_violation": last.running_violation,
        "final_violation_unnormalized": last.running_violation * scale,
        "final_objective": last.objective,
        "lambda_bar": result.lambda_bar.tolist(),
        "dual_radius_m": result.diagnostics["dual_radius_m"],
    }
    return result, summary
