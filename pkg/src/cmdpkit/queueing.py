"""Multi-class scheduling across shared server pools with overflow routing.

Each customer class has a dedicated (primary) pool but may overflow into
foreign pools at a per-assignment routing cost.  Arrivals are Poisson,
service completions are per-slot Binomial thinning of the busy servers.
The pool-capacity constraints couple the classes; the primal-dual solver
treats each class as a separate sub-problem priced by multipliers on the
pool capacities, with policies restricted to priority orderings over
pools and Q-functions approximated by quadratic value-function fits.

Evaluation of the relaxed policies on the real system routes conflicting
requests through an admission step that favours each pool's primary
class and admits a uniformly random subset of the overflow.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import primal_dual as pd
from . import transport
from .sampling import StreamBundle

#: Observed horizon used for each discount factor in the reference runs.
REFERENCE_HORIZONS = {0.9: 100, 0.95: 150, 0.99: 800}


@dataclass
class QueueConfig:
    """Scheduling instance: classes are rows, pools are columns."""

    arrival_rates: np.ndarray       # (I,) Poisson means, > 0
    service_probs: np.ndarray       # (I, J) per-slot completion probs in [0, 1]
    pool_sizes: np.ndarray          # (J,) server counts, >= 1
    holding: np.ndarray             # (I,) per-period waiting cost
    routing_costs: np.ndarray       # (I, J) one-off assignment cost
    discount: float
    init_queues: np.ndarray         # (I,)
    init_in_service: np.ndarray     # (I, J)
    horizon: int
    regime: str = "large"           # routing-cost label, informational

    def __post_init__(self):
        self.arrival_rates = np.asarray(self.arrival_rates, dtype=float)
        self.service_probs = np.asarray(self.service_probs, dtype=float)
        self.pool_sizes = np.asarray(self.pool_sizes, dtype=np.int64)
        self.holding = np.asarray(self.holding, dtype=float)
        self.routing_costs = np.asarray(self.routing_costs, dtype=float)
        self.init_queues = np.asarray(self.init_queues, dtype=np.int64)
        self.init_in_service = np.asarray(self.init_in_service, dtype=np.int64)
        i, j = self.service_probs.shape
        if self.arrival_rates.shape != (i,):
            raise ValueError("arrival_rates shape does not match service_probs rows")
        if np.any(self.arrival_rates <= 0):
            raise ValueError("arrival rates must be positive")
        if np.any(self.service_probs < 0) or np.any(self.service_probs > 1):
            raise ValueError("service probabilities must lie in [0, 1]")
        if self.pool_sizes.shape != (j,) or np.any(self.pool_sizes < 1):
            raise ValueError("pool sizes must be positive integers, one per pool")
        if self.holding.shape != (i,) or np.any(self.holding < 0):
            raise ValueError("holding costs must be nonnegative, one per class")
        if self.routing_costs.shape != (i, j):
            raise ValueError("routing_costs shape does not match service_probs")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        QueueState(self.init_queues, self.init_in_service).validate(self.pool_sizes)

    @property
    def n_classes(self) -> int:
        return self.service_probs.shape[0]

    @property
    def n_pools(self) -> int:
        return self.service_probs.shape[1]


@dataclass
class QueueState:
    """Queue lengths plus the in-service split of each class over pools."""

    queues: np.ndarray       # (I,)
    in_service: np.ndarray   # (I, J)

    def validate(self, pool_sizes) -> None:
        q = np.asarray(self.queues)
        z = np.asarray(self.in_service)
        if np.any(q < 0) or np.any(z < 0):
            raise ValueError("queue lengths and in-service counts must be nonnegative")
        busy = z.sum(axis=0)
        if np.any(busy > np.asarray(pool_sizes)):
            raise ValueError("in-service counts exceed a pool size")


LARGE_ROUTING = np.array([[0.0, 2.0, 2.0], [3.0, 0.0, 3.0], [1.0, 1.0, 0.0]])
SMALL_ROUTING = LARGE_ROUTING / 10.0


def reference_config(discount: float = 0.99, regime: str = "large") -> QueueConfig:
    """Three-class instance used for the benchmark comparison tables."""
    routing = {"large": LARGE_ROUTING, "small": SMALL_ROUTING}[regime]
    init_z = np.diag([20, 30, 40])
    return QueueConfig(
        arrival_rates=np.array([12.0, 16.0, 20.0]),
        service_probs=np.array(
            [[0.3, 0.25, 0.2], [0.15, 0.3, 0.2], [0.25, 0.1, 0.4]]
        ),
        pool_sizes=np.array([40, 50, 60]),
        holding=np.array([3.0, 2.0, 1.0]),
        routing_costs=routing,
        discount=discount,
        init_queues=np.array([50, 50, 50]),
        init_in_service=init_z,
        horizon=REFERENCE_HORIZONS.get(discount, 0) or _horizon_for(discount),
        regime=regime,
    )


def scaled_config(discount: float = 0.9, regime: str = "large") -> QueueConfig:
    """Tenth-scale variant with identical traffic intensities."""
    base = reference_config(discount=discount, regime=regime)
    return replace(
        base,
        arrival_rates=base.arrival_rates / 10.0,
        pool_sizes=np.array([4, 5, 6]),
        init_queues=np.array([5, 5, 5]),
        init_in_service=np.diag([2, 2, 3]),
        horizon=100,
    )


def _horizon_for(discount: float, tail: float = 1e-4) -> int:
    return int(np.ceil(np.log(tail) / np.log(discount)))


def traffic_intensities(cfg: QueueConfig) -> np.ndarray:
    """Per-class load against the primary pool: rate / (servers * speed)."""
    diag = np.diag(cfg.service_probs)
    return cfg.arrival_rates / (cfg.pool_sizes * diag)


# ---------------------------------------------------------------------------
# Priority actions


def priority_actions(primary: int, n_pools: int, pools=None) -> list[tuple[int, ...]]:
    """All priority orderings that start at the class's own pool.

    Each action is a tuple of 0-based pool indices terminated by -1 (wait):
    primary alone, primary plus one overflow pool, and primary plus every
    ordering of all overflow pools.
    """
    if pools is None:
        pools = range(n_pools)
    others = [j for j in pools if j != primary]
    actions = [(primary, -1)]
    actions.extend((primary, j, -1) for j in others)
    if len(others) > 1:
        actions.extend(
            (primary, *perm, -1) for perm in itertools.permutations(others)
        )
    # deduplicate while keeping order (single-overflow case)
    seen = []
    for a in actions:
        if a not in seen:
            seen.append(a)
    return seen


def apply_priority(queues, action, residuals) -> np.ndarray:
    """Greedy fill along the priority list, capped by residual pool space.

    queues: (n,) waiting counts; residuals: (n, J) free servers as seen by
    the class.  Customers past the -1 marker keep waiting.
    """
    queues = np.asarray(queues, dtype=np.int64)
    residuals = np.asarray(residuals, dtype=np.int64)
    assignment = np.zeros(residuals.shape, dtype=np.int64)
    remaining = queues.copy()
    for j in action:
        if j < 0:
            break
        take = np.minimum(remaining, residuals[..., j])
        take = np.maximum(take, 0)
        assignment[..., j] = take
        remaining = remaining - take
    return assignment


# ---------------------------------------------------------------------------
# Dynamics


def step_dynamics(arrival_rates, service_probs, queues, in_service, assignment,
                  streams: StreamBundle):
    """One slot: assigned customers start service, departures thin Z + U.

    Shapes are batch-first: queues (n, I), in_service (n, I, J),
    assignment (n, I, J).  Returns the next (queues, in_service).
    """
    queues = np.asarray(queues, dtype=np.int64)
    in_service = np.asarray(in_service, dtype=np.int64)
    assignment = np.asarray(assignment, dtype=np.int64)
    busy = in_service + assignment
    arrivals = streams.get("arrivals").poisson(
        np.broadcast_to(arrival_rates, queues.shape)
    )
    departures = streams.get("services").binomial(busy, service_probs)
    next_queues = queues + arrivals - assignment.sum(axis=-1)
    next_in_service = busy - departures
    return next_queues, next_in_service


def transition(cfg: QueueConfig, state: QueueState, assignment,
               streams: StreamBundle) -> QueueState:
    """Validated single-state step; rejects infeasible assignments."""
    assignment = np.asarray(assignment, dtype=np.int64)
    if np.any(assignment < 0):
        raise ValueError("assignments must be nonnegative")
    if np.any(assignment.sum(axis=-1) > np.asarray(state.queues)):
        raise ValueError("assignment exceeds a queue length")
    busy = np.asarray(state.in_service) + assignment
    if np.any(busy.sum(axis=0) > cfg.pool_sizes):
        raise ValueError("assignment exceeds a pool capacity")
    q, z = step_dynamics(
        cfg.arrival_rates, cfg.service_probs,
        state.queues[None], state.in_service[None], assignment[None], streams,
    )
    nxt = QueueState(q[0], z[0])
    nxt.validate(cfg.pool_sizes)
    return nxt


def period_cost(cfg: QueueConfig, queues, assignment) -> np.ndarray:
    """Holding on everyone waiting plus routing on fresh assignments."""
    hold = np.asarray(queues) @ cfg.holding
    route = np.einsum("...ij,ij->...", np.asarray(assignment, dtype=float),
                      cfg.routing_costs)
    return hold + route


# ---------------------------------------------------------------------------
# Benchmark index policies


def benchmark_weights(cfg: QueueConfig, kind: str, queues=None) -> np.ndarray:
    """Assignment weights for the two index benchmarks.

    "service_value" scores a class/pool pair by holding rate net of routing
    cost; "pressure" scales the holding rate by the current queue length.
    """
    if kind == "service_value":
        return cfg.holding[:, None] - cfg.routing_costs
    if kind == "pressure":
        q = np.asarray(queues, dtype=float)
        return cfg.holding[:, None] * q[:, None] - cfg.routing_costs
    raise ValueError(f"unknown benchmark kind {kind!r}")


def benchmark_assignment(weights, queues, in_service, pool_sizes) -> np.ndarray:
    """Max-weight feasible assignment for one state (exact transportation)."""
    residual = np.asarray(pool_sizes) - np.asarray(in_service).sum(axis=0)
    return transport.max_weight_assignment(
        np.asarray(weights, dtype=float),
        np.asarray(queues, dtype=np.int64),
        np.maximum(residual, 0),
    )


# ---------------------------------------------------------------------------
# Admission control for the relaxed policies


def feasibility_modification(requests, in_service, pool_sizes, rng) -> np.ndarray:
    """Trim per-pool requests to capacity, primary class first.

    requests: (n, I, J) desired assignments (row i is class i's request).
    Pool j's primary class is class j.  After the primary is served up to
    the free capacity, a uniformly random subset of the remaining requests
    is admitted; rejected customers keep waiting.
    """
    requests = np.asarray(requests, dtype=np.int64)
    in_service = np.asarray(in_service, dtype=np.int64)
    n, n_classes, n_pools = requests.shape
    admitted = np.zeros_like(requests)
    free = np.asarray(pool_sizes) - in_service.sum(axis=1)  # (n, J)
    for j in range(n_pools):
        cap = np.maximum(free[:, j], 0)
        take = np.minimum(requests[:, j, j], cap)
        admitted[:, j, j] = take
        cap = cap - take
        others = [i for i in range(n_classes) if i != j]
        total = requests[:, others, j].sum(axis=1)
        draw = np.minimum(cap, total)
        for i in others:
            good = requests[:, i, j]
            got = rng.hypergeometric(good, total - good, draw)
            admitted[:, i, j] = got
            draw = draw - got
            total = total - good
    return admitted


# ---------------------------------------------------------------------------
# Quadratic value-function approximation


def quadratic_features(states) -> np.ndarray:
    """Constant plus full outer product of the sub-state vector.

    A sub-state is (queue length, in-service counts per pool); the feature
    dimension is (J + 1)**2 + 1.
    """
    states = np.asarray(states, dtype=float)
    single = states.ndim == 1
    if single:
        states = states[None]
    outer = np.einsum("ni,nj->nij", states, states)
    feats = np.concatenate(
        [np.ones((states.shape[0], 1)), outer.reshape(states.shape[0], -1)],
        axis=1,
    )
    return feats[0] if single else feats


def ridge_fit(features, targets, ridge: float = 1e-6):
    """Least squares with a small ridge; returns (weights, in-sample RMSE)."""
    features = np.asarray(features, dtype=float)
    targets = np.asarray(targets, dtype=float)
    dim = features.shape[1]
    aug = np.vstack([features, np.sqrt(ridge) * np.eye(dim)])
    rhs = np.concatenate([targets, np.zeros(dim)])
    weights, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
    rmse = float(np.sqrt(np.mean((features @ weights - targets) ** 2)))
    return weights, rmse


# ---------------------------------------------------------------------------
# Per-class sub-problem


class ClassEnv:
    """One class's queue viewed against the full pool capacities."""

    def __init__(self, cfg: QueueConfig, index: int):
        self.cfg = cfg
        self.index = index
        self.rate = float(cfg.arrival_rates[index])
        self.mu = cfg.service_probs[index]
        self.hold = float(cfg.holding[index])
        self.route = cfg.routing_costs[index]
        self.n_pools = cfg.n_pools

    def initial(self, n: int):
        queues = np.full(n, self.cfg.init_queues[self.index], dtype=np.int64)
        in_service = np.tile(self.cfg.init_in_service[self.index], (n, 1))
        return queues, in_service

    def residuals(self, in_service) -> np.ndarray:
        # the sub-problem prices pool sharing through the multipliers,
        # so each class sees the full capacity net of its own servers
        return np.asarray(self.cfg.pool_sizes) - np.asarray(in_service)

    def step(self, queues, in_service, assignment, streams: StreamBundle):
        busy = in_service + assignment
        arrivals = streams.get("arrivals").poisson(self.rate, size=queues.shape)
        departures = streams.get("services").binomial(busy, self.mu)
        return queues + arrivals - assignment.sum(axis=-1), busy - departures

    def modified_cost(self, queues, assignment, busy, lam) -> np.ndarray:
        base = self.hold * queues + assignment @ self.route
        return base + busy @ np.asarray(lam, dtype=float)


@dataclass
class PriorityPolicy:
    """Softmax over priority actions with state-dependent quadratic scores.

    The log-probability of an action is -features(s) . weights[a]; the
    weights accumulate step * fitted-Q coefficients across iterations, so
    zero weights give the uniform policy.
    """

    actions: list[tuple[int, ...]]
    weights: np.ndarray  # (n_actions, feature_dim)

    def probs(self, features) -> np.ndarray:
        logits = -(np.atleast_2d(features) @ self.weights.T)
        logits -= logits.max(axis=1, keepdims=True)
        expl = np.exp(logits)
        return expl / expl.sum(axis=1, keepdims=True)

    def sample(self, features, rng) -> np.ndarray:
        p = self.probs(features)
        cum = np.cumsum(p, axis=1)
        u = rng.random(p.shape[0])
        return np.minimum((cum < u[:, None]).sum(axis=1), p.shape[1] - 1)

    def most_probable(self, features) -> np.ndarray:
        return self.probs(features).argmax(axis=1)


def uniform_priority_policy(cfg: QueueConfig, index: int) -> PriorityPolicy:
    actions = priority_actions(index, cfg.n_pools)
    dim = (cfg.n_pools + 1) ** 2 + 1
    return PriorityPolicy(actions, np.zeros((len(actions), dim)))


def _sub_states(queues, in_service) -> np.ndarray:
    return np.concatenate([queues[:, None], in_service], axis=1)


def _policy_assignments(env: ClassEnv, policy: PriorityPolicy, queues,
                        in_service, rng) -> np.ndarray:
    feats = quadratic_features(_sub_states(queues, in_service))
    idx = policy.sample(feats, rng)
    assignment = np.zeros_like(in_service)
    residual = env.residuals(in_service)
    for a, action in enumerate(policy.actions):
        mask = idx == a
        if mask.any():
            assignment[mask] = apply_priority(queues[mask], action,
                                              residual[mask])
    return assignment


def sample_states(env: ClassEnv, policy: PriorityPolicy, n_states: int,
                  streams: StreamBundle, burn_in: int = 10,
                  chains: int = 100) -> np.ndarray:
    """On-policy sub-states: parallel chains, recorded after a burn-in."""
    chains = min(chains, n_states)
    queues, in_service = env.initial(chains)
    rng = streams.get("policy")
    rounds = burn_in + int(np.ceil(n_states / chains))
    collected = []
    for t in range(rounds):
        if t >= burn_in:
            collected.append(_sub_states(queues, in_service))
        assignment = _policy_assignments(env, policy, queues, in_service, rng)
        queues, in_service = env.step(queues, in_service, assignment, streams)
    return np.concatenate(collected, axis=0)[:n_states]


def rollout_modified_q(env: ClassEnv, policy: PriorityPolicy, lam, states,
                       action: tuple[int, ...], horizon: int,
                       streams: StreamBundle, replications: int = 1) -> np.ndarray:
    """Normalized Q estimates: forced first action, then follow the policy.

    states: (m, J + 1) sub-states; returns (m,) averages over replications
    of (1 - gamma) * sum_t gamma^t (cost + lam . busy).
    """
    states = np.asarray(states, dtype=np.int64)
    m = states.shape[0]
    queues = np.tile(states[:, 0], replications)
    in_service = np.tile(states[:, 1:], (replications, 1))
    gamma = env.cfg.discount
    lam = np.asarray(lam, dtype=float)
    rng = streams.get("policy")
    total = np.zeros(queues.shape[0])
    for t in range(horizon):
        if t == 0:
            assignment = apply_priority(queues, action,
                                        env.residuals(in_service))
        else:
            assignment = _policy_assignments(env, policy, queues, in_service,
                                             rng)
        busy = in_service + assignment
        total += gamma**t * env.modified_cost(queues, assignment, busy, lam)
        queues, in_service = env.step(queues, in_service, assignment, streams)
    total *= 1.0 - gamma
    return total.reshape(replications, m).mean(axis=0)


@dataclass
class VFAFit:
    weights: np.ndarray
    in_sample_rmse: float


def fit_vfa(env: ClassEnv, policy: PriorityPolicy, lam, action: tuple[int, ...],
            streams: StreamBundle, *, states=None, n_states: int = 1000,
            horizon: int | None = None, replications: int = 1,
            ridge: float = 1e-6, q_estimator=None) -> VFAFit:
    """Fit quadratic weights to Q estimates at on-policy states."""
    if states is None:
        states = sample_states(env, policy, n_states, streams)
    if q_estimator is not None:
        targets = q_estimator(states, action)
    else:
        targets = rollout_modified_q(
            env, policy, lam, states, action,
            horizon if horizon is not None else env.cfg.horizon,
            streams, replications,
        )
    weights, rmse = ridge_fit(quadratic_features(states), targets, ridge)
    return VFAFit(weights, rmse)


def estimate_class_load(env: ClassEnv, policy: PriorityPolicy, horizon: int,
                        replications: int, streams: StreamBundle):
    """Normalized cost and per-pool busy-server usage under one policy.

    Returns (objective mean, objective se, usage means (J,), usage ses (J,)).
    """
    queues, in_service = env.initial(replications)
    gamma = env.cfg.discount
    rng = streams.get("policy")
    cost = np.zeros(replications)
    usage = np.zeros((replications, env.n_pools))
    for t in range(horizon):
        assignment = _policy_assignments(env, policy, queues, in_service, rng)
        busy = in_service + assignment
        cost += gamma**t * (env.hold * queues + assignment @ env.route)
        usage += gamma**t * busy
        queues, in_service = env.step(queues, in_service, assignment, streams)
    cost *= 1.0 - gamma
    usage *= 1.0 - gamma
    scale = np.sqrt(replications)
    return (
        float(cost.mean()), float(cost.std(ddof=1) / scale),
        usage.mean(axis=0), usage.std(axis=0, ddof=1) / scale,
    )


# ---------------------------------------------------------------------------
# Primal-dual training loop


@dataclass
class QueueExperimentConfig:
    """Training protocol for the coupled scheduling run."""

    iterations: int = 30
    step_size: float = 0.1
    lambda_init: tuple = (10.0, 10.0, 10.0)
    n_states: int = 1000
    q_replications: int = 1
    load_replications: int = 100
    burn_in: int = 10
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.step_size <= 0:
            raise ValueError("step size must be positive")
        if self.seed is None:
            raise ValueError("seed is required")


@dataclass
class QueueRunResult:
    policies: list[PriorityPolicy]
    trail: list[pd.IterationRecord]
    weight_history: list[list[np.ndarray]]   # per iteration, per class
    fit_rmse: list[list[float]]              # per iteration, per class (max over actions)
    averaged_weights: list[np.ndarray]

    def trail_schedule(self) -> np.ndarray:
        return np.array([rec.eta for rec in self.trail])


def _fit_class(env, policy, lam, states_streams, horizon, exp,
               iteration: int) -> tuple[np.ndarray, float]:
    states = sample_states(
        env, policy, exp.n_states, states_streams, burn_in=exp.burn_in
    )
    rows = []
    worst = 0.0
    for a, action in enumerate(policy.actions):
        fit = fit_vfa(
            env, policy, lam, action,
            StreamBundle(exp.seed, iteration,
                         f"queue/c{env.index}/it{iteration}/q{a}"),
            states=states, horizon=horizon,
            replications=exp.q_replications,
        )
        rows.append(fit.weights)
        worst = max(worst, fit.in_sample_rmse)
    return np.stack(rows), worst


def run_queue_experiment(cfg: QueueConfig, exp: QueueExperimentConfig) -> QueueRunResult:
    """Dual ascent on pool prices with per-class policy fits.

    Each iteration estimates every class's cost and busy-server usage,
    records the trail entry, then (except on the last iteration) moves the
    multipliers along the capacity violation and folds the fitted Q
    weights into each class's softmax scores.
    """
    envs = [ClassEnv(cfg, i) for i in range(cfg.n_classes)]
    policies = [uniform_priority_policy(cfg, i) for i in range(cfg.n_classes)]
    lam = np.asarray(exp.lambda_init, dtype=float)
    if lam.shape != (cfg.n_pools,):
        raise ValueError("lambda_init must have one entry per pool")
    thresholds = cfg.pool_sizes.astype(float)

    trail: list[pd.IterationRecord] = []
    weight_history: list[list[np.ndarray]] = []
    rmse_history: list[list[float]] = []
    sum_eta = 0.0
    avg_objective = 0.0
    avg_constraints = np.zeros(cfg.n_pools)
    sum_eta_viol = 0.0

    for m in range(exp.iterations):
        eta = exp.step_size
        loads = [
            estimate_class_load(
                env, policy, cfg.horizon, exp.load_replications,
                StreamBundle(exp.seed, m, f"queue/c{env.index}/it{m}/load"),
            )
            for env, policy in zip(envs, policies)
        ]
        objective = float(sum(load[0] for load in loads))
        se_objective = float(np.sqrt(sum(load[1] ** 2 for load in loads)))
        usage = np.sum([load[2] for load in loads], axis=0)

        sum_eta += eta
        w = eta / sum_eta
        avg_objective += w * (objective - avg_objective)
        avg_constraints += w * (usage - avg_constraints)
        sum_eta_viol += eta * pd.violation_norm(usage, thresholds)
        trail.append(pd.IterationRecord(
            m=m, eta=eta, lam=lam.copy(), objective=objective,
            constraint_vals=usage.copy(),
            running_avg_objective=avg_objective,
            running_violation=pd.violation_norm(avg_constraints, thresholds),
            se_objective=se_objective,
            running_violation_periter=sum_eta_viol / sum_eta,
        ))
        weight_history.append([p.weights.copy() for p in policies])

        if m == exp.iterations - 1:
            rmse_history.append([float("nan")] * cfg.n_classes)
            break

        def fit_one(i):
            return _fit_class(
                envs[i], policies[i], lam,
                StreamBundle(exp.seed, m, f"queue/c{i}/it{m}/states"),
                cfg.horizon, exp, m,
            )

        if exp.workers > 1:
            with ThreadPoolExecutor(max_workers=exp.workers) as pool:
                fits = list(pool.map(fit_one, range(cfg.n_classes)))
        else:
            fits = [fit_one(i) for i in range(cfg.n_classes)]
        rmse_history.append([f[1] for f in fits])

        lam = pd.project_lambda(lam + eta * (usage - thresholds), None)
        for policy, (q_weights, _) in zip(policies, fits):
            policy.weights = policy.weights + eta * q_weights

    etas = np.array([rec.eta for rec in trail])
    tilde = etas / etas.sum()
    averaged = [
        np.einsum("m,mad->ad", tilde, np.stack([w[i] for w in weight_history]))
        for i in range(cfg.n_classes)
    ]
    return QueueRunResult(policies, trail, weight_history, rmse_history, averaged)


# ---------------------------------------------------------------------------
# Joint-system evaluation


class PolicyActor:
    """Requests from per-class priority policies (own-servers view)."""

    def __init__(self, cfg: QueueConfig, policies: list[PriorityPolicy]):
        self.cfg = cfg
        self.policies = policies

    def requests(self, queues, in_service, rng) -> np.ndarray:
        out = np.zeros_like(in_service)
        pools = np.asarray(self.cfg.pool_sizes)
        for i, policy in enumerate(self.policies):
            q = queues[:, i]
            z = in_service[:, i]
            feats = quadratic_features(np.concatenate([q[:, None], z], axis=1))
            idx = policy.sample(feats, rng)
            residual = pools - z
            for a, action in enumerate(policy.actions):
                mask = idx == a
                if mask.any():
                    out[mask, i] = apply_priority(q[mask], action,
                                                  residual[mask])
        return out


class BenchmarkActor:
    """Requests from a max-weight index rule (exact transportation solve)."""

    def __init__(self, cfg: QueueConfig, kind: str):
        self.cfg = cfg
        self.kind = kind

    def requests(self, queues, in_service, rng) -> np.ndarray:
        out = np.zeros_like(in_service)
        for r in range(queues.shape[0]):
            weights = benchmark_weights(self.cfg, self.kind, queues[r])
            out[r] = benchmark_assignment(
                weights, queues[r], in_service[r], self.cfg.pool_sizes
            )
        return out


@dataclass
class EvalResult:
    mean: float
    se: float
    hard_violations: int
    costs: np.ndarray


def evaluate_joint(cfg: QueueConfig, actor, replications: int, seed: int,
                   *, context: str = "eval", horizon: int | None = None) -> EvalResult:
    """Simulate the coupled system with admission control; count violations.

    Costs are (1 - gamma)-normalized discounted sums; hard_violations counts
    post-admission states or assignments that break a queue or pool bound.
    """
    horizon = horizon if horizon is not None else cfg.horizon
    streams = StreamBundle(seed, 0, f"queue/{context}")
    rng = streams.get("admission")
    pools = np.asarray(cfg.pool_sizes)
    queues = np.tile(cfg.init_queues, (replications, 1))
    in_service = np.tile(cfg.init_in_service, (replications, 1, 1))
    gamma = cfg.discount
    costs = np.zeros(replications)
    violations = 0
    for t in range(horizon):
        requests = actor.requests(queues, in_service, streams.get("actor"))
        assignment = feasibility_modification(requests, in_service, pools, rng)
        violations += int((assignment.sum(axis=-1) > queues).sum())
        violations += int(
            ((in_service + assignment).sum(axis=1) > pools[None]).sum()
        )
        costs += gamma**t * period_cost(cfg, queues, assignment)
        queues, in_service = step_dynamics(
            cfg.arrival_rates, cfg.service_probs, queues, in_service,
            assignment, streams,
        )
        violations += int((queues < 0).sum())
        violations += int((in_service.sum(axis=1) > pools[None]).sum())
    costs *= 1.0 - gamma
    return EvalResult(
        mean=float(costs.mean()),
        se=float(costs.std(ddof=1) / np.sqrt(replications)),
        hard_violations=violations,
        costs=costs,
    )


# ---------------------------------------------------------------------------
# Policy structure diagnostics


def threshold_scan(cfg: QueueConfig, policy: PriorityPolicy, class_index: int,
                   primary_busy_values, queue_max: int = 200) -> np.ndarray:
    """Largest queue length with no overflow, per primary busy count.

    For each value z of the class's own in-service count at its primary
    pool (other pools empty), scan queue lengths upward and apply the most
    probable action; the threshold is the last length that routes nothing
    off-primary.  +inf means the policy never overflows in the range.
    """
    env = ClassEnv(cfg, class_index)
    out = []
    for z in primary_busy_values:
        in_service = np.zeros((queue_max + 1, cfg.n_pools), dtype=np.int64)
        in_service[:, class_index] = z
        queues = np.arange(queue_max + 1, dtype=np.int64)
        feats = quadratic_features(_sub_states(queues, in_service))
        idx = policy.most_probable(feats)
        residual = env.residuals(in_service)
        overflow = np.zeros(queue_max + 1, dtype=bool)
        for a, action in enumerate(policy.actions):
            mask = idx == a
            if mask.any():
                u = apply_priority(queues[mask], action, residual[mask])
                off = u.sum(axis=1) - u[:, class_index]
                overflow[mask] = off > 0
        hits = np.flatnonzero(overflow)
        out.append(float(hits[0] - 1) if hits.size else np.inf)
    return np.array(out)
