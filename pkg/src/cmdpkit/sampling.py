"""Seeded Monte Carlo estimation over vectorized generative environments.

Randomness comes from counter-based Philox streams keyed by
(seed, chunk index, purpose tag), so draws for distinct purposes (demand,
arrivals, service, admission tie-breaks, policy sampling, transitions) and
distinct replication chunks are statistically independent and exactly
reproducible. Replications are simulated in fixed-size chunks; every
chain inside a chunk occupies disjoint counter positions of the chunk's
streams, which makes estimates for distinct query pairs independent.
Chunks may fan out to worker threads, and partial results are always
folded in chunk order, so totals are bit-identical for any worker count.

Estimated values carry the (1 - gamma) normalization used across the
package, and the horizon should satisfy gamma^horizon * range / (1 - gamma)
below the tolerated truncation bias.
"""

from __future__ import annotations

import math
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from .core import StationaryPolicy, TabularCMDP

WORKERS_ENV_VAR = "CMDP_PD_WORKERS"
DEFAULT_CHUNK = 64


def _tag(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def rng_stream(seed: int, index: int, purpose: str) -> np.random.Generator:
    """Independent reproducible generator for (seed, index, purpose)."""
    ss = np.random.SeedSequence([int(seed), int(index), _tag(purpose)])
    return np.random.Generator(np.random.Philox(ss))


class StreamBundle:
    """Lazily materialized purpose-keyed streams for one replication chunk."""

    def __init__(self, seed: int, index: int, context: str = "",
                 antithetic: bool = False):
        self.seed = seed
        self.index = index
        self.context = context
        self.antithetic = antithetic
        self._streams: dict = {}

    def get(self, purpose: str) -> np.random.Generator:
        if purpose not in self._streams:
            self._streams[purpose] = rng_stream(
                self.seed, self.index, f"{self.context}|{purpose}")
        return self._streams[purpose]


def env_workers(default: int = 1) -> int:
    """Worker count from the environment, used as the CLI fallback."""
    raw = os.environ.get(WORKERS_ENV_VAR)
    if raw is None:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        return default


@dataclass
class MCConfig:
    replications: int
    horizon: int
    seed: int
    antithetic: bool = False
    chunk_size: int = DEFAULT_CHUNK
    workers: int = field(default_factory=env_workers)

    def __post_init__(self):
        if self.replications < 2:
            raise ValueError("at least two replications are needed for standard errors")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")

    def truncation_bias(self, gamma: float, cost_range: float) -> float:
        return gamma ** self.horizon * cost_range / (1.0 - gamma)

    def check_truncation(self, gamma: float, cost_range: float, tol: float):
        bias = self.truncation_bias(gamma, cost_range)
        if bias > tol:
            raise ValueError(
                f"horizon {self.horizon} leaves truncation bias {bias:.3g} > {tol:g}")


def default_horizon(gamma: float, tail: float = 1e-4) -> int:
    """Smallest horizon with gamma^horizon <= tail."""
    return max(1, math.ceil(math.log(tail) / math.log(gamma)))


class VectorEnv:
    """Generative environment over batches of states.

    Subclasses fix a state array layout with a leading batch axis and
    declare ``discount``, ``n_constraints`` and a strict per-step
    ``cost_lower_bound``. ``step`` consumes purpose-keyed streams from a
    StreamBundle so that different noise sources never share draws.
    """

    discount: float
    n_constraints: int
    cost_lower_bound: float

    def sample_initial(self, n: int, streams: StreamBundle) -> np.ndarray:
        raise NotImplementedError

    def step(self, states: np.ndarray, actions: np.ndarray,
             streams: StreamBundle):
        """Advance one period; returns (next_states, costs, aux_costs)."""
        raise NotImplementedError


class PolicySampler(Protocol):
    def sample_actions(self, states: np.ndarray, streams: StreamBundle) -> np.ndarray:
        ...


def _categorical_rows(cum_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Index of the first cumulative entry exceeding u, rowwise."""
    idx = (cum_rows < u[:, None]).sum(axis=1)
    return np.minimum(idx, cum_rows.shape[1] - 1)


class TabularEnv(VectorEnv):
    """Generative wrapper around a tabular CMDP; states are row indices."""

    def __init__(self, cmdp: TabularCMDP):
        self.cmdp = cmdp
        self.discount = cmdp.discount
        self.n_constraints = cmdp.n_constraints
        self.cost_lower_bound = cmdp.cost_lower_bound
        self._cum_kernel = np.cumsum(cmdp.kernel, axis=2)
        self._cum_init = np.cumsum(cmdp.init_dist)

    def sample_initial(self, n: int, streams: StreamBundle) -> np.ndarray:
        u = streams.get("initial").random(n)
        return _categorical_rows(self._cum_init[None, :].repeat(n, axis=0), u)

    def step(self, states, actions, streams):
        u = streams.get("transition").random(states.shape[0])
        nxt = _categorical_rows(self._cum_kernel[states, actions], u)
        costs = self.cmdp.cost[states, actions]
        aux = self.cmdp.aux_costs[:, states, actions].T
        return nxt, costs, aux


class TabularPolicySampler:
    """Vectorized action sampling for a stationary tabular policy."""

    def __init__(self, policy: StationaryPolicy):
        self._cum = np.cumsum(policy.probs, axis=1)

    def sample_actions(self, states, streams):
        u = streams.get("policy").random(states.shape[0])
        return _categorical_rows(self._cum[states], u)


@dataclass
class QEstimate:
    means: np.ndarray
    ses: np.ndarray


@dataclass
class ReturnsEstimate:
    objective: float
    objective_se: float
    constraints: np.ndarray
    constraint_ses: np.ndarray


def _chunks(replications: int, chunk_size: int):
    out = []
    start = 0
    index = 0
    while start < replications:
        out.append((index, min(chunk_size, replications - start)))
        start += chunk_size
        index += 1
    return out


def _fold_chunks(cfg: MCConfig, worker):
    """Run per-chunk jobs (optionally on threads) and fold in chunk order."""
    plan = _chunks(cfg.replications, cfg.chunk_size)
    if cfg.workers > 1 and len(plan) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(lambda p: worker(*p), plan))
    else:
        results = [worker(*p) for p in plan]
    return results


def _tile(arr: np.ndarray, reps: int) -> np.ndarray:
    reps_shape = (reps,) + (1,) * (arr.ndim - 1)
    return np.tile(arr, reps_shape)


def estimate_q(env: VectorEnv, policy: PolicySampler, lam: np.ndarray,
               query_states: np.ndarray, query_actions: np.ndarray,
               cfg: MCConfig, *, thresholds: Optional[np.ndarray] = None,
               context: str = "q") -> QEstimate:
    """Monte Carlo state-action values under the multiplier-modified cost.

    Each query chain starts at its (state, action) pair and then follows
    the policy. The per-step cost is c + lam @ aux, minus lam @ thresholds
    when thresholds are given (the offset used by the joint Lagrangian).
    """
    gamma = env.discount
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    n_q = query_actions.shape[0]
    offset = 0.0 if thresholds is None else float(lam @ np.asarray(thresholds, dtype=float))

    def worker(chunk_index: int, reps: int):
        streams = StreamBundle(cfg.seed, chunk_index, context=context,
                               antithetic=cfg.antithetic)
        states = _tile(np.asarray(query_states), reps)
        actions = _tile(np.asarray(query_actions), reps)
        total = np.zeros(reps * n_q)
        for t in range(cfg.horizon):
            if t > 0:
                actions = policy.sample_actions(states, streams)
            states, costs, aux = env.step(states, actions, streams)
            total += (gamma ** t) * (costs + aux @ lam - offset)
        vals = (1.0 - gamma) * total.reshape(reps, n_q)
        return vals.sum(axis=0), np.square(vals).sum(axis=0), reps

    sums = np.zeros(n_q)
    sq_sums = np.zeros(n_q)
    for s1, s2, _ in _fold_chunks(cfg, worker):
        sums += s1
        sq_sums += s2
    r = cfg.replications
    means = sums / r
    var = np.maximum(sq_sums - r * means ** 2, 0.0) / (r - 1)
    return QEstimate(means=means, ses=np.sqrt(var / r))


def estimate_returns(env: VectorEnv, policy: PolicySampler, cfg: MCConfig,
                     *, context: str = "returns") -> ReturnsEstimate:
    """Objective and constraint values of a policy from fresh starts."""
    gamma = env.discount
    k = env.n_constraints

    def worker(chunk_index: int, reps: int):
        streams = StreamBundle(cfg.seed, chunk_index, context=context,
                               antithetic=cfg.antithetic)
        states = env.sample_initial(reps, streams)
        obj = np.zeros(reps)
        cons = np.zeros((reps, k))
        for t in range(cfg.horizon):
            actions = policy.sample_actions(states, streams)
            states, costs, aux = env.step(states, actions, streams)
            scale = gamma ** t
            obj += scale * costs
            cons += scale * aux
        obj *= (1.0 - gamma)
        cons *= (1.0 - gamma)
        return (obj.sum(), np.square(obj).sum(),
                cons.sum(axis=0), np.square(cons).sum(axis=0))

    s_obj = sq_obj = 0.0
    s_cons = np.zeros(k)
    sq_cons = np.zeros(k)
    for a, b, c, d in _fold_chunks(cfg, worker):
        s_obj += a
        sq_obj += b
        s_cons += c
        sq_cons += d
    r = cfg.replications
    mean_obj = s_obj / r
    var_obj = max(sq_obj - r * mean_obj ** 2, 0.0) / (r - 1)
    mean_cons = s_cons / r
    var_cons = np.maximum(sq_cons - r * mean_cons ** 2, 0.0) / (r - 1)
    return ReturnsEstimate(
        objective=float(mean_obj),
        objective_se=float(np.sqrt(var_obj / r)),
        constraints=mean_cons,
        constraint_ses=np.sqrt(var_cons / r),
    )


def estimate_constraints(env: VectorEnv, policy: PolicySampler,
                         cfg: MCConfig, *, context: str = "returns"):
    """Constraint values only; same draws as estimate_returns."""
    est = estimate_returns(env, policy, cfg, context=context)
    return est.constraints, est.constraint_ses
