import numpy as np
import pytest

from cmdpkit import core, sampling
from cmdpkit.fixtures import random_cmdp, random_policy


def test_streams_deterministic_and_disjoint():
    a1 = sampling.rng_stream(7, 3, "transition").random(8)
    a2 = sampling.rng_stream(7, 3, "transition").random(8)
    assert np.array_equal(a1, a2)
    b = sampling.rng_stream(7, 4, "transition").random(8)
    c = sampling.rng_stream(7, 3, "policy").random(8)
    d = sampling.rng_stream(8, 3, "transition").random(8)
    for other in (b, c, d):
        assert not np.array_equal(a1, other)


def test_stream_uniformity():
    # chi-square with 100 cells; 148.23 is the 0.999 quantile at 99 dof
    u = sampling.rng_stream(123, 0, "uniformity").random(1_000_000)
    counts, _ = np.histogram(u, bins=100, range=(0.0, 1.0))
    expected = 10_000.0
    stat = ((counts - expected) ** 2 / expected).sum()
    assert stat < 148.23


def test_bundle_caches_per_purpose():
    bundle = sampling.StreamBundle(seed=5, index=2, context="chunk0")
    g1 = bundle.get("transition")
    g2 = bundle.get("transition")
    assert g1 is g2
    assert bundle.get("policy") is not g1


def single_state_env(gamma):
    kernel = np.ones((1, 1, 1))
    cmdp = core.TabularCMDP(kernel=kernel, cost=np.array([[5.0]]),
                            aux_costs=np.array([[[2.0]]]),
                            thresholds=np.array([3.0]), discount=gamma,
                            init_dist=np.array([1.0]), cost_lower_bound=0.0)
    return cmdp


def test_single_state_exact_truncated_value():
    # constant cost 5: (1-g) * sum_{t<h} g^t * 5 = 5 * (1 - g**h)
    gamma, horizon = 0.9, 25
    cmdp = single_state_env(gamma)
    env = sampling.TabularEnv(cmdp)
    policy = sampling.TabularPolicySampler(core.uniform_policy(cmdp))
    cfg = sampling.MCConfig(replications=4, horizon=horizon, seed=0)
    est = sampling.estimate_returns(env, policy, cfg)
    want = 5.0 * (1.0 - gamma ** horizon)
    assert est.objective == pytest.approx(want, abs=1e-12)
    assert est.constraints[0] == pytest.approx(2.0 / 5.0 * want, abs=1e-12)
    assert est.objective_se == pytest.approx(0.0, abs=1e-15)


def test_mc_matches_exact_within_three_se():
    rng = np.random.default_rng(11)
    for trial in range(4):
        cmdp = random_cmdp(rng, n_states=4, n_actions=3, n_constraints=2,
                           discount=0.8)
        policy = random_policy(rng, cmdp)
        objective, constraints = core.costs_of_policy(cmdp, policy)
        env = sampling.TabularEnv(cmdp)
        sampler = sampling.TabularPolicySampler(policy)
        cfg = sampling.MCConfig(replications=3000,
                                horizon=sampling.default_horizon(0.8),
                                seed=100 + trial)
        est = sampling.estimate_returns(env, sampler, cfg)
        assert abs(est.objective - objective) < 3.0 * est.objective_se + 1e-9
        for k in range(2):
            margin = 3.0 * est.constraint_ses[k] + 1e-9
            assert abs(est.constraints[k] - constraints[k]) < margin


def test_se_scales_with_replications():
    rng = np.random.default_rng(17)
    cmdp = random_cmdp(rng, n_states=5, n_actions=2, discount=0.7)
    policy = random_policy(rng, cmdp)
    env = sampling.TabularEnv(cmdp)
    sampler = sampling.TabularPolicySampler(policy)
    ses = []
    for reps in (2000, 8000):
        cfg = sampling.MCConfig(replications=reps, horizon=40, seed=3)
        ses.append(sampling.estimate_returns(env, sampler, cfg).objective_se)
    ratio = ses[0] / ses[1]
    assert 1.6 < ratio < 2.4          # expect ~2 with independent streams


def test_worker_count_does_not_change_draws():
    rng = np.random.default_rng(23)
    cmdp = random_cmdp(rng, n_states=4, n_actions=2, discount=0.85)
    policy = random_policy(rng, cmdp)
    env = sampling.TabularEnv(cmdp)
    sampler = sampling.TabularPolicySampler(policy)
    results = []
    for workers in (1, 3):
        cfg = sampling.MCConfig(replications=500, horizon=30, seed=9,
                                workers=workers)
        est = sampling.estimate_returns(env, sampler, cfg)
        results.append((est.objective, est.objective_se,
                        tuple(est.constraints)))
    assert results[0] == results[1]


def test_q_estimate_matches_exact():
    rng = np.random.default_rng(29)
    cmdp = random_cmdp(rng, n_states=3, n_actions=2, discount=0.75)
    policy = random_policy(rng, cmdp)
    lam = np.array([0.4])
    tables = core.evaluate_policy_exact(cmdp, policy, lam)
    env = sampling.TabularEnv(cmdp)
    sampler = sampling.TabularPolicySampler(policy)
    states = np.array([0, 1, 2, 0, 1, 2])
    actions = np.array([0, 0, 0, 1, 1, 1])
    cfg = sampling.MCConfig(replications=4000,
                            horizon=sampling.default_horizon(0.75), seed=31)
    est = sampling.estimate_q(env, sampler, lam, states, actions, cfg,
                              thresholds=cmdp.thresholds)
    for i in range(6):
        exact = tables.q[states[i], actions[i]]
        assert abs(est.means[i] - exact) < 3.0 * est.ses[i] + 1e-9


def test_truncation_check_raises():
    cfg = sampling.MCConfig(replications=2, horizon=5, seed=0)
    assert cfg.truncation_bias(0.5, 1.0) == pytest.approx(0.5 ** 5 / 0.5)
    with pytest.raises(ValueError, match="truncation"):
        cfg.check_truncation(0.999, 5.0, tol=1e-3)
    cfg.check_truncation(0.5, 1.0, tol=0.1)   # passes quietly


def test_default_horizon_reaches_tail():
    for gamma in (0.75, 0.9, 0.99):
        h = sampling.default_horizon(gamma, tail=1e-4)
        assert gamma ** h <= 1e-4 < gamma ** (h - 1)
