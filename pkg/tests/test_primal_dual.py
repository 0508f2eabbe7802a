import math

import numpy as np
import pytest

from cmdpkit import core, oracle, primal_dual as pd, sampling
from cmdpkit.fixtures import random_cmdp


def test_policy_update_hand_value():
    policy = core.StationaryPolicy(np.array([[0.5, 0.5]]))
    q = np.array([[0.0, math.log(4.0)]])
    new = pd.policy_update(policy, q, eta=1.0)
    # weights (0.5, 0.5/4) normalize to (0.8, 0.2)
    assert new.probs[0] == pytest.approx([0.8, 0.2], abs=1e-12)


def test_policy_update_preserves_support():
    policy = core.StationaryPolicy(np.array([[0.0, 1.0], [0.3, 0.7]]))
    q = np.array([[-50.0, 0.0], [0.0, 0.0]])
    new = pd.policy_update(policy, q, eta=2.0)
    assert new.probs[0, 0] == 0.0
    assert new.probs[0, 1] == 1.0
    assert new.probs.sum(axis=1) == pytest.approx([1.0, 1.0])


def test_policy_update_solves_regularized_subproblem():
    # minimizer of <q, p> + KL(p || pi)/eta over the simplex, vs a fine grid
    pi = np.array([0.6, 0.4])
    q = np.array([0.3, -0.2])
    eta = 0.7
    new = pd.policy_update(core.StationaryPolicy(pi[None, :]),
                           q[None, :], eta).probs[0]

    def objective(p):
        probs = np.array([p, 1.0 - p])
        kl = sum(x * math.log(x / y) for x, y in zip(probs, pi) if x > 0)
        return float(q @ probs) + kl / eta

    grid_best = min(objective(p) for p in np.arange(0.001, 1.0, 0.001))
    assert objective(new[0]) <= grid_best + 1e-5


def test_projection_hand_cases_and_idempotence():
    assert np.allclose(pd.project_lambda(np.array([3.0, 4.0]), 2.0),
                       [1.2, 1.6])
    assert np.allclose(pd.project_lambda(np.array([-1.0, 1.0]), None),
                       [0.0, 1.0])
    assert np.allclose(pd.project_lambda(np.array([-2.0, 0.5]), 10.0),
                       [0.0, 0.5])
    rng = np.random.default_rng(2)
    for _ in range(50):
        v = rng.normal(size=3) * 5
        once = pd.project_lambda(v, 1.7)
        twice = pd.project_lambda(once, 1.7)
        # rescaling can leave the norm one ulp over the radius
        assert np.allclose(twice, once, rtol=0.0, atol=1e-14)
        assert np.linalg.norm(once) <= 1.7 * (1.0 + 1e-15)


def test_projection_is_nearest_feasible_point():
    rng = np.random.default_rng(8)
    radius = 2.0
    for _ in range(20):
        v = rng.normal(size=3) * 4
        proj = pd.project_lambda(v, radius)
        d_proj = np.linalg.norm(v - proj)
        w = np.abs(rng.normal(size=(500, 3)))
        norms = np.linalg.norm(w, axis=1, keepdims=True)
        w = np.where(norms > radius, w * (radius / norms), w)
        assert (np.linalg.norm(v - w, axis=1) >= d_proj - 1e-12).all()


def test_schedules_and_kappas():
    const = pd.StepSchedule("constant", 0.2)
    assert const.eta(0) == const.eta(7) == 0.2
    dec = pd.StepSchedule("inverse_sqrt", 0.2)
    assert dec.eta(0) == pytest.approx(0.2)
    assert dec.eta(3) == pytest.approx(0.1)
    assert np.allclose(dec.etas(4), [0.2, 0.2 / math.sqrt(2),
                                     0.2 / math.sqrt(3), 0.1])
    with pytest.raises(ValueError):
        pd.StepSchedule("linear", 0.1)

    horizons = [100, 1000, 10_000]
    k1, k2 = pd.schedule_kappas(dec, horizons)
    for T in horizons:
        etas = dec.etas(T)
        assert etas.sum() >= k1 * math.sqrt(T) - 1e-12
        assert (etas ** 2).sum() <= k2 * math.log(T) + 1e-12


def test_slater_bound_hand_value_and_errors():
    bound = pd.slater_lambda_bound(0.0, 2.0, np.array([0.5]), np.array([1.0]))
    assert bound == pytest.approx(4.0)
    with pytest.raises(ValueError, match="strictly feasible"):
        pd.slater_lambda_bound(0.0, 2.0, np.array([1.0]), np.array([1.0]))
    with pytest.raises(ValueError, match="c_tilde"):
        pd.slater_lambda_bound(3.0, 2.0, np.array([0.5]), np.array([1.0]))


def test_theorem_bounds_constant_schedule_spot_value():
    consts = pd.TheoremConstants(g_bound=2.0, phi0=0.7, discount=0.5,
                                 lambda_star_norm=3.0, lambda0_norm=1.0)
    bounds = pd.theorem1_bounds(consts, pd.StepSchedule("constant", 0.1),
                                T=10, slack=1.0)
    want_violation = (4.0 + 0.7 / 0.5) / (2.0 * 10 * 0.1) \
        + (0.5 + 1.0 / 4.0) * 4.0 * 0.1 / 2.0
    want_gap = (0.7 / 0.5 + 0.5) / (10 * 0.1) + 5.0 * 4.0 * 0.1 / 4.0
    assert bounds.violation == pytest.approx(want_violation, rel=1e-12)
    assert bounds.gap_upper == pytest.approx(want_gap, rel=1e-12)
    assert bounds.gap_lower == pytest.approx(-3.0 * want_violation, rel=1e-12)


def test_theorem_bounds_decreasing_schedule_spot_value():
    consts = pd.TheoremConstants(g_bound=2.0, phi0=0.7, discount=0.5,
                                 kappa1=1.5, kappa2=1.2,
                                 lambda_star_norm=3.0, lambda0_norm=1.0)
    bounds = pd.theorem1_bounds(consts, pd.StepSchedule("inverse_sqrt", 0.3),
                                T=100, slack=1.0)
    log_t = math.log(100.0)
    want_violation = (4.0 * (1.0 + 0.75 * log_t) + 0.7) / (2.0 * 0.5 * 1.5 * 10.0)
    want_gap = (2.5 * 1.2 * log_t + 0.7 + 0.5) / (0.5 * 1.5 * 10.0)
    assert bounds.violation == pytest.approx(want_violation, rel=1e-12)
    assert bounds.gap_upper == pytest.approx(want_gap, rel=1e-12)
    assert bounds.gap_lower == pytest.approx(-3.0 * want_violation, rel=1e-12)


def test_dual_state_validation_and_update():
    with pytest.raises(ValueError, match="nonnegative"):
        pd.DualState(lam=np.array([-0.1]))
    with pytest.raises(ValueError, match="ball"):
        pd.DualState(lam=np.array([3.0, 4.0]), radius=4.0)
    state = pd.DualState(lam=np.array([1.0]), radius=2.0)
    new = pd.dual_update(state, np.array([5.0]), eta=1.0)
    assert new.lam == pytest.approx([2.0])      # clipped to the ball
    new2 = pd.dual_update(state, np.array([-5.0]), eta=1.0)
    assert new2.lam == pytest.approx([0.0])


def test_violation_norm():
    q = np.array([1.0, 2.0])
    assert pd.violation_norm(np.array([0.5, 1.0]), q) == 0.0
    assert pd.violation_norm(np.array([2.0, 2.0]), q) == pytest.approx(1.0)
    assert pd.violation_norm(np.array([2.0, 3.0]), q) == pytest.approx(math.sqrt(2))


def test_resolve_dual_radius_paths():
    rng = np.random.default_rng(3)
    cmdp = random_cmdp(rng, n_states=3, n_actions=2)
    schedule = pd.StepSchedule("constant", 0.1)
    cfg = pd.SolverConfig(schedule=schedule, iterations=2, dual_radius=7.5)
    assert pd.resolve_dual_radius(cmdp, cfg) == 7.5

    slater = core.uniform_policy(cmdp)    # feasible with strict margin
    cfg2 = pd.SolverConfig(schedule=schedule, iterations=2,
                           slater_policy=slater, c_tilde=0.0)
    objective, constraints = core.costs_of_policy(cmdp, slater)
    want = pd.slater_lambda_bound(0.0, objective, constraints, cmdp.thresholds)
    assert pd.resolve_dual_radius(cmdp, cfg2) == pytest.approx(want)

    cfg3 = pd.SolverConfig(schedule=schedule, iterations=2)
    with pytest.raises(ValueError, match="dual_radius"):
        pd.resolve_dual_radius(cmdp, cfg3)


def test_single_iteration_run_is_degenerate():
    rng = np.random.default_rng(5)
    cmdp = random_cmdp(rng, n_states=3, n_actions=2)
    cfg = pd.SolverConfig(schedule=pd.StepSchedule("constant", 0.1),
                          iterations=1, dual_radius=5.0,
                          initial_lambda=np.array([0.25]))
    result = pd.run(cmdp, cfg)
    assert len(result.trail) == 1
    rec = result.trail[0]
    assert rec.m == 0
    assert rec.lam == pytest.approx([0.25])
    assert result.lambda_bar == pytest.approx([0.25])
    assert rec.running_avg_objective == pytest.approx(rec.objective)
    uniform = core.uniform_policy(cmdp)
    assert np.allclose(result.mixing_policy.members[0].probs, uniform.probs)


def test_vacuous_constraints_recover_unconstrained_optimum():
    rng = np.random.default_rng(13)
    cmdp = random_cmdp(rng, n_states=3, n_actions=3, discount=0.6)
    cmdp.thresholds = np.array([1e6])
    cfg = pd.SolverConfig(schedule=pd.StepSchedule("constant", 2.0),
                          iterations=300, dual_radius=1.0)
    result = pd.run(cmdp, cfg)
    assert all(rec.lam == pytest.approx([0.0]) for rec in result.trail)
    sol = oracle.solve_lp(cmdp)
    final = result.trail[-1].objective
    assert final == pytest.approx(sol.c_star, abs=1e-3)


def test_trail_running_averages_consistent():
    rng = np.random.default_rng(19)
    cmdp = random_cmdp(rng, n_states=4, n_actions=2, n_constraints=2)
    cfg = pd.SolverConfig(schedule=pd.StepSchedule("inverse_sqrt", 0.4),
                          iterations=25, dual_radius=3.0)
    result = pd.run(cmdp, cfg)
    etas = np.array([rec.eta for rec in result.trail])
    objs = np.array([rec.objective for rec in result.trail])
    cons = np.stack([rec.constraint_vals for rec in result.trail])
    for m, rec in enumerate(result.trail):
        w = etas[: m + 1] / etas[: m + 1].sum()
        assert rec.running_avg_objective == pytest.approx(w @ objs[: m + 1],
                                                          abs=1e-12)
        avg_cons = w @ cons[: m + 1]
        assert rec.running_violation == pytest.approx(
            pd.violation_norm(avg_cons, cmdp.thresholds), abs=1e-12)
        periter = sum(wi * pd.violation_norm(c, cmdp.thresholds)
                      for wi, c in zip(w, cons[: m + 1]))
        assert rec.running_violation_periter == pytest.approx(periter, abs=1e-12)


def test_mixture_policy_attains_trail_averages():
    # the returned mixture's exact costs equal the step-weighted averages
    rng = np.random.default_rng(23)
    cmdp = random_cmdp(rng, n_states=4, n_actions=3, n_constraints=2)
    cfg = pd.SolverConfig(schedule=pd.StepSchedule("inverse_sqrt", 0.3),
                          iterations=15, dual_radius=2.0)
    result = pd.run(cmdp, cfg)
    objective, constraints = core.costs_of_policy(cmdp, result.mixing_policy)
    assert objective == pytest.approx(result.trail[-1].running_avg_objective,
                                      abs=1e-10)
    etas = np.array([rec.eta for rec in result.trail])
    w = etas / etas.sum()
    cons = np.stack([rec.constraint_vals for rec in result.trail])
    assert np.allclose(constraints, w @ cons, atol=1e-10)
    # stationary equivalent preserves the same occupation measure
    obj2, cons2 = core.costs_of_policy(cmdp, result.stationary_equivalent)
    assert obj2 == pytest.approx(objective, abs=1e-9)
    assert np.allclose(cons2, constraints, atol=1e-9)


def test_exact_run_converges_on_constrained_instance():
    rng = np.random.default_rng(29)
    cmdp = random_cmdp(rng, n_states=4, n_actions=3, discount=0.6,
                       slater_margin=0.2)
    sol = oracle.solve_lp(cmdp)
    cfg = pd.SolverConfig(schedule=pd.StepSchedule("constant", 0.05),
                          iterations=3000,
                          slater_policy=core.uniform_policy(cmdp),
                          c_tilde=0.0)
    result = pd.run(cmdp, cfg)
    last = result.trail[-1]
    assert last.running_violation <= 0.05
    gap = last.running_avg_objective - sol.c_star
    assert -0.1 <= gap <= 0.15


def test_runs_are_deterministic():
    rng = np.random.default_rng(31)
    cmdp = random_cmdp(rng, n_states=3, n_actions=2)
    mc = sampling.MCConfig(replications=64, horizon=30, seed=7)
    cfg = pd.SolverConfig(schedule=pd.StepSchedule("constant", 0.1),
                          iterations=4, dual_radius=2.0, evaluator="mc", mc=mc)
    first = pd.run(cmdp, cfg)
    second = pd.run(cmdp, cfg)
    for a, b in zip(first.trail, second.trail):
        assert a.objective == b.objective
        assert np.array_equal(a.constraint_vals, b.constraint_vals)
        assert np.array_equal(a.lam, b.lam)
    assert first.trail[0].se_objective > 0.0


def test_mc_evaluator_requires_config():
    with pytest.raises(ValueError, match="MCConfig"):
        pd.SolverConfig(schedule=pd.StepSchedule("constant", 0.1),
                        iterations=2, evaluator="mc")
