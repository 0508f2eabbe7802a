import numpy as np
import pytest

from cmdpkit import core, decomposition as dc, oracle, primal_dual as pd
from cmdpkit.fixtures import random_cmdp


def random_sub(rng, n_states=3, n_actions=2, n_links=1):
    cmdp = random_cmdp(rng, n_states=n_states, n_actions=n_actions,
                       n_constraints=n_links)
    return dc.SubProblem(kernel=cmdp.kernel, cost=cmdp.cost,
                         link_costs=cmdp.aux_costs, init_dist=cmdp.init_dist)


def coupled_problem(rng, n_subs=2, margin=0.3, discount=0.8, **kw):
    subs = [random_sub(rng, **kw) for _ in range(n_subs)]
    problem = dc.WeaklyCoupledCMDP(subproblems=subs,
                                   thresholds=np.zeros(subs[0].n_links),
                                   discount=discount)
    uniform = dc.uniform_decomposable_policy(problem)
    total = np.zeros(problem.n_constraints)
    for sub, part in zip(subs, uniform.parts):
        _, links = core.costs_of_policy(sub.as_cmdp(discount), part)
        total += links
    problem.thresholds = total + margin   # uniform product policy feasible
    return problem


def greedy_optimum(cmdp, lam):
    policy = core.uniform_policy(cmdp)
    mask = cmdp.mask()
    for _ in range(200):
        tables = core.evaluate_policy_exact(cmdp, policy, lam)
        q = np.where(mask, tables.q, np.inf)
        greedy = np.zeros_like(policy.probs)
        greedy[np.arange(cmdp.n_states), q.argmin(axis=1)] = 1.0
        if np.array_equal(greedy, policy.probs):
            break
        policy = core.StationaryPolicy(greedy)
    objective, _ = core.costs_of_policy(cmdp, policy)
    return objective


def test_single_subproblem_matches_joint_update():
    rng = np.random.default_rng(3)
    problem = coupled_problem(rng, n_subs=1)
    sub_cmdp = problem.subproblems[0].as_cmdp(problem.discount)
    policy = dc.uniform_decomposable_policy(problem)
    lam = np.array([0.7])
    evaluator = dc.ExactSubEvaluator(problem)
    updated = dc.decomposed_policy_update(problem, policy, lam, 0.5, evaluator)
    # direct softmax with the same modified cost (offset-free by invariance)
    tables = core.evaluate_policy_exact(sub_cmdp, policy.parts[0], lam)
    direct = pd.policy_update(policy.parts[0], tables.q, 0.5)
    assert np.allclose(updated.parts[0].probs, direct.probs, atol=1e-12)


def test_zero_step_leaves_parts_unchanged():
    rng = np.random.default_rng(5)
    problem = coupled_problem(rng, n_subs=2)
    policy = dc.uniform_decomposable_policy(problem)
    evaluator = dc.ExactSubEvaluator(problem)
    updated = dc.decomposed_policy_update(problem, policy, np.array([0.3]),
                                          0.0, evaluator)
    for before, after in zip(policy.parts, updated.parts):
        assert np.allclose(after.probs, before.probs, atol=1e-12)


def test_sub_q_additivity_on_product():
    rng = np.random.default_rng(11)
    problem = coupled_problem(rng, n_subs=2, n_states=4, n_actions=2)
    joint = dc.product_cmdp(problem)
    policy = dc.uniform_decomposable_policy(problem)
    lam = np.array([0.9])
    offset = float(lam @ problem.thresholds)
    joint_tables = core.evaluate_policy_exact(
        joint, dc.joint_policy(problem, policy), lam)
    sub_q = [core.evaluate_policy_exact(
        sub.as_cmdp(problem.discount), part, lam).q
        for sub, part in zip(problem.subproblems, policy.parts)]
    s2, a2 = problem.subproblems[1].n_states, problem.subproblems[1].n_actions
    for s1 in range(problem.subproblems[0].n_states):
        for u in range(s2):
            for a1 in range(problem.subproblems[0].n_actions):
                for b in range(a2):
                    want = sub_q[0][s1, a1] + sub_q[1][u, b] - offset
                    got = joint_tables.q[s1 * s2 + u, a1 * a2 + b]
                    assert got == pytest.approx(want, abs=1e-8)


def test_aggregated_subgradient_cases():
    rng = np.random.default_rng(17)
    problem = coupled_problem(rng, n_subs=2)
    policy = dc.uniform_decomposable_policy(problem)
    evaluator = dc.ExactSubEvaluator(problem)

    # matches the joint evaluation on the product MDP
    grad = dc.aggregated_subgradient(problem, policy, evaluator)
    joint = dc.product_cmdp(problem)
    _, joint_d = core.costs_of_policy(joint, dc.joint_policy(problem, policy))
    assert np.allclose(grad, joint_d - problem.thresholds, atol=1e-8)

    # doubling every link table doubles the aggregate term exactly
    doubled = dc.WeaklyCoupledCMDP(
        subproblems=[dc.SubProblem(kernel=s.kernel, cost=s.cost,
                                   link_costs=2.0 * s.link_costs,
                                   init_dist=s.init_dist)
                     for s in problem.subproblems],
        thresholds=problem.thresholds, discount=problem.discount)
    grad2 = dc.aggregated_subgradient(doubled, policy,
                                      dc.ExactSubEvaluator(doubled))
    assert np.allclose(grad2 + problem.thresholds,
                       2.0 * (grad + problem.thresholds), atol=1e-10)

    # zero link costs and zero thresholds give the zero vector
    zero = dc.WeaklyCoupledCMDP(
        subproblems=[dc.SubProblem(kernel=s.kernel, cost=s.cost,
                                   link_costs=np.zeros_like(s.link_costs),
                                   init_dist=s.init_dist)
                     for s in problem.subproblems],
        thresholds=np.zeros(1), discount=problem.discount)
    grad0 = dc.aggregated_subgradient(zero, policy, dc.ExactSubEvaluator(zero))
    assert np.allclose(grad0, 0.0, atol=1e-12)


def test_identical_subproblems_stay_symmetric():
    rng = np.random.default_rng(23)
    sub = random_sub(rng, n_states=3, n_actions=3)
    problem = dc.WeaklyCoupledCMDP(subproblems=[sub, sub],
                                   thresholds=np.zeros(1), discount=0.8)
    uniform = dc.uniform_decomposable_policy(problem)
    _, links = core.costs_of_policy(sub.as_cmdp(0.8), uniform.parts[0])
    problem.thresholds = 2.0 * links + 0.1
    cfg = pd.SolverConfig(schedule=pd.StepSchedule("constant", 0.3),
                          iterations=40, dual_radius=3.0)
    result = dc.run_decomposed(problem, cfg)
    for part_a, part_b in zip(result.mixing_parts[0].members,
                              result.mixing_parts[1].members):
        assert np.allclose(part_a.probs, part_b.probs, atol=1e-12)


def test_decomposed_matches_joint_run_per_iteration():
    rng = np.random.default_rng(29)
    problem = coupled_problem(rng, n_subs=2, n_states=3, n_actions=2,
                              margin=0.2)
    joint = dc.product_cmdp(problem)
    cfg = pd.SolverConfig(schedule=pd.StepSchedule("inverse_sqrt", 0.4),
                          iterations=25, dual_radius=4.0)
    dec = dc.run_decomposed(problem, cfg)
    jnt = pd.run(joint, cfg)
    for rec_d, rec_j in zip(dec.trail, jnt.trail):
        assert rec_d.objective == pytest.approx(rec_j.objective, abs=1e-8)
        assert np.allclose(rec_d.constraint_vals, rec_j.constraint_vals,
                           atol=1e-8)
        assert np.allclose(rec_d.lam, rec_j.lam, atol=1e-8)
        assert rec_d.running_avg_objective == pytest.approx(
            rec_j.running_avg_objective, abs=1e-8)
        assert rec_d.running_violation == pytest.approx(
            rec_j.running_violation, abs=1e-8)
    assert np.allclose(dec.lambda_bar, jnt.lambda_bar, atol=1e-8)


def test_vacuous_links_solve_each_sub_independently():
    rng = np.random.default_rng(31)
    problem = coupled_problem(rng, n_subs=2, n_states=3, n_actions=3,
                              discount=0.6)
    problem.thresholds = np.array([1e6])
    cfg = pd.SolverConfig(schedule=pd.StepSchedule("constant", 2.0),
                          iterations=300, dual_radius=1.0)
    result = dc.run_decomposed(problem, cfg)
    assert all(rec.lam == pytest.approx([0.0]) for rec in result.trail)
    want = sum(greedy_optimum(sub.as_cmdp(problem.discount), np.zeros(1))
               for sub in problem.subproblems)
    assert result.trail[-1].objective == pytest.approx(want, abs=1e-3)


def test_work_units_scale_linearly_in_subproblem_count():
    rng = np.random.default_rng(37)
    sub = random_sub(rng, n_states=4, n_actions=2)
    per_iter = {}
    for n_subs in (2, 4):
        problem = dc.WeaklyCoupledCMDP(subproblems=[sub] * n_subs,
                                       thresholds=np.zeros(1), discount=0.8)
        uniform = dc.uniform_decomposable_policy(problem)
        _, links = core.costs_of_policy(sub.as_cmdp(0.8), uniform.parts[0])
        problem.thresholds = n_subs * links + 0.1
        evaluator = dc.ExactSubEvaluator(problem)
        cfg = pd.SolverConfig(schedule=pd.StepSchedule("constant", 0.2),
                              iterations=6, dual_radius=2.0)
        dc.run_decomposed(problem, cfg, evaluator=evaluator)
        per_iter[n_subs] = evaluator.work_units / 6
    assert per_iter[4] <= 1.3 * 2 * per_iter[2]
    assert per_iter[4] >= 2 * per_iter[2] / 1.3


def test_evaluator_errors_carry_subproblem_index():
    rng = np.random.default_rng(41)
    problem = coupled_problem(rng, n_subs=2)
    policy = dc.uniform_decomposable_policy(problem)

    def broken(index, part, lam, iteration=0):
        if index == 1:
            raise ValueError("synthetic failure")
        return dc.ExactSubEvaluator(problem)(index, part, lam)

    with pytest.raises(RuntimeError, match="subproblem 1"):
        dc.decomposed_policy_update(problem, policy, np.zeros(1), 0.1, broken)


def test_product_guard():
    rng = np.random.default_rng(43)
    sub = random_sub(rng, n_states=25, n_actions=2)
    problem = dc.WeaklyCoupledCMDP(subproblems=[sub, sub, sub],
                                   thresholds=np.zeros(1), discount=0.9)
    with pytest.raises(ValueError, match="guard"):
        dc.product_cmdp(problem)


def test_dual_radius_resolution():
    rng = np.random.default_rng(47)
    problem = coupled_problem(rng, n_subs=2, margin=0.4)
    schedule = pd.StepSchedule("constant", 0.1)
    cfg = pd.SolverConfig(schedule=schedule, iterations=2, dual_radius=9.0)
    assert dc.resolve_dual_radius_decomposed(problem, cfg) == 9.0

    slater = dc.uniform_decomposable_policy(problem)
    cfg2 = pd.SolverConfig(schedule=schedule, iterations=2,
                           slater_policy=slater, c_tilde=0.0)
    m = dc.resolve_dual_radius_decomposed(problem, cfg2)
    assert m > 0.0
    joint = dc.product_cmdp(problem)
    obj, links = core.costs_of_policy(joint, dc.joint_policy(problem, slater))
    want = pd.slater_lambda_bound(0.0, obj, links, problem.thresholds)
    assert m == pytest.approx(want, abs=1e-8)

    cfg3 = pd.SolverConfig(schedule=schedule, iterations=2,
                           slater_policy=core.uniform_policy(joint))
    with pytest.raises(TypeError, match="Decomposable"):
        dc.resolve_dual_radius_decomposed(problem, cfg3)


def test_json_round_trip():
    rng = np.random.default_rng(53)
    problem = coupled_problem(rng, n_subs=2)
    payload = dc.to_json_dict(problem)
    assert payload["schema"] == "wc-cmdp-v1"
    back = dc.from_json_dict(payload)
    assert back.n_subproblems == 2
    assert np.allclose(back.thresholds, problem.thresholds)
    for orig, copy in zip(problem.subproblems, back.subproblems):
        assert np.array_equal(orig.kernel, copy.kernel)
        assert np.array_equal(orig.link_costs, copy.link_costs)
    with pytest.raises(ValueError, match="schema"):
        dc.from_json_dict({"schema": "other-v9"})


def test_first_trail_entry_matches_uniform_costs():
    rng = np.random.default_rng(59)
    problem = coupled_problem(rng, n_subs=3)
    cfg = pd.SolverConfig(schedule=pd.StepSchedule("constant", 0.1),
                          iterations=3, dual_radius=2.0)
    result = dc.run_decomposed(problem, cfg)
    want_obj = 0.0
    want_links = np.zeros(problem.n_constraints)
    for sub in problem.subproblems:
        cmdp = sub.as_cmdp(problem.discount)
        obj, links = core.costs_of_policy(cmdp, core.uniform_policy(cmdp))
        want_obj += obj
        want_links += links
    assert result.trail[0].objective == pytest.approx(want_obj, abs=1e-10)
    assert np.allclose(result.trail[0].constraint_vals, want_links, atol=1e-10)
