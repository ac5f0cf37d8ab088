import numpy as np
import pytest

from mcopi import (NonContractive, StructureViolation, analyze, apply_bellman,
                   apply_policy_bellman, evaluate_policy_exact, greedy_policy,
                   policy_iteration, reach_probabilities, value_iteration)
from conftest import (build_mdp, chain_mdp, delta_dist, random_dag_mdp,
                      random_dense_mdp)


def test_policy_backup_zero_value_reduces_to_costs():
    mdp, _ = chain_mdp()
    mu = np.zeros(3, dtype=int)
    out = apply_policy_bellman(mdp, mu, np.zeros(3))
    assert np.array_equal(out, [0.0, 1.0, 2.0])


def test_policy_backup_fixed_point_of_self_loop():
    mdp = build_mdp({0: [(1.0, {0: 1.0})]}, alpha=0.9)
    out = apply_policy_bellman(mdp, [0], np.array([10.0]))
    assert out[0] == pytest.approx(10.0, abs=1e-12)


def test_policy_backup_hand_value():
    mdp, _ = chain_mdp()
    out = apply_policy_bellman(mdp, [0, 0, 0], np.array([0.0, 1.0, 0.0]))
    assert out[2] == pytest.approx(2.9, abs=1e-12)


def test_optimal_backup_single_action_matches_policy_backup():
    mdp, _ = chain_mdp()
    J = np.array([0.3, 1.7, 0.2])
    TJ, greedy = apply_bellman(mdp, J)
    assert np.array_equal(TJ, apply_policy_bellman(mdp, greedy, J))
    assert np.array_equal(greedy, [0, 0, 0])


def test_tie_breaks_to_lowest_action_index():
    mdp = build_mdp({0: [(3.0, {0: 1.0}), (3.0, {0: 1.0})]}, alpha=0.5)
    _, greedy = apply_bellman(mdp, np.zeros(1))
    assert greedy[0] == 0


def test_strict_minimum_selected():
    mdp = build_mdp({0: [(2.5, {0: 1.0}), (2.4, {0: 1.0})]}, alpha=0.5)
    TJ, greedy = apply_bellman(mdp, np.zeros(1))
    assert greedy[0] == 1
    assert TJ[0] == 2.4


def test_evaluate_chain_by_hand():
    mdp, _ = chain_mdp()
    J = evaluate_policy_exact(mdp, [0, 0, 0])
    assert np.allclose(J, [0.0, 1.0, 2.9], atol=1e-12)


def test_evaluate_self_loop_geometric_series():
    mdp = build_mdp({0: [(1.0, {0: 1.0})]}, alpha=0.9)
    assert evaluate_policy_exact(mdp, [0])[0] == pytest.approx(10.0, abs=1e-9)


def test_evaluate_zero_costs():
    mdp, _ = chain_mdp(costs=(0.0, 0.0, 0.0))
    assert np.allclose(evaluate_policy_exact(mdp, [0, 0, 0]), 0.0, atol=1e-14)


def test_evaluate_ssp_backward_substitution():
    mdp, _ = chain_mdp(alpha=None, problem_class="ssp")
    J = evaluate_policy_exact(mdp, [0, 0, 0])
    assert np.array_equal(J, [0.0, 1.0, 3.0])


def test_evaluate_undiscounted_rejects_cycles():
    mdp = build_mdp({
        0: [(0.0, {0: 1.0})],
        1: [(1.0, {2: 0.5, 0: 0.5})],
        2: [(1.0, {1: 1.0})],
    }, problem_class="ssp", alpha=None)
    with pytest.raises(NonContractive):
        evaluate_policy_exact(mdp, [0, 0, 0])


def test_evaluate_undiscounted_rejects_costly_recurrence():
    mdp, _ = chain_mdp(alpha=None, problem_class="ssp", costs=(1.0, 1.0, 1.0))
    with pytest.raises(NonContractive):
        evaluate_policy_exact(mdp, [0, 0, 0])


def test_value_iteration_one_policy_matches_evaluation():
    mdp, _ = chain_mdp()
    assert np.allclose(value_iteration(mdp, tol=1e-10),
                       evaluate_policy_exact(mdp, [0, 0, 0]), atol=1e-9)


def test_value_iteration_zero_costs():
    mdp, _ = chain_mdp(costs=(0.0, 0.0, 0.0))
    assert np.allclose(value_iteration(mdp), 0.0, atol=1e-12)


def test_cross_oracle_agreement_on_random_dags():
    rng = np.random.default_rng(3)
    for _ in range(20):
        mdp, _ = random_dag_mdp(rng, 10, max_actions=3)
        vi = value_iteration(mdp, tol=1e-10)
        pi, _, _ = policy_iteration(mdp)
        assert np.max(np.abs(vi - pi)) < 1e-8


def test_policy_iteration_one_policy_single_round():
    mdp, _ = chain_mdp()
    J, mu, sets = policy_iteration(mdp)
    assert np.allclose(J, [0.0, 1.0, 2.9], atol=1e-9)
    assert sets.sets == ((0,), (0,), (0,))


def test_policy_iteration_monotone_decrease():
    # Reimplemented alternation so monotonicity is observable per round.
    rng = np.random.default_rng(5)
    for _ in range(20):
        mdp = random_dense_mdp(rng, 12, max_actions=3, alpha=0.9)
        mu = greedy_policy(mdp, np.zeros(12))
        prev = None
        for _ in range(100):
            J = evaluate_policy_exact(mdp, mu)
            if prev is not None:
                assert np.all(J <= prev + 1e-12)
            prev = J
            improved = greedy_policy(mdp, J)
            if np.array_equal(improved, mu):
                break
            mu = improved


def test_policy_iteration_equals_value_iteration_random():
    rng = np.random.default_rng(9)
    for _ in range(20):
        mdp = random_dense_mdp(rng, 15, max_actions=3, alpha=0.9)
        J_pi, _, _ = policy_iteration(mdp)
        J_vi = value_iteration(mdp, tol=1e-10)
        assert np.max(np.abs(J_pi - J_vi)) < 1e-8


def test_bellman_optimality_residual():
    rng = np.random.default_rng(13)
    for alpha in (0.5, 0.9, 0.99):
        mdp = random_dense_mdp(rng, 20, max_actions=4, alpha=alpha)
        J, _, _ = policy_iteration(mdp)
        TJ, _ = apply_bellman(mdp, J)
        assert np.max(np.abs(TJ - J)) < 1e-9


def test_contraction_and_monotonicity():
    rng = np.random.default_rng(17)
    for _ in range(50):
        mdp = random_dense_mdp(rng, 8, max_actions=3,
                               alpha=float(rng.choice([0.5, 0.9, 0.99])))
        alpha = mdp.discount
        J = rng.normal(size=8) * 10
        K = rng.normal(size=8) * 10
        TJ, _ = apply_bellman(mdp, J)
        TK, _ = apply_bellman(mdp, K)
        assert np.max(np.abs(TJ - TK)) <= alpha * np.max(np.abs(J - K)) + 1e-12
        mu = greedy_policy(mdp, J)
        TmuJ = apply_policy_bellman(mdp, mu, J)
        TmuK = apply_policy_bellman(mdp, mu, K)
        assert np.max(np.abs(TmuJ - TmuK)) <= \
            alpha * np.max(np.abs(J - K)) + 1e-12
        low = np.minimum(J, K)
        Tlow, _ = apply_bellman(mdp, low)
        assert np.all(Tlow <= TJ + 1e-12)
        assert np.all(Tlow <= TK + 1e-12)


def test_monotonicity_ordered_pairs():
    rng = np.random.default_rng(18)
    for _ in range(50):
        mdp = random_dense_mdp(rng, 8, max_actions=3, alpha=0.9)
        J = rng.normal(size=8) * 5
        K = J + np.abs(rng.normal(size=8))
        TJ, _ = apply_bellman(mdp, J)
        TK, _ = apply_bellman(mdp, K)
        assert np.all(TJ <= TK + 1e-12)
        mu = greedy_policy(mdp, J)
        assert np.all(apply_policy_bellman(mdp, mu, J)
                      <= apply_policy_bellman(mdp, mu, K) + 1e-12)


def test_greedy_consistency_exact():
    rng = np.random.default_rng(19)
    for _ in range(50):
        mdp = random_dense_mdp(rng, 9, max_actions=3)
        J = rng.normal(size=9) * 5
        TJ, greedy = apply_bellman(mdp, J)
        assert np.array_equal(TJ, apply_policy_bellman(mdp, greedy, J))


def test_evaluate_iterative_path_matches_direct_solve(monkeypatch):
    import mcopi.solvers as solvers
    rng = np.random.default_rng(29)
    mdp = random_dense_mdp(rng, 12, max_actions=2, alpha=0.9)
    mu = greedy_policy(mdp, np.zeros(12))
    direct = evaluate_policy_exact(mdp, mu)
    monkeypatch.setattr(solvers, "DIRECT_SOLVE_MAX_STATES", 3)
    iterated = evaluate_policy_exact(mdp, mu)
    assert np.max(np.abs(direct - iterated)) < 1e-9


def test_value_iteration_iteration_cap():
    from mcopi import MaxIterationsExceeded
    mdp = build_mdp({0: [(1.0, {0: 1.0})]}, alpha=0.99)
    with pytest.raises(MaxIterationsExceeded):
        value_iteration(mdp, tol=1e-10, max_iterations=3)


def test_optimal_action_sets_within_tolerance():
    mdp = build_mdp({0: [(1.0, {0: 1.0}), (1.0 + 5e-10, {0: 1.0}),
                         (1.1, {0: 1.0})]}, alpha=0.5)
    J, _, sets = policy_iteration(mdp)
    assert sets.sets[0] == (0, 1)


def test_reach_probabilities_chain():
    mdp, p = chain_mdp()
    report = analyze(mdp, p)
    q = reach_probabilities(mdp, [0, 0, 0], p, report)
    assert np.array_equal(q, [1.0, 1.0, 1.0])


def test_reach_probabilities_branch():
    mdp = build_mdp({
        0: [(0.0, {0: 1.0})],
        1: [(0.0, {0: 1.0})],
        2: [(0.0, {0: 1.0})],
        3: [(1.0, {1: 0.6, 2: 0.4})],
    })
    p = delta_dist(4, 3)
    report = analyze(mdp, p)
    q = reach_probabilities(mdp, [0, 0, 0, 0], p, report)
    assert q[1] == pytest.approx(0.6, abs=1e-15)
    assert q[2] == pytest.approx(0.4, abs=1e-15)
    assert q[3] == 1.0


def test_reach_probabilities_diamond_rejoins():
    mdp = build_mdp({
        0: [(0.0, {0: 1.0})],
        1: [(0.0, {0: 1.0})],   # arm
        2: [(0.0, {0: 1.0})],   # arm -> both rejoin at 0
        3: [(1.0, {1: 0.5, 2: 0.5})],
    })
    p = delta_dist(4, 3)
    report = analyze(mdp, p)
    q = reach_probabilities(mdp, [0, 0, 0, 0], p, report)
    assert q[0] == pytest.approx(1.0, abs=1e-15)


def test_reach_probabilities_requires_acyclic():
    mdp = build_mdp({
        0: [(0.0, {0: 1.0})],
        1: [(1.0, {2: 0.5, 0: 0.5})],
        2: [(1.0, {1: 1.0})],
    })
    p = delta_dist(3, 1)
    report = analyze(mdp, p)
    with pytest.raises(StructureViolation):
        reach_probabilities(mdp, [0, 0, 0], p, report)


def _mc_reach(mdp, mu, p, samples, rng):
    """Vectorized Monte Carlo visit frequencies, independent of the
    analytic computation: all walkers progress synchronously using the
    per-state cumulative transition rows of the fixed policy."""
    n = mdp.num_states
    cum = np.zeros((n, n))
    for i in range(n):
        cum[i] = np.cumsum(mdp.transitions[i][mu[i]])
    cum[:, -1] = 1.0
    states = rng.choice(n, size=samples, p=p.p)
    visited = np.zeros((samples, n), dtype=bool)
    visited[np.arange(samples), states] = True
    for _ in range(n + 1):
        u = rng.random(samples)
        states = (cum[states] <= u[:, None]).sum(axis=1)
        visited[np.arange(samples), states] = True
    return visited.mean(axis=0)


def test_reach_probabilities_match_monte_carlo():
    rng = np.random.default_rng(23)
    for _ in range(50):
        n = int(rng.integers(5, 10))
        mdp, p = random_dag_mdp(rng, n, max_actions=2)
        report = analyze(mdp, p)
        mu = greedy_policy(mdp, np.zeros(n))
        q = reach_probabilities(mdp, mu, p, report)
        samples = 4000
        freq = _mc_reach(mdp, mu, p, samples, rng)
        sigma = np.sqrt(np.maximum(q * (1 - q), 1e-12) / samples)
        assert np.all(np.abs(freq - q) <= 3.5 * sigma + 1e-9)
