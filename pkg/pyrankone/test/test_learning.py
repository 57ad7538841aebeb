import numpy as np
import pytest
import timeout_decorator

from pyrankone.envs import GarnetSpec, gen_deterministic_mdp, gen_garnet
from pyrankone.learning import (
    LEARNERS,
    SampleTable,
    StepSchedule,
    average_successor_matrix,
    draw_sample_table,
    empirical_bellman,
    run_ql,
    run_r1ql,
    run_speedy_ql,
    run_zap_ql,
)
from pyrankone.mdp import DimensionMismatchError, Mdp, bellman_q
from pyrankone.planning import policy_iteration_q, solve_reference_q
from pyrankone.test.test_util import M2_Q_STAR, make_m2, random_mdp


class TestSampleTable:
    def test_deterministic_rows_ignore_seed(self):
        mdp = make_m2()
        for seed in (0, 1, 2**100):
            table = draw_sample_table(mdp, 3, seed)
            np.testing.assert_array_equal(table.next_state, [0, 1, 0, 1])

    def test_same_round_same_samples(self):
        mdp = random_mdp(6, 3, 0.9, seed=0)
        first = draw_sample_table(mdp, 17, 5)
        second = draw_sample_table(mdp, 17, 5)
        np.testing.assert_array_equal(first.next_state, second.next_state)
        assert first.digest == second.digest

    def test_rounds_differ(self):
        mdp = random_mdp(20, 3, 0.9, seed=0)
        digests = {draw_sample_table(mdp, k, 5).digest for k in range(10)}
        assert len(digests) == 10

    def test_samples_stay_on_support(self):
        mdp = gen_garnet(GarnetSpec(15, 3, 2, seed=4), gamma=0.9)
        for k in range(50):
            table = draw_sample_table(mdp, k, 9)
            probs = mdp.kernel[np.arange(mdp.size), table.next_state]
            assert np.all(probs > 0)

    def test_empirical_frequencies(self):
        kernel = [[0.2, 0.8]]
        mdp = Mdp(2, 1, kernel * 2, [0.0, 0.0], 0.5)
        hits = sum(
            draw_sample_table(mdp, k, 1).next_state[0] for k in range(4000)
        )
        assert hits / 4000 == pytest.approx(0.8, abs=0.03)


def test_empirical_bellman_m2():
    mdp = make_m2()
    table = draw_sample_table(mdp, 0, 0)
    np.testing.assert_array_equal(
        empirical_bellman(mdp, np.zeros(4), table), mdp.cost
    )


def test_empirical_bellman_dimension_mismatch():
    mdp = make_m2()
    with pytest.raises(DimensionMismatchError):
        empirical_bellman(mdp, np.zeros(3), draw_sample_table(mdp, 0, 0))


class TestStepSchedule:
    def test_linear(self):
        sched = StepSchedule()
        assert [sched(k) for k in range(3)] == [1.0, 0.5, 1 / 3]

    def test_polynomial(self):
        assert StepSchedule("polynomial", omega=0.5 + 1e-9)(0) == 1.0
        assert StepSchedule("polynomial", omega=1.0)(3) == 0.25

    def test_rescaled_linear(self):
        assert StepSchedule("rescaled_linear", tau=0.5)(2) == 0.5

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"kind": "cubic"},
            {"kind": "polynomial", "omega": 0.5},
            {"kind": "polynomial", "omega": 1.5},
            {"kind": "rescaled_linear", "tau": 0.0},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            StepSchedule(**kwargs)


def test_ql_first_step_replaces():
    trace = run_ql(make_m2(), iters=1, keep_iterates=True)
    np.testing.assert_array_equal(trace.iterates[1], make_m2().cost)


def test_ql_m2_converges():
    trace = run_ql(make_m2(), iters=5000, reference_q=M2_Q_STAR)
    # Error of the slow coordinates decays like 1.128 / sqrt(k).
    assert trace.final_value_err <= 2e-2
    assert trace.value_errs[-1] < trace.value_errs[100]
    assert trace.iterations == 5000
    assert len(trace.value_errs) == 5001


def test_r1ql_m2_hand_trace():
    trace = run_r1ql(make_m2(), iters=1, keep_iterates=True)
    assert trace.corrections == [2.0]
    np.testing.assert_array_equal(trace.iterates[1], [3, 4.5, 5, 2])


def test_r1ql_rejects_bad_distribution():
    with pytest.raises(ValueError):
        run_r1ql(make_m2(), d_init=[1.0, 1.0, 0.0, 0.0])


@pytest.mark.parametrize("algo", sorted(LEARNERS))
def test_fixed_point_on_deterministic_model(algo):
    trace = LEARNERS[algo](
        make_m2(), q0=M2_Q_STAR, iters=30, keep_iterates=True
    )
    for q in trace.iterates:
        np.testing.assert_allclose(q, M2_Q_STAR, atol=1e-12)
    if algo == "r1ql":
        assert max(abs(alpha) for alpha in trace.corrections) <= 1e-12


def test_learners_share_samples():
    mdp = random_mdp(5, 2, 0.9, seed=7)
    digests = [
        LEARNERS[algo](mdp, seed=123, iters=20).sample_digests
        for algo in sorted(LEARNERS)
    ]
    assert all(d == digests[0] for d in digests)
    assert len(digests[0]) == 20


def _shift(mdp, seed, iters):
    sched = StepSchedule()
    ql = run_ql(mdp, sched=sched, seed=seed, iters=iters, keep_iterates=True)
    r1 = run_r1ql(
        mdp, sched=sched, seed=seed, iters=iters, keep_iterates=True
    )
    return ql, r1, np.array(r1.iterates) - np.array(ql.iterates)


@pytest.mark.parametrize("seed,iters", [(0, 100), (1, 100), (2, 2000)])
def test_r1ql_is_ql_plus_constant(seed, iters):
    mdp = random_mdp(6, 3, 0.9, seed=seed)
    ql, r1, shift = _shift(mdp, seed, iters)
    np.testing.assert_allclose(
        shift, shift[:, :1] * np.ones((1, mdp.size)), atol=1e-9
    )
    assert r1.policy_fingerprints == ql.policy_fingerprints
    # beta_{k+1} = (1 - lambda_k) beta_k + gamma lambda_k beta_k + alpha_k
    sched = StepSchedule()
    steps = np.array([sched(k) for k in range(iters)])
    beta = shift[:, 0]
    predicted = (
        (1.0 - steps) * beta[:-1]
        + mdp.gamma * steps * beta[:-1]
        + np.array(r1.corrections)
    )
    np.testing.assert_allclose(beta[1:], predicted, atol=1e-9)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_rank_one_shift_shrinks(seed):
    mdp = random_mdp(6, 3, 0.9, seed=seed)
    _, _, shift = _shift(mdp, seed, 5000)
    beta = np.abs(shift[1:, 0])
    tenth = len(beta) // 10
    assert np.median(beta[-tenth:]) <= np.median(beta[:tenth])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_speedy_and_zap_on_deterministic_models(seed):
    mdp = gen_deterministic_mdp(6, 3, gamma=0.9, seed=seed)
    q_star = policy_iteration_q(mdp)
    for learner in (run_speedy_ql, run_zap_ql):
        trace = learner(mdp, iters=5000, reference_q=q_star)
        assert trace.final_value_err <= 1e-2
        assert not trace.diverged


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_r1ql_on_deterministic_models(seed):
    # R1-QL moves every entry of the QL iterate by the same amount: it keeps
    # QL's greedy policies and error span, and its error is at least half
    # that span.
    mdp = gen_deterministic_mdp(6, 3, gamma=0.9, seed=seed)
    q_star = policy_iteration_q(mdp)
    ql = run_ql(mdp, iters=5000, reference_q=q_star)
    r1 = run_r1ql(mdp, iters=5000, reference_q=q_star)
    assert r1.policy_fingerprints == ql.policy_fingerprints

    def span(q):
        gap = q - q_star
        return gap.max() - gap.min()

    assert span(r1.q) == pytest.approx(span(ql.q), abs=1e-9)
    assert r1.final_value_err >= span(ql.q) / 2 - 1e-9


def test_empirical_bellman_expectation():
    mdp = random_mdp(3, 2, 0.9, seed=4)
    q = np.random.default_rng(4).normal(size=mdp.size)
    expected = np.zeros(mdp.size)
    for successor in range(mdp.n):
        table = SampleTable(np.full(mdp.size, successor), 0, 0)
        weights = mdp.kernel[:, successor]
        expected += weights * empirical_bellman(mdp, q, table)
    np.testing.assert_allclose(expected, bellman_q(mdp, q), atol=1e-12)


class TestSuccessorMatrix:
    def test_first_round_halves_uniform(self):
        size = 4
        uniform = np.full((size, size), 1.0 / size)
        successors = np.array([2, 0, 3, 3])
        one_hot = np.zeros((size, size))
        one_hot[np.arange(size), successors] = 1.0
        p_hat = average_successor_matrix(uniform.copy(), successors, 0)
        np.testing.assert_allclose(p_hat, 0.5 * uniform + 0.5 * one_hot)

    def test_rows_stay_stochastic(self):
        rng = np.random.default_rng(0)
        size = 6
        p_hat = np.full((size, size), 1.0 / size)
        for k in range(50):
            successors = rng.integers(size, size=size)
            average_successor_matrix(p_hat, successors, k)
            np.testing.assert_allclose(p_hat.sum(axis=1), 1.0, atol=1e-12)
            assert np.all(p_hat >= 0)


def test_zap_matches_q_policy_iteration_step():
    # Deterministic samples make P-hat converge to the greedy chain.
    mdp = make_m2()
    trace = run_zap_ql(mdp, iters=2000, reference_q=M2_Q_STAR)
    assert trace.final_value_err <= 1e-2


def test_policy_iteration_q_matches_values():
    mdp = random_mdp(6, 3, 0.9, seed=9)
    np.testing.assert_allclose(
        policy_iteration_q(mdp), solve_reference_q(mdp), atol=1e-9
    )


def test_divergence_guard():
    mdp = make_m2()
    trace = run_ql(mdp, q0=[np.nan] * 4, iters=10)
    assert trace.diverged
    assert not trace.converged
    assert trace.iterations == 0


def test_policy_values_need_reference():
    with pytest.raises(ValueError):
        run_ql(make_m2(), iters=1, policy_values=True)


@pytest.mark.slow
@timeout_decorator.timeout(900)
def test_garnet_rank_one_learning_error():
    gammas = (0.9, 0.95, 0.99, 0.999)
    finals = {"ql": {}, "r1ql": {}}
    for gamma in gammas:
        for algo in finals:
            errors = []
            for instance in range(5):
                mdp = gen_garnet(GarnetSpec(seed=instance), gamma=gamma)
                q_star = solve_reference_q(mdp)
                for seed in range(5):
                    trace = LEARNERS[algo](
                        mdp, seed=seed, iters=5000, reference_q=q_star
                    )
                    errors.append(trace.final_value_err)
            finals[algo][gamma] = np.median(errors)
    assert finals["r1ql"][0.999] <= finals["ql"][0.999]

    def spread(medians):
        return max(medians.values()) - min(medians.values())

    assert spread(finals["r1ql"]) < spread(finals["ql"])
