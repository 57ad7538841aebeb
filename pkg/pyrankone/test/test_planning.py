import numpy as np
import pytest
import timeout_decorator

from pyrankone import planning
from pyrankone.envs import (
    ABSORBING,
    TERMINAL,
    GarnetSpec,
    GridworldSpec,
    gen_garnet,
    gen_gridworld,
)
from pyrankone.mdp import bellman_optimality
from pyrankone.planning import (
    StopRule,
    policy_iteration_q,
    run_anderson_vi,
    run_mpi,
    run_nesterov_vi,
    run_pi,
    run_pi_classic,
    run_r1vi,
    run_vi,
    solve_reference,
)
from pyrankone.test.test_util import (
    M2_POLICY,
    M2_Q_STAR,
    M2_V_STAR,
    make_m2,
    random_mdp,
)
from pyrankone.trace import SolveTrace


def iterates(trace):
    return np.array(trace.iterates)


class TestStopRule:
    def test_negative_tolerance(self):
        with pytest.raises(ValueError):
            StopRule(bellman_tol=-1.0)

    def test_needs_a_criterion(self):
        with pytest.raises(ValueError):
            StopRule(max_iters=None)

    def test_value_tolerance_needs_reference(self):
        with pytest.raises(ValueError):
            run_vi(make_m2(), stop=StopRule(value_tol=1e-3))

    def test_satisfied_requires_all_tolerances(self):
        stop = StopRule(bellman_tol=1e-3, value_tol=1e-3)
        assert stop.satisfied(1e-4, 1e-4)
        assert not stop.satisfied(1e-4, 1e-2)
        assert not stop.satisfied(1e-4, None)

    def test_non_finite_errors_never_satisfy(self):
        stop = StopRule(bellman_tol=1e-6)
        assert not stop.satisfied(np.nan)
        assert not stop.satisfied(np.inf)
        both = StopRule(bellman_tol=1e-3, value_tol=1e-3)
        assert not both.satisfied(1e-4, np.nan)


@pytest.mark.parametrize("v0", [[np.nan, 0.0], [0.0, np.inf]])
def test_non_finite_initial_values_rejected(v0):
    with pytest.raises(ValueError):
        run_vi(make_m2(), v0, stop=StopRule(bellman_tol=1e-6))


def test_non_finite_iterate_stops_unconverged():
    mdp = make_m2()
    trace = SolveTrace("vi")
    recorder = planning._Recorder(mdp, trace, StopRule(bellman_tol=1e-6))
    v = np.array([np.nan, 0.0])
    assert recorder.record(0, v, bellman_optimality(mdp, v), [0, 0])
    assert not trace.converged
    assert np.isnan(trace.bellman_errs[0])


def test_vi_m2_hand_trace():
    trace = run_vi(make_m2(), stop=StopRule(max_iters=2), keep_iterates=True)
    np.testing.assert_array_equal(
        iterates(trace), [[0, 0], [1, 0], [1.5, 0]]
    )
    assert trace.iterations == 2
    assert not trace.converged
    assert len(trace.bellman_errs) == len(trace.wallclock_ns) == 3


def test_vi_starting_at_fixed_point():
    trace = run_vi(make_m2(), M2_V_STAR, stop=StopRule(bellman_tol=1e-10))
    assert trace.converged
    assert trace.iterations == 0
    assert trace.final_bellman_err <= 1e-10


def test_pi_m2_one_step():
    trace = run_pi(make_m2(), reference=M2_V_STAR, keep_iterates=True)
    assert trace.converged
    np.testing.assert_allclose(trace.iterates[1], M2_V_STAR)
    assert trace.first_below("bellman", 1e-10) == 1
    assert trace.first_below("value", 1e-10) == 1


def test_pi_matches_classic_policy_iteration():
    for seed in range(4):
        mdp = random_mdp(9, 3, 0.95, seed=seed)
        resolvent = run_pi(mdp)
        classic = run_pi_classic(mdp)
        np.testing.assert_allclose(resolvent.v, classic.v, atol=1e-9)
        assert (
            resolvent.policy_fingerprints[-1]
            == classic.policy_fingerprints[-1]
        )


def test_mpi_m2_one_lookahead():
    trace = run_mpi(
        make_m2(), steps=1, stop=StopRule(max_iters=1), keep_iterates=True
    )
    np.testing.assert_array_equal(trace.iterates[1], [1.5, 0])
    assert trace.algo == "mpi"


def test_mpi_without_lookahead_reduces_to_vi():
    mdp = random_mdp(6, 2, 0.9, seed=3)
    stop = StopRule(bellman_tol=1e-8)
    reduced = run_mpi(mdp, steps=0, stop=stop)
    direct = run_vi(mdp, stop=stop)
    assert reduced.bellman_errs == direct.bellman_errs
    np.testing.assert_array_equal(reduced.v, direct.v)
    reduced = run_mpi(mdp, steps=0, rank_one=True, stop=stop)
    direct = run_r1vi(mdp, stop=stop)
    assert reduced.corrections == direct.corrections
    np.testing.assert_array_equal(reduced.v, direct.v)


def test_mpi_needs_fewer_iterations_with_lookahead():
    mdp = random_mdp(10, 3, 0.99, seed=6)
    stop = StopRule(bellman_tol=1e-6)
    assert run_mpi(mdp, steps=5, stop=stop).iterations < (
        run_vi(mdp, stop=stop).iterations
    )


def test_r1vi_m2_forced_distribution():
    trace = run_r1vi(
        make_m2(),
        d_init=[1.0, 0.0],
        stop=StopRule(max_iters=1),
        keep_iterates=True,
    )
    np.testing.assert_array_equal(trace.iterates[1], [2, 1])
    assert trace.corrections == [1.0]
    np.testing.assert_array_equal(trace.distributions[0], [1, 0])


def test_r1vi_rejects_bad_distribution():
    with pytest.raises(ValueError):
        run_r1vi(make_m2(), d_init=[0.7, 0.7])


def test_r1vi_one_power_step_per_iteration(mocker):
    spy = mocker.spy(planning, "power_step")
    trace = run_r1vi(random_mdp(5, 2, 0.9, seed=1), stop=StopRule(1e-8))
    assert spy.call_count == trace.iterations

    spy.reset_mock()
    trace = run_r1vi(
        random_mdp(5, 2, 0.9, seed=1), stop=StopRule(1e-8), power_steps=3
    )
    assert spy.call_count == 3 * trace.iterations


def test_r1vi_is_vi_plus_constant():
    for seed in range(5):
        mdp = random_mdp(7, 3, 0.95, seed=seed)
        v0 = np.random.default_rng(seed).normal(size=7)
        stop = StopRule(max_iters=60)
        vi = run_vi(mdp, v0, stop=stop, keep_iterates=True)
        r1 = run_r1vi(mdp, v0, stop=stop, keep_iterates=True)
        shift = iterates(r1) - iterates(vi)
        np.testing.assert_allclose(
            shift, shift[:, :1] * np.ones((1, 7)), atol=1e-9
        )
        beta = shift[:, 0]
        np.testing.assert_allclose(
            beta[1:],
            mdp.gamma * beta[:-1] + np.array(r1.corrections),
            atol=1e-9,
        )
        assert r1.policy_fingerprints == vi.policy_fingerprints


def test_nesterov_m2_first_step():
    trace = run_nesterov_vi(
        make_m2(), stop=StopRule(max_iters=1), keep_iterates=True
    )
    np.testing.assert_allclose(trace.iterates[1], [2 / 3, 0])


def test_anderson_m2_first_step():
    trace = run_anderson_vi(
        make_m2(), stop=StopRule(max_iters=1), keep_iterates=True
    )
    np.testing.assert_array_equal(trace.iterates[1], [1, 0])


@pytest.mark.parametrize(
    "solver", [run_vi, run_r1vi, run_nesterov_vi, run_anderson_vi]
)
def test_fixed_point_is_preserved(solver):
    trace = solver(
        make_m2(), M2_V_STAR, stop=StopRule(max_iters=5), keep_iterates=True
    )
    np.testing.assert_allclose(iterates(trace), [M2_V_STAR] * 6)


@pytest.mark.parametrize(
    "solver", [run_vi, run_r1vi, run_mpi, run_pi_classic]
)
def test_solvers_reach_reference(solver):
    mdp = random_mdp(8, 3, 0.9, seed=12)
    v_star, _ = solve_reference(mdp)
    trace = solver(mdp, stop=StopRule(value_tol=1e-8), reference=v_star)
    assert trace.converged
    assert trace.final_value_err <= 1e-8


def test_exhausted_budget_is_not_converged():
    stop = StopRule(1e-12, None, 7)
    trace = run_vi(random_mdp(4, 2, 0.99, seed=0), stop=stop)
    assert not trace.converged
    assert trace.iterations == 7


def test_policy_values_recorded():
    mdp = random_mdp(6, 3, 0.9, seed=2)
    v_star, _ = solve_reference(mdp)
    trace = run_vi(
        mdp,
        stop=StopRule(bellman_tol=1e-9),
        reference=v_star,
        policy_values=True,
    )
    assert all(err is not None for err in trace.policy_value_errs)
    assert trace.policy_value_errs[-1] <= 1e-9


def test_solve_reference_m2():
    v_star, policy = solve_reference(make_m2())
    np.testing.assert_allclose(v_star, M2_V_STAR)
    np.testing.assert_array_equal(policy, M2_POLICY)


def test_policy_iteration_q_m2():
    np.testing.assert_allclose(policy_iteration_q(make_m2()), M2_Q_STAR)


def test_terminal_gridworld_goal_start_matches_vi():
    mdp = gen_gridworld(GridworldSpec(variant=TERMINAL), gamma=0.95)
    goal = GridworldSpec().goal_state
    d_init = np.zeros(mdp.n)
    d_init[goal] = 1.0
    stop = StopRule(max_iters=80)
    vi = run_vi(mdp, stop=stop, keep_iterates=True)
    r1 = run_r1vi(mdp, d_init=d_init, stop=stop, keep_iterates=True)
    assert all(alpha == 0.0 for alpha in r1.corrections)
    np.testing.assert_array_equal(iterates(r1), iterates(vi))


@pytest.mark.parametrize("gamma", [0.9, 0.95, 0.99])
def test_terminal_gridworld_correction_vanishes(gamma):
    mdp = gen_gridworld(GridworldSpec(variant=TERMINAL), gamma=gamma)
    goal = GridworldSpec().goal_state
    r1 = run_r1vi(mdp, stop=StopRule(max_iters=300), keep_iterates=True)
    concentrated = 0
    for k, (d, alpha) in enumerate(zip(r1.distributions, r1.corrections)):
        if d[goal] <= 1.0 - 1e-6:
            continue
        concentrated += 1
        v = r1.iterates[k]
        residual = np.max(np.abs(bellman_optimality(mdp, v) - v))
        assert abs(alpha) <= 1e-6 * residual
    assert concentrated > 0


@pytest.mark.parametrize("gamma", [0.9, 0.99])
def test_absorbing_gridworld_rank_one_not_slower(gamma):
    mdp = gen_gridworld(GridworldSpec(variant=ABSORBING), gamma=gamma)
    v_star, _ = solve_reference(mdp)
    stop = StopRule(bellman_tol=1e-5, value_tol=1e-4, max_iters=5000)
    vi = run_vi(mdp, stop=stop, reference=v_star)
    r1 = run_r1vi(mdp, stop=stop, reference=v_star)
    assert vi.converged and r1.converged
    for metric, tol in (("bellman", 1e-5), ("value", 1e-4)):
        assert r1.first_below(metric, tol) <= vi.first_below(metric, tol)


def _rank_one_bound_violation(mdp, v0):
    v_star, _ = solve_reference(mdp)
    trace = run_r1vi(mdp, v0, stop=StopRule(value_tol=1e-6), reference=v_star)
    start = np.max(np.abs(v0 - v_star)) + np.max(
        np.abs(bellman_optimality(mdp, v0) - v0)
    ) / (1.0 - mdp.gamma)
    return max(
        err - mdp.gamma**k * start for k, err in enumerate(trace.value_errs)
    )


def test_rank_one_bound_small_garnets():
    for seed in range(3):
        mdp = gen_garnet(GarnetSpec(30, 4, 5, seed=seed), gamma=0.99)
        v0 = np.random.default_rng(seed).uniform(size=30)
        assert _rank_one_bound_violation(mdp, v0) <= 1e-8


@pytest.mark.slow
@timeout_decorator.timeout(120)
def test_rank_one_bound_benchmark_garnets():
    for instance in range(25):
        mdp = gen_garnet(GarnetSpec(seed=instance), gamma=0.99)
        assert _rank_one_bound_violation(mdp, np.zeros(mdp.n)) <= 1e-8


@pytest.mark.slow
@timeout_decorator.timeout(600)
@pytest.mark.parametrize("gamma", [0.99, 0.999])
def test_garnet_iteration_ordering(gamma):
    thresholds = {0.99: 1e-4, 0.999: 1e-2}
    solvers = {
        "pi": run_pi,
        "r1vi": run_r1vi,
        "vi": run_vi,
        "nesterov": run_nesterov_vi,
        "anderson": run_anderson_vi,
    }
    counts = {name: [] for name in solvers}
    for instance in range(25):
        mdp = gen_garnet(GarnetSpec(seed=instance), gamma=gamma)
        v_star, _ = solve_reference(mdp)
        stop = StopRule(value_tol=thresholds[gamma], max_iters=20000)
        for name, solver in solvers.items():
            trace = solver(mdp, stop=stop, reference=v_star)
            reached = trace.first_below("value", stop.value_tol)
            counts[name].append(np.inf if reached is None else reached)
    median = {name: np.median(values) for name, values in counts.items()}
    assert median["pi"] <= median["r1vi"]
    assert median["r1vi"] < min(
        median["vi"], median["nesterov"], median["anderson"]
    )
