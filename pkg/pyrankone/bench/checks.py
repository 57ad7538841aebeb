"""Invariant suites over random models.

Each check draws its own small random models and returns the largest
violation it observed; a check passes when the violation stays within its
tolerance. The suites back the ``check`` sub-command and the test-suite.
"""

import logging
from collections import namedtuple

import numpy as np

from ..envs import gen_random_mdp
from ..learning import (
    StepSchedule,
    draw_sample_table,
    empirical_bellman,
    run_ql,
    run_r1ql,
)
from ..mdp import bellman_optimality, greedy_policy, induced_chain
from ..planning import (
    StopRule,
    run_mpi,
    run_r1vi,
    run_vi,
    solve_reference,
)
from ..rank_one import (
    exact_stationary,
    rank_one_correct,
    spectral_radius,
    subdominant_modulus,
)
from ..rng import counter_generator

logger = logging.getLogger(__name__)

SHAPES = ((2, 2), (3, 2), (5, 3), (8, 4))
GAMMAS = (0.5, 0.9, 0.99)
RUN_ITERS = 40
ROUND_TOL = 1e-9


class CheckResult(namedtuple("CheckResult", "name violation tolerance")):
    @property
    def passed(self):
        return bool(self.violation <= self.tolerance)


def _models(rng, trials):
    for _ in range(trials):
        n, m = SHAPES[rng.integers(len(SHAPES))]
        gamma = GAMMAS[rng.integers(len(GAMMAS))]
        yield gen_random_mdp(n, m, gamma, seed=int(rng.integers(2**63)))


def _scale(*vectors):
    return 1.0 + max(float(np.max(np.abs(v))) for v in vectors)


def check_shift_equivariance(rng, trials):
    """``T(v + c 1) = T(v) + gamma c 1`` and the same for sampled
    operators on Q-functions.
    """
    worst = 0.0
    for mdp in _models(rng, trials):
        v = rng.normal(size=mdp.n)
        q = rng.normal(size=mdp.size)
        c = float(rng.normal(scale=10.0))
        lhs = bellman_optimality(mdp, v + c)
        rhs = bellman_optimality(mdp, v) + mdp.gamma * c
        worst = max(worst, np.max(np.abs(lhs - rhs)) / _scale(lhs))
        table = draw_sample_table(mdp, int(rng.integers(100)), 7)
        lhs = empirical_bellman(mdp, q + c, table)
        rhs = empirical_bellman(mdp, q, table) + mdp.gamma * c
        worst = max(worst, np.max(np.abs(lhs - rhs)) / _scale(lhs))
    return worst


def check_contraction(rng, trials):
    """``|T(u) - T(w)| <= gamma |u - w|`` in the sup norm."""
    worst = 0.0
    for mdp in _models(rng, trials):
        u = rng.normal(size=mdp.n)
        w = rng.normal(size=mdp.n)
        gap = bellman_optimality(mdp, u) - bellman_optimality(mdp, w)
        worst = max(
            worst, np.max(np.abs(gap)) - mdp.gamma * np.max(np.abs(u - w))
        )
    return worst


def check_woodbury(rng, trials):
    """Closed-form rank-one inverse against a dense solve."""
    worst = 0.0
    for _ in range(trials):
        size = int(rng.integers(1, 9))
        gamma = float(rng.uniform(0.05, 0.99))
        d = rng.dirichlet(np.ones(size))
        r = rng.normal(size=size)
        dense = np.linalg.solve(
            np.eye(size) - gamma * np.outer(np.ones(size), d), r
        )
        closed = rank_one_correct(d, gamma, r)
        worst = max(worst, np.max(np.abs(dense - closed)) / _scale(dense))
    return worst


def check_spectral_identity(rng, trials):
    """``rho(P - 1 d^T) = |lambda_2(P)|`` for the stationary ``d``, and no
    rank-one stochastic ``1 e^T`` does better.
    """
    worst = 0.0
    for _ in range(trials):
        size = int(rng.integers(2, 9))
        p = rng.dirichlet(np.ones(size), size=size)
        d = exact_stationary(p)
        ones = np.ones(size)
        best = spectral_radius(p - np.outer(ones, d))
        worst = max(worst, abs(best - subdominant_modulus(p)))
        for _ in range(10):
            e = rng.dirichlet(np.ones(size))
            other = spectral_radius(p - np.outer(ones, e))
            worst = max(worst, best - other)
    return worst


def _iterates(trace):
    return np.array(trace.iterates)


def check_rank_one_shift(rng, trials):
    """R1-VI iterates equal VI iterates plus a constant, with
    ``beta_{k+1} = gamma beta_k + alpha_k``.
    """
    worst = 0.0
    stop = StopRule(max_iters=RUN_ITERS)
    for mdp in _models(rng, trials):
        v0 = rng.normal(size=mdp.n)
        vi = _iterates(run_vi(mdp, v0, stop=stop, keep_iterates=True))
        r1 = run_r1vi(mdp, v0, stop=stop, keep_iterates=True)
        shift = _iterates(r1) - vi
        scale = _scale(vi, _iterates(r1))
        spread = np.max(shift.max(axis=1) - shift.min(axis=1))
        beta = shift[:, 0]
        predicted = mdp.gamma * beta[:-1] + np.array(r1.corrections)
        recursion = np.max(np.abs(beta[1:] - predicted))
        worst = max(worst, spread / scale, recursion / scale)
    return worst


def check_rank_one_learning_shift(rng, trials):
    """R1-QL iterates equal QL iterates plus a constant on shared samples,
    with ``beta_{k+1} = (1 - lambda_k) beta_k + gamma lambda_k beta_k +
    alpha_k``.
    """
    worst = 0.0
    sched = StepSchedule()
    steps = np.array([sched(k) for k in range(RUN_ITERS)])
    for mdp in _models(rng, trials):
        seed = int(rng.integers(2**63))
        ql = run_ql(
            mdp, sched=sched, seed=seed, iters=RUN_ITERS, keep_iterates=True
        )
        r1 = run_r1ql(
            mdp, sched=sched, seed=seed, iters=RUN_ITERS, keep_iterates=True
        )
        shift = _iterates(r1) - _iterates(ql)
        scale = _scale(_iterates(ql), _iterates(r1))
        spread = np.max(shift.max(axis=1) - shift.min(axis=1))
        beta = shift[:, 0]
        predicted = (
            (1.0 - steps) * beta[:-1]
            + mdp.gamma * steps * beta[:-1]
            + np.array(r1.corrections)
        )
        recursion = np.max(np.abs(beta[1:] - predicted))
        worst = max(worst, spread / scale, recursion / scale)
    return worst


def check_greedy_identity(rng, trials):
    """Greedy policies of ``v`` and ``v + c 1`` agree; returns mismatches."""
    mismatches = 0
    for mdp in _models(rng, trials):
        v = rng.normal(size=mdp.n)
        c = float(rng.normal())
        shifted = greedy_policy(mdp, v + c)
        mismatches += int(np.count_nonzero(greedy_policy(mdp, v) != shifted))
    return float(mismatches)


def check_mpi_reductions(rng, trials):
    """``run_mpi(steps=0)`` reproduces VI and R1-VI bit for bit."""
    worst = 0.0
    stop = StopRule(max_iters=RUN_ITERS)
    for mdp in _models(rng, trials):
        pairs = (
            (run_mpi(mdp, steps=0, stop=stop), run_vi(mdp, stop=stop)),
            (
                run_mpi(mdp, steps=0, rank_one=True, stop=stop),
                run_r1vi(mdp, stop=stop),
            ),
        )
        for reduced, direct in pairs:
            worst = max(worst, float(np.max(np.abs(reduced.v - direct.v))))
    return worst


def check_rank_one_bound(rng, trials):
    """``|v_k - v*| <= gamma^k (|v0 - v*| + |T(v0) - v0| / (1 - gamma))``
    along R1-VI iterates.
    """
    worst = 0.0
    stop = StopRule(max_iters=RUN_ITERS)
    for mdp in _models(rng, trials):
        v_star, _ = solve_reference(mdp)
        v0 = rng.normal(size=mdp.n)
        trace = run_r1vi(mdp, v0, stop=stop, reference=v_star)
        start = np.max(np.abs(v0 - v_star)) + np.max(
            np.abs(bellman_optimality(mdp, v0) - v0)
        ) / (1.0 - mdp.gamma)
        scale = _scale(v_star, v0)
        for k, err in enumerate(trace.value_errs):
            worst = max(worst, (err - mdp.gamma**k * start) / scale)
    return worst


def check_stationary_fixed_point(rng, trials):
    """Exact stationary distributions of greedy chains are fixed points."""
    worst = 0.0
    for mdp in _models(rng, trials):
        v = rng.normal(size=mdp.n)
        chain = induced_chain(mdp, greedy_policy(mdp, v))
        d = exact_stationary(chain.p_state)
        worst = max(worst, float(np.max(np.abs(d @ chain.p_state - d))))
    return worst


# name -> (check, tolerance)
CHECKS = {
    "shift_equivariance": (check_shift_equivariance, ROUND_TOL),
    "contraction": (check_contraction, ROUND_TOL),
    "woodbury": (check_woodbury, 1e-10),
    "spectral_identity": (check_spectral_identity, 1e-8),
    "rank_one_shift": (check_rank_one_shift, ROUND_TOL),
    "rank_one_learning_shift": (check_rank_one_learning_shift, ROUND_TOL),
    "greedy_identity": (check_greedy_identity, 0.0),
    "mpi_reductions": (check_mpi_reductions, 0.0),
    "rank_one_bound": (check_rank_one_bound, ROUND_TOL),
    "stationary_fixed_point": (check_stationary_fixed_point, ROUND_TOL),
}


def run_checks(seed=0, trials=20, names=None):
    """Runs the named checks (all by default).

    :param seed: key of the stream the random models come from.
    :type seed: int.
    :param trials: random models per check.
    :type trials: int.
    :param names: subset of :data:`CHECKS`.
    :type names: list.
    :returns: list -- one :class:`CheckResult` per check.
    :raises: KeyError
    """
    results = []
    for index, name in enumerate(names or CHECKS):
        check, tolerance = CHECKS[name]
        violation = float(check(counter_generator(seed, index), trials))
        result = CheckResult(name, violation, tolerance)
        if not result.passed:
            logger.warning(
                f"Check {name} failed: violation {violation:.3e} > "
                f"{tolerance:.0e}"
            )
        results.append(result)
    return results
