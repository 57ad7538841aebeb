"""Model-based solvers.

Every solver starts from ``v0`` (zeros by default), records iterate ``k``
(errors, greedy policy, timing) before computing iterate ``k + 1`` and stops
once the :class:`StopRule` is met. VI, MPI, R1-VI and R1-MPI share one update
engine, so ``run_mpi(steps=0)`` reproduces ``run_vi`` and
``run_mpi(steps=0, rank_one=True)`` reproduces ``run_r1vi`` bit for bit.
"""

import logging
import math

import numpy as np

from .mdp import (
    DimensionMismatchError,
    bellman_optimality,
    bellman_sweep,
    bellman_q,
    check_policy,
    greedy_policy,
    greedy_policy_q,
    policy_evaluation_exact,
    policy_fingerprint,
    policy_rows,
    q_from_values,
    solve_regular,
)
from .rank_one import (
    is_distribution,
    power_step,
    rank_one_coefficient,
    uniform_distribution,
)
from .trace import SolveTrace, Stopwatch, keep

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITERS = 100000
REFERENCE_TOL = 1e-10
# Anderson step is skipped when |z'(z - z')| is below this fraction of |z|^2.
ANDERSON_RTOL = 1e-14


class StopRule:
    """Termination criteria of a planning run.

    The run has converged once every active tolerance is met; it stops
    unconverged after ``max_iters`` updates.

    :param bellman_tol: bound on ``|T(v_k) - v_k|_inf`` or None.
    :type bellman_tol: float.
    :param value_tol: bound on ``|v_k - v*|_inf`` (needs a reference) or None.
    :type value_tol: float.
    :param max_iters: update budget or None for unbounded.
    :type max_iters: int.
    :raises: ValueError
    """

    def __init__(
        self, bellman_tol=None, value_tol=None, max_iters=DEFAULT_MAX_ITERS
    ):
        tolerances = (("bellman_tol", bellman_tol), ("value_tol", value_tol))
        for name, tol in tolerances:
            if tol is not None and not tol >= 0:
                raise ValueError(f"{name} must be nonnegative, got {tol}")
        if max_iters is not None and int(max_iters) < 1:
            raise ValueError(f"max_iters must be positive, got {max_iters}")
        if bellman_tol is None and value_tol is None and max_iters is None:
            raise ValueError("StopRule needs at least one active criterion")
        self.bellman_tol = bellman_tol
        self.value_tol = value_tol
        self.max_iters = None if max_iters is None else int(max_iters)

    def __repr__(self):
        return (
            f"StopRule(bellman_tol={self.bellman_tol}, "
            f"value_tol={self.value_tol}, max_iters={self.max_iters})"
        )

    @property
    def has_tolerance(self):
        return self.bellman_tol is not None or self.value_tol is not None

    def satisfied(self, bellman_err, value_err=None):
        """True when every active tolerance is met.

        Non-finite errors never satisfy a tolerance.
        """
        if not self.has_tolerance:
            return False
        if self.bellman_tol is not None and not (
            bellman_err <= self.bellman_tol
        ):
            return False
        if self.value_tol is not None and not (
            value_err is not None and value_err <= self.value_tol
        ):
            return False
        return True

    def exhausted(self, k):
        return self.max_iters is not None and k >= self.max_iters


class _Recorder:
    """Fills a trace and evaluates the stop rule at every iterate."""

    def __init__(
        self, mdp, trace, stop, reference=None, policy_values=False
    ):
        if stop.value_tol is not None and reference is None:
            raise ValueError("value_tol needs a reference solution")
        if policy_values and reference is None:
            raise ValueError("policy_values needs a reference solution")
        self.mdp = mdp
        self.trace = trace
        self.stop = stop
        self.reference = (
            None if reference is None else np.asarray(reference, float)
        )
        self.policy_values = policy_values
        self.stopwatch = Stopwatch()
        self._policy_errs = {}

    def policy_value_err(self, policy, fingerprint):
        if fingerprint not in self._policy_errs:
            v_pi = policy_evaluation_exact(self.mdp, policy)
            self._policy_errs[fingerprint] = float(
                np.max(np.abs(v_pi - self.reference))
            )
        return self._policy_errs[fingerprint]

    def record(self, k, v, tv, actions, policy_stable=None):
        """Stores iterate ``k`` and tells whether the run should stop.

        Solvers that certify convergence by a repeated policy pass
        ``policy_stable``; the run then converges only on a stable policy,
        and on that alone when the stop rule has no tolerance.
        """
        trace = self.trace
        bellman = float(np.max(np.abs(tv - v)))
        value = (
            None
            if self.reference is None
            else float(np.max(np.abs(v - self.reference)))
        )
        fingerprint = policy_fingerprint(actions)
        trace.bellman_errs.append(bellman)
        trace.value_errs.append(value)
        trace.policy_fingerprints.append(fingerprint)
        trace.policy_value_errs.append(
            self.policy_value_err(actions, fingerprint)
            if self.policy_values
            else None
        )
        trace.wallclock_ns.append(self.stopwatch.lap())
        keep(trace, v)

        if not np.isfinite(bellman) or (
            value is not None and not np.isfinite(value)
        ):
            logger.warning(f"{trace.algo}: non-finite iterate at k={k}")
            return True
        if policy_stable is None:
            done = self.stop.satisfied(bellman, value)
        else:
            done = policy_stable and (
                self.stop.satisfied(bellman, value)
                or not self.stop.has_tolerance
            )
        if done:
            trace.converged = True
            return True
        return self.stop.exhausted(k)

    def finish(self, v):
        trace = self.trace
        trace.solution = v
        logger.debug(
            f"{trace.algo}: stopped after {trace.iterations} iterations, "
            f"converged={trace.converged}"
        )
        return trace


def _initial_values(mdp, v0):
    if v0 is None:
        return np.zeros(mdp.n)
    v0 = np.array(v0, dtype=np.float64)
    if v0.shape != (mdp.n,):
        raise DimensionMismatchError(
            f"Initial value has shape {v0.shape}, expected ({mdp.n},)"
        )
    if not np.all(np.isfinite(v0)):
        raise ValueError("Initial value has non-finite entries")
    return v0


def _initial_distribution(size, d_init):
    if d_init is None:
        return uniform_distribution(size)
    d = np.array(d_init, dtype=np.float64)
    if d.shape != (size,) or not is_distribution(d):
        raise ValueError("Initial distribution must lie in the simplex")
    return d


def _run_modified(
    mdp,
    v0,
    stop,
    steps,
    rank_one,
    algo,
    d_init=None,
    power_steps=1,
    reference=None,
    policy_values=False,
    keep_iterates=False,
):
    """Shared engine of VI, MPI, R1-VI and R1-MPI.

    The update is ``v+ = v + G_k (T(v) - v)`` with
    ``G_k = sum_{l<=L} gamma^l P_k^l`` plus, for rank-one solvers,
    ``gamma^{L+1} / (1 - gamma) 1 d_k^T``. The ``l = 0`` term is folded in
    as ``T(v)`` itself.
    """
    if steps < 0:
        raise ValueError(f"steps must be nonnegative, got {steps}")
    if power_steps < 1:
        raise ValueError(f"power_steps must be positive, got {power_steps}")
    stop = stop or StopRule()
    gamma = mdp.gamma
    v = _initial_values(mdp, v0)
    d = _initial_distribution(mdp.n, d_init) if rank_one else None
    coefficient = rank_one_coefficient(gamma, steps + 1)
    trace = SolveTrace(algo, keep_iterates)
    recorder = _Recorder(mdp, trace, stop, reference, policy_values)

    k = 0
    while True:
        tv, actions = bellman_sweep(mdp, v)
        if recorder.record(k, v, tv, actions):
            break
        residual = tv - v
        v_next = tv
        if steps or rank_one:
            p_k = mdp.kernel[policy_rows(mdp, actions)]
        if steps:
            term = residual
            lookahead = np.zeros(mdp.n)
            for _ in range(steps):
                term = gamma * (p_k @ term)
                lookahead += term
            v_next = tv + lookahead
        if rank_one:
            for _ in range(power_steps):
                d = power_step(p_k, d)
            alpha = coefficient * float(d @ residual)
            v_next = v_next + alpha
            trace.corrections.append(alpha)
            if keep_iterates:
                trace.distributions.append(d.copy())
        v = v_next
        k += 1
    return recorder.finish(v)


def run_vi(mdp, v0=None, stop=None, **options):
    """Value iteration ``v_{k+1} = T(v_k)``.

    :param mdp: model.
    :type mdp: pyrankone.mdp.Mdp.
    :param v0: initial values, zeros by default.
    :param stop: termination criteria.
    :type stop: StopRule.
    :param options: ``reference``, ``policy_values``, ``keep_iterates``.
    :returns: pyrankone.trace.SolveTrace
    """
    return _run_modified(mdp, v0, stop, 0, False, "vi", **options)


def run_r1vi(mdp, v0=None, d_init=None, stop=None, power_steps=1, **options):
    """Rank-one value iteration.

    Per iteration: one fused sweep for ``T(v_k)`` and the greedy ``P_k``,
    ``power_steps`` warm-started power steps ``d_k = P_k^T d_{k-1}``, then
    ``v_{k+1} = T(v_k) + gamma / (1 - gamma) <d_k, T(v_k) - v_k> 1``.

    :param d_init: ``d_{-1}``, uniform by default.
    :type d_init: numpy.ndarray.
    :param power_steps: power steps per iteration.
    :type power_steps: int.
    """
    return _run_modified(
        mdp,
        v0,
        stop,
        0,
        True,
        "r1vi",
        d_init=d_init,
        power_steps=power_steps,
        **options,
    )


def run_mpi(
    mdp,
    v0=None,
    steps=1,
    rank_one=False,
    stop=None,
    d_init=None,
    power_steps=1,
    **options,
):
    """Modified policy iteration with ``steps`` (L) lookahead products.

    ``G_k`` is applied through repeated matrix-vector products; ``P_k^l`` is
    never formed. With ``rank_one`` the R1-MPI correction
    ``gamma^{L+1} / (1 - gamma) <d_k, T(v_k) - v_k> 1`` is added.
    """
    return _run_modified(
        mdp,
        v0,
        stop,
        int(steps),
        rank_one,
        "r1mpi" if rank_one else "mpi",
        d_init=d_init,
        power_steps=power_steps,
        **options,
    )


def run_pi(mdp, v0=None, stop=None, **options):
    """Policy iteration in resolvent form.

    ``v_{k+1} = v_k + (I - gamma P_k)^{-1} (T(v_k) - v_k)``. Stops once the
    greedy policy repeats and the stop rule tolerances hold.

    :raises: SingularSystemError
    """
    stop = stop or StopRule(bellman_tol=REFERENCE_TOL)
    reference = options.pop("reference", None)
    trace = SolveTrace("pi", options.pop("keep_iterates", False))
    recorder = _Recorder(mdp, trace, stop, reference, **options)
    v = _initial_values(mdp, v0)
    identity = np.eye(mdp.n)
    previous = None

    k = 0
    while True:
        tv, actions = bellman_sweep(mdp, v)
        residual = tv - v
        repeated = (
            previous is not None and np.array_equal(previous, actions)
        ) or not np.any(residual)
        if recorder.record(k, v, tv, actions, policy_stable=repeated):
            break
        p_k = mdp.kernel[policy_rows(mdp, actions)]
        v = v + solve_regular(identity - mdp.gamma * p_k, residual)
        previous = actions
        k += 1
    return recorder.finish(v)


def run_pi_classic(mdp, v0=None, stop=None, **options):
    """Policy iteration as alternating evaluation and greedy improvement."""
    stop = stop or StopRule(bellman_tol=REFERENCE_TOL)
    reference = options.pop("reference", None)
    trace = SolveTrace("pi_classic", options.pop("keep_iterates", False))
    recorder = _Recorder(mdp, trace, stop, reference, **options)
    v = _initial_values(mdp, v0)
    previous = None

    k = 0
    while True:
        tv, policy = bellman_sweep(mdp, v)
        repeated = (
            previous is not None and np.array_equal(previous, policy)
        ) or not np.any(tv - v)
        if recorder.record(k, v, tv, policy, policy_stable=repeated):
            break
        v = policy_evaluation_exact(mdp, policy)
        previous = policy
        k += 1
    return recorder.finish(v)


def nesterov_momentum(gamma):
    """Momentum coefficient ``(1 - sqrt(1 - gamma^2)) / gamma``."""
    return (1.0 - math.sqrt(1.0 - gamma * gamma)) / gamma


def run_nesterov_vi(mdp, v0=None, stop=None, **options):
    """Nesterov-accelerated VI with ``v_{-1} = v_0``.

    ``z_k = v_k + mu (v_k - v_{k-1})``,
    ``v_{k+1} = z_k + (T(z_k) - z_k) / (1 + gamma)``.
    """
    stop = stop or StopRule()
    trace = SolveTrace("nesterov", options.pop("keep_iterates", False))
    reference = options.pop("reference", None)
    recorder = _Recorder(mdp, trace, stop, reference, **options)
    momentum = nesterov_momentum(mdp.gamma)
    damping = 1.0 / (1.0 + mdp.gamma)
    v = _initial_values(mdp, v0)
    v_prev = v

    k = 0
    while True:
        tv, actions = bellman_sweep(mdp, v)
        if recorder.record(k, v, tv, actions):
            break
        if k == 0:
            z, tz = v, tv
        else:
            z = v + momentum * (v - v_prev)
            tz = bellman_optimality(mdp, z)
        v_prev, v = v, z + damping * (tz - z)
        k += 1
    return recorder.finish(v)


def run_anderson_vi(mdp, v0=None, stop=None, **options):
    """Anderson-accelerated VI with memory one and ``v_{-1} = v_0``.

    ``delta_k = z'(v_k - T(v_k)) / z'(z - z')`` with ``z = v_k - v_{k-1}``
    and ``z' = T(v_k) - T(v_{k-1})``; ``delta_k = 0`` on a vanishing
    denominator. ``v_{k+1} = (1 - delta_k) T(v_k) + delta_k T(v_{k-1})``.
    """
    stop = stop or StopRule()
    trace = SolveTrace("anderson", options.pop("keep_iterates", False))
    reference = options.pop("reference", None)
    recorder = _Recorder(mdp, trace, stop, reference, **options)
    v = _initial_values(mdp, v0)
    v_prev = tv_prev = None

    k = 0
    while True:
        tv, actions = bellman_sweep(mdp, v)
        if recorder.record(k, v, tv, actions):
            break
        if v_prev is None:
            v_prev, tv_prev = v, tv
        z = v - v_prev
        z_prime = tv - tv_prev
        denominator = float(z @ (z - z_prime))
        if denominator == 0.0 or abs(denominator) <= ANDERSON_RTOL * float(
            z @ z
        ):
            delta = 0.0
        else:
            delta = float(z @ (v - tv)) / denominator
        v_next = (1.0 - delta) * tv + delta * tv_prev
        v_prev, tv_prev, v = v, tv, v_next
        k += 1
    return recorder.finish(v)


PLANNERS = {
    "vi": run_vi,
    "pi": run_pi,
    "pi_classic": run_pi_classic,
    "r1vi": run_r1vi,
    "mpi": run_mpi,
    "r1mpi": lambda mdp, **kw: run_mpi(mdp, rank_one=True, **kw),
    "nesterov": run_nesterov_vi,
    "anderson": run_anderson_vi,
}


def solve_reference(mdp, tol=REFERENCE_TOL, max_iters=1000):
    """Optimal values ``v*`` by policy iteration run to convergence.

    :returns: tuple -- ``(v*, optimal policy)``.
    """
    trace = run_pi(mdp, stop=StopRule(bellman_tol=tol, max_iters=max_iters))
    if not trace.converged:
        logger.warning(
            f"Reference PI stopped with Bellman error "
            f"{trace.final_bellman_err:.3e} > {tol:.0e}"
        )
    return trace.v, greedy_policy(mdp, trace.v)


def policy_iteration_q(mdp, q0=None, tol=REFERENCE_TOL, max_iters=1000):
    """Policy iteration on Q-functions in resolvent form.

    ``q_{k+1} = q_k + (I - gamma P-bar_k)^{-1} (T-bar(q_k) - q_k)`` where
    ``P-bar_k`` is the state-action chain of the greedy policy of ``q_k``.

    :returns: numpy.ndarray -- the optimal Q-function.
    """
    q = np.zeros(mdp.size) if q0 is None else np.array(q0, dtype=float)
    identity = np.eye(mdp.size)
    previous = None
    for k in range(max_iters + 1):
        policy = greedy_policy_q(q, mdp.m)
        residual = bellman_q(mdp, q) - q
        if np.max(np.abs(residual)) <= tol and (
            previous is not None and np.array_equal(policy, previous)
        ):
            break
        p_bar = np.zeros((mdp.size, mdp.size))
        p_bar[:, policy_rows(mdp, check_policy(mdp, policy))] = mdp.kernel
        q = q + solve_regular(identity - mdp.gamma * p_bar, residual)
        previous = policy
    logger.debug(f"Q policy iteration stopped after {k} iterations")
    return q


def solve_reference_q(mdp):
    """Optimal Q-function via ``q* = c + gamma P v*``."""
    v_star, _ = solve_reference(mdp)
    return q_from_values(mdp, v_star)
