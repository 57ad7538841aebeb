"""Synchronous sample-based solvers on Q-functions.

Each round draws one next-state sample for every state-action pair from a
counter-based stream, so learners given the same seed see the same samples
whatever else runs beside them. The true model is consulted only to fill the
evaluation metrics of the trace.
"""

import hashlib
import logging

import numpy as np

from .mdp import (
    DimensionMismatchError,
    bellman_q,
    greedy_policy_q,
    policy_evaluation_exact,
    policy_fingerprint,
    q_minimum,
    solve_regular,
)
from .rank_one import is_distribution, uniform_distribution
from .rng import counter_generator
from .trace import LearnTrace, Stopwatch, keep

logger = logging.getLogger(__name__)

DEFAULT_ITERS = 5000


class SampleTable:
    """Next-state samples of one synchronous round.

    :param next_state: sampled successor of every pair, length n * m.
    :param round_index: round ``k`` the samples belong to.
    :param seed: key of the stream.
    """

    def __init__(self, next_state, round_index, seed):
        self.next_state = next_state
        self.round_index = round_index
        self.seed = seed

    def __len__(self):
        return len(self.next_state)

    @property
    def digest(self):
        """Hash of the samples, equal across learners sharing a stream."""
        data = np.ascontiguousarray(self.next_state, dtype=np.int64)
        return hashlib.sha1(data.tobytes()).hexdigest()[:16]


def draw_sample_table(mdp, k, seed):
    """Inverse-CDF samples ``s+ ~ P(.|s,a)`` for round ``k``.

    The uniform for pair ``(s, a)`` is draw ``s * m + a`` of round ``k`` of
    the stream keyed by ``seed``, so the table is a pure function of
    ``(mdp, k, seed)``.

    :returns: SampleTable
    """
    uniforms = counter_generator(seed, k).random(mdp.size)
    next_state = np.count_nonzero(
        mdp.kernel_cdf <= uniforms[:, None], axis=1
    )
    next_state = np.minimum(next_state, mdp.last_support)
    return SampleTable(next_state, k, seed)


class StepSchedule:
    """Step sizes ``lambda_k`` satisfying the Robbins-Monro conditions.

    ``linear``: ``1 / (1 + k)``; ``polynomial``: ``1 / (1 + k)^omega`` with
    ``omega`` in (1/2, 1]; ``rescaled_linear``: ``1 / (1 + tau k)`` with
    ``tau > 0``.

    :raises: ValueError
    """

    KINDS = ("linear", "polynomial", "rescaled_linear")

    def __init__(self, kind="linear", omega=0.8, tau=1.0):
        if kind not in self.KINDS:
            raise ValueError(f"Unknown step schedule {kind!r}")
        if kind == "polynomial" and not 0.5 < omega <= 1.0:
            raise ValueError(f"omega must lie in (1/2, 1], got {omega}")
        if kind == "rescaled_linear" and not tau > 0:
            raise ValueError(f"tau must be positive, got {tau}")
        self.kind = kind
        self.omega = omega
        self.tau = tau

    def __repr__(self):
        return (
            f"StepSchedule({self.kind!r}, omega={self.omega}, "
            f"tau={self.tau})"
        )

    def __call__(self, k):
        if self.kind == "linear":
            return 1.0 / (1.0 + k)
        if self.kind == "polynomial":
            return 1.0 / (1.0 + k) ** self.omega
        return 1.0 / (1.0 + self.tau * k)


def empirical_bellman(mdp, q, table):
    """Empirical operator ``c(s,a) + gamma min_a+ q(s+_k, a+)``.

    :raises: DimensionMismatchError
    """
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (mdp.size,) or len(table) != mdp.size:
        raise DimensionMismatchError(
            f"Q-function {q.shape} or sample table ({len(table)},) does not "
            f"match {mdp.size} state-action pairs"
        )
    return mdp.cost + mdp.gamma * q_minimum(q, mdp.m)[table.next_state]


def greedy_successors(q, m, table):
    """Flat indices ``(s+, argmin_a+ q(s+, a+))`` of the sampled successors."""
    policy = greedy_policy_q(q, m)
    return table.next_state * m + policy[table.next_state]


class _Recorder:
    """Evaluation side of a learning run."""

    def __init__(
        self,
        mdp,
        trace,
        reference_q=None,
        reference_v=None,
        policy_values=False,
    ):
        if policy_values and reference_v is None:
            raise ValueError("policy_values needs the optimal values")
        self.mdp = mdp
        self.trace = trace
        self.reference_q = reference_q
        self.reference_v = reference_v
        self.policy_values = policy_values
        self.stopwatch = Stopwatch()
        self._policy_errs = {}

    def record(self, q):
        """Stores iterate ``q``; False when the iterate is not finite."""
        mdp, trace = self.mdp, self.trace
        if not np.all(np.isfinite(q)):
            trace.diverged = True
            logger.warning(
                f"{trace.algo} (seed {trace.seed}): non-finite iterate after "
                f"{trace.iterations} rounds"
            )
            return False
        trace.bellman_errs.append(float(np.max(np.abs(bellman_q(mdp, q) - q))))
        trace.value_errs.append(
            None
            if self.reference_q is None
            else float(np.max(np.abs(q - self.reference_q)))
        )
        policy = greedy_policy_q(q, mdp.m)
        fingerprint = policy_fingerprint(policy)
        trace.policy_fingerprints.append(fingerprint)
        if self.policy_values:
            if fingerprint not in self._policy_errs:
                v_pi = policy_evaluation_exact(mdp, policy)
                self._policy_errs[fingerprint] = float(
                    np.max(np.abs(v_pi - self.reference_v))
                )
            trace.policy_value_errs.append(self._policy_errs[fingerprint])
        else:
            trace.policy_value_errs.append(None)
        trace.wallclock_ns.append(self.stopwatch.lap())
        keep(trace, q)
        return True

    def finish(self, q):
        trace = self.trace
        trace.solution = q
        trace.converged = not trace.diverged
        logger.debug(
            f"{trace.algo} (seed {trace.seed}): {trace.iterations} rounds, "
            f"final Bellman error {trace.final_bellman_err}"
        )
        return trace


def _initial_q(mdp, q0):
    if q0 is None:
        return np.zeros(mdp.size)
    q0 = np.array(q0, dtype=np.float64)
    if q0.shape != (mdp.size,):
        raise DimensionMismatchError(
            f"Initial Q-function has shape {q0.shape}, "
            f"expected ({mdp.size},)"
        )
    return q0


def _start(mdp, algo, seed, options):
    trace = LearnTrace(algo, seed, options.pop("keep_iterates", False))
    return trace, _Recorder(mdp, trace, **options)


def run_ql(mdp, q0=None, sched=None, seed=0, iters=DEFAULT_ITERS, **options):
    """Synchronous Q-learning.

    ``q_{k+1} = (1 - lambda_k) q_k + lambda_k T_k(q_k)`` with ``T_k`` the
    empirical operator of round ``k``.

    :param mdp: model the samples are drawn from.
    :type mdp: pyrankone.mdp.Mdp.
    :param q0: initial Q-function, zeros by default.
    :param sched: step sizes, ``1 / (1 + k)`` by default.
    :type sched: StepSchedule.
    :param seed: key of the sample stream.
    :type seed: int.
    :param iters: number of rounds.
    :type iters: int.
    :param options: ``reference_q``, ``reference_v``, ``policy_values``,
        ``keep_iterates``.
    :returns: pyrankone.trace.LearnTrace
    """
    sched = sched or StepSchedule()
    trace, recorder = _start(mdp, "ql", seed, options)
    q = _initial_q(mdp, q0)
    for k in range(iters + 1):
        if not recorder.record(q) or k == iters:
            break
        table = draw_sample_table(mdp, k, seed)
        trace.sample_digests.append(table.digest)
        lam = sched(k)
        q = (1.0 - lam) * q + lam * empirical_bellman(mdp, q, table)
    return recorder.finish(q)


def run_speedy_ql(mdp, q0=None, seed=0, iters=DEFAULT_ITERS, **options):
    """Synchronous Speedy Q-learning with ``q_{-1} = q_0``.

    ``q_{k+1} = q_k + lambda_k (z'_k - q_k) + (1 - lambda_k)(z_k - z'_k)``
    where ``z_k`` and ``z'_k`` apply round ``k``'s empirical operator to
    ``q_k`` and ``q_{k-1}``, and ``lambda_k = 1 / (1 + k)``.
    """
    trace, recorder = _start(mdp, "speedy", seed, options)
    q = _initial_q(mdp, q0)
    q_prev = q
    for k in range(iters + 1):
        if not recorder.record(q) or k == iters:
            break
        table = draw_sample_table(mdp, k, seed)
        trace.sample_digests.append(table.digest)
        lam = 1.0 / (1.0 + k)
        z = empirical_bellman(mdp, q, table)
        z_prev = z if q_prev is q else empirical_bellman(mdp, q_prev, table)
        q_prev, q = q, (1.0 - lam) * q + lam * z_prev + (1.0 - lam) * (
            z - z_prev
        )
    return recorder.finish(q)


def average_successor_matrix(p_hat, successors, k):
    """Moves ``p_hat`` toward the one-hot matrix of ``successors`` in place.

    ``P_k = P_{k-1} + (F_k - P_{k-1}) / (2 + k)`` where row ``i`` of ``F_k``
    is one at column ``successors[i]``. Row sums are preserved.

    :returns: numpy.ndarray -- ``p_hat``.
    """
    weight = 1.0 / (2.0 + k)
    p_hat *= 1.0 - weight
    p_hat[np.arange(len(successors)), successors] += weight
    return p_hat


def run_zap_ql(mdp, q0=None, seed=0, iters=DEFAULT_ITERS, **options):
    """Synchronous Zap Q-learning without eligibility traces.

    ``P_k = P_{k-1} + (F_k - P_{k-1}) / (2 + k)`` averages the one-hot
    matrices ``F_k((s,a), (s+, a+)) = 1`` of sampled greedy successors, and
    ``q_{k+1} = q_k + (I - gamma P_k)^{-1} (T_k(q_k) - q_k) / (1 + k)``.
    ``P_{-1}`` is uniform. The gain is applied by a dense direct solve.

    :raises: SingularSystemError
    """
    trace, recorder = _start(mdp, "zap", seed, options)
    q = _initial_q(mdp, q0)
    size = mdp.size
    identity = np.eye(size)
    p_hat = np.full((size, size), 1.0 / size)
    for k in range(iters + 1):
        if not recorder.record(q) or k == iters:
            break
        table = draw_sample_table(mdp, k, seed)
        trace.sample_digests.append(table.digest)
        average_successor_matrix(
            p_hat, greedy_successors(q, mdp.m, table), k
        )
        residual = empirical_bellman(mdp, q, table) - q
        gain = solve_regular(identity - mdp.gamma * p_hat, residual)
        q = q + gain / (1.0 + k)
    return recorder.finish(q)


def run_r1ql(
    mdp,
    q0=None,
    d_init=None,
    sched=None,
    seed=0,
    iters=DEFAULT_ITERS,
    **options,
):
    """Rank-one Q-learning.

    Per round, the stationary estimate is advanced by one power step on the
    sampled greedy chain, ``d_k = (1 - lambda_k) d_{k-1} + lambda_k
    F_k^T d_{k-1}`` (renormalized), with ``F_k^T d`` scattered in O(n m)
    without forming ``F_k``. Then
    ``q_{k+1} = (1 - lambda_k) q_k + lambda_k T_k(q_k) + alpha_k 1`` with
    ``alpha_k = gamma lambda_k / (1 - gamma) <d_k, T_k(q_k) - q_k>``.

    :param d_init: ``d_{-1}`` over state-action pairs, uniform by default.
    :type d_init: numpy.ndarray.
    """
    sched = sched or StepSchedule()
    trace, recorder = _start(mdp, "r1ql", seed, options)
    q = _initial_q(mdp, q0)
    if d_init is None:
        d_hat = uniform_distribution(mdp.size)
    else:
        d_hat = np.array(d_init, dtype=np.float64)
        if d_hat.shape != (mdp.size,) or not is_distribution(d_hat):
            raise ValueError("Initial distribution must lie in the simplex")
    scale = mdp.gamma / (1.0 - mdp.gamma)
    for k in range(iters + 1):
        if not recorder.record(q) or k == iters:
            break
        table = draw_sample_table(mdp, k, seed)
        trace.sample_digests.append(table.digest)
        lam = sched(k)
        scattered = np.bincount(
            greedy_successors(q, mdp.m, table),
            weights=d_hat,
            minlength=mdp.size,
        )
        d_hat = (1.0 - lam) * d_hat + lam * scattered
        d_hat = d_hat / d_hat.sum()
        target = empirical_bellman(mdp, q, table)
        alpha = scale * lam * float(d_hat @ (target - q))
        q = (1.0 - lam) * q + lam * target + alpha
        trace.corrections.append(alpha)
    return recorder.finish(q)


LEARNERS = {
    "ql": run_ql,
    "speedy": run_speedy_ql,
    "zap": run_zap_ql,
    "r1ql": run_r1ql,
}
