"""Finite Markov decision processes and their Bellman operators.

All vectors over state-action pairs use the flat index ``s * m + a``. Value
functions, Q-functions and distributions are plain float64 numpy arrays;
policies are int64 arrays of action indices. Every argmin breaks ties by the
lowest action index.
"""

import hashlib
import json
import logging

import fsspec
import numpy as np
import scipy.linalg
from funcy import cached_property

logger = logging.getLogger(__name__)

STOCHASTIC_TOL = 1e-12
EVALUATION_RTOL = 1e-10


class MdpError(Exception):
    """Base error for malformed models and model-dependent computations."""


class RowNotStochasticError(MdpError):
    """A kernel row is negative somewhere or does not sum to one."""

    def __init__(self, row, deviation):
        self.row = row
        self.deviation = deviation
        super().__init__(
            f"Kernel row {row} is not stochastic (deviation {deviation:.3e})"
        )


class GammaOutOfRangeError(MdpError):
    """Discount factor outside of the open interval (0, 1)."""


class NonFiniteCostError(MdpError):
    """Stage cost contains NaN or infinite entries."""


class DimensionMismatchError(MdpError, ValueError):
    """Vector or matrix shape does not match the model."""


class InvalidActionError(MdpError, ValueError):
    """Policy refers to an action index outside of ``range(m)``."""


class SingularSystemError(MdpError):
    """Linear system expected to be regular turned out singular."""


class MdpFormatError(MdpError):
    """Serialized model document is malformed."""


class Mdp:
    """Finite discounted MDP ``(S, A, P, c, gamma)`` in cost convention.

    :param n: number of states.
    :type n: int.
    :param m: number of actions.
    :type m: int.
    :param kernel: transition probabilities, shape ``(n * m, n)`` or
        ``(n, m, n)``.
    :type kernel: array_like.
    :param cost: stage costs, shape ``(n * m,)`` or ``(n, m)``.
    :type cost: array_like.
    :param gamma: discount factor in (0, 1).
    :type gamma: float.
    :param validate: check the model invariants on construction.
    :type validate: bool.
    :raises: RowNotStochasticError, GammaOutOfRangeError, NonFiniteCostError,
        DimensionMismatchError
    """

    def __init__(self, n, m, kernel, cost, gamma, validate=True):
        self.n = int(n)
        self.m = int(m)
        self.gamma = float(gamma)
        n, m = self.n, self.m
        self.kernel = _frozen(kernel, (n * m, n), "kernel", ((n, m, n),))
        self.cost = _frozen(cost, (n * m,), "cost", ((n, m),))
        if validate:
            validate_mdp(self)

    def __repr__(self):
        name = type(self).__name__
        return f"{name}(n={self.n}, m={self.m}, gamma={self.gamma})"

    @property
    def size(self):
        """Number of state-action pairs."""
        return self.n * self.m

    @cached_property
    def kernel_cube(self):
        """Read-only ``(n, m, n)`` view of the kernel."""
        return self.kernel.reshape(self.n, self.m, self.n)

    @cached_property
    def cost_table(self):
        """Read-only ``(n, m)`` view of the stage cost."""
        return self.cost.reshape(self.n, self.m)

    @cached_property
    def kernel_cdf(self):
        """Row-wise cumulative kernel used for inverse-CDF sampling."""
        cdf = np.cumsum(self.kernel, axis=1)
        cdf.setflags(write=False)
        return cdf

    @cached_property
    def last_support(self):
        """Index of the last positive entry of every kernel row."""
        flipped = self.kernel[:, ::-1] > 0
        return self.n - 1 - np.argmax(flipped, axis=1)

    def with_gamma(self, gamma):
        """Same kernel and costs under another discount factor."""
        return Mdp(self.n, self.m, self.kernel, self.cost, gamma)

    def renormalized(self):
        """Copy of this model with every kernel row rescaled to sum to one.

        Models are never renormalized implicitly; call this on data that is
        known to carry rounding drift.
        """
        kernel = np.clip(self.kernel, 0.0, None)
        kernel = kernel / kernel.sum(axis=1, keepdims=True)
        return Mdp(self.n, self.m, kernel, self.cost, self.gamma)


def _frozen(values, shape, name, accepted=()):
    """Read-only float copy of ``values`` reshaped to ``shape``.

    Only ``shape`` itself and the shapes in ``accepted`` are reshaped.
    """
    array = np.array(values, dtype=np.float64)
    if array.shape != shape and array.shape not in accepted:
        expected = " or ".join(str(s) for s in (shape, *accepted))
        raise DimensionMismatchError(
            f"{name} has shape {array.shape}, expected {expected}"
        )
    array = array.reshape(shape)
    array.setflags(write=False)
    return array


def _check_length(vector, length, what="vector"):
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (length,):
        raise DimensionMismatchError(
            f"{what} has shape {vector.shape}, expected ({length},)"
        )
    return vector


def validate_mdp(mdp):
    """Validates the model invariants.

    :param mdp: model to check.
    :type mdp: Mdp.
    :raises: RowNotStochasticError, GammaOutOfRangeError, NonFiniteCostError
    """
    if not 0.0 < mdp.gamma < 1.0:
        raise GammaOutOfRangeError(
            f"Discount factor {mdp.gamma} is not in (0, 1)"
        )
    if not np.all(np.isfinite(mdp.cost)):
        raise NonFiniteCostError("Stage cost has non-finite entries")
    if not np.all(np.isfinite(mdp.kernel)):
        raise RowNotStochasticError(
            int(np.argmin(np.isfinite(mdp.kernel).all(axis=1))), np.inf
        )
    negative = mdp.kernel.min(axis=1)
    if np.any(negative < 0):
        row = int(np.argmin(negative))
        raise RowNotStochasticError(row, float(-negative[row]))
    deviation = np.abs(mdp.kernel.sum(axis=1) - 1.0)
    row = int(np.argmax(deviation))
    if deviation[row] > STOCHASTIC_TOL:
        raise RowNotStochasticError(row, float(deviation[row]))


def action_values(mdp, v):
    """One-step lookahead ``c(s,a) + gamma * E[v(s+)]`` as an (n, m) table."""
    v = _check_length(v, mdp.n, "value function")
    return mdp.cost_table + mdp.gamma * (mdp.kernel @ v).reshape(mdp.n, mdp.m)


def bellman_sweep(mdp, v):
    """Applies T and extracts the greedy policy in a single pass.

    :param mdp: model.
    :type mdp: Mdp.
    :param v: value function of length n.
    :type v: numpy.ndarray.
    :returns: tuple -- ``(T(v), greedy actions)``.
    :raises: DimensionMismatchError
    """
    table = action_values(mdp, v)
    actions = np.argmin(table, axis=1)
    return table[np.arange(mdp.n), actions], actions


def bellman_optimality(mdp, v):
    """Bellman optimality operator ``T(v)``."""
    return bellman_sweep(mdp, v)[0]


def greedy_policy(mdp, v):
    """Greedy policy with respect to ``v`` (lowest-index tie-breaking)."""
    return bellman_sweep(mdp, v)[1]


def bellman_q(mdp, q):
    """Bellman operator on Q-functions.

    ``[T(q)](s,a) = c(s,a) + gamma * sum_s+ P(s+|s,a) min_a+ q(s+,a+)``.
    """
    q = _check_length(q, mdp.size, "Q-function")
    return mdp.cost + mdp.gamma * (mdp.kernel @ q_minimum(q, mdp.m))


def q_minimum(q, m):
    """Row-wise minimum of a flat Q-function."""
    return np.asarray(q).reshape(-1, m).min(axis=1)


def greedy_policy_q(q, m):
    """Greedy policy ``argmin_a q(s, a)`` of a flat Q-function.

    :param q: Q-function of length n * m.
    :type q: numpy.ndarray.
    :param m: number of actions.
    :type m: int.
    :raises: DimensionMismatchError
    """
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or m < 1 or q.size % m:
        raise DimensionMismatchError(
            f"Q-function of shape {q.shape} does not split into {m} actions"
        )
    return np.argmin(q.reshape(-1, m), axis=1)


def q_from_values(mdp, v):
    """Q-function ``c + gamma * P v`` induced by a value function."""
    return action_values(mdp, v).reshape(-1)


def check_policy(mdp, policy):
    """Returns the policy as an int array, validating every action index.

    :raises: InvalidActionError, DimensionMismatchError
    """
    policy = np.asarray(policy)
    if policy.shape != (mdp.n,):
        raise DimensionMismatchError(
            f"Policy has shape {policy.shape}, expected ({mdp.n},)"
        )
    if not np.issubdtype(policy.dtype, np.integer):
        raise InvalidActionError("Policy entries must be integers")
    if np.any(policy < 0) or np.any(policy >= mdp.m):
        raise InvalidActionError(
            f"Policy uses actions outside of range({mdp.m})"
        )
    return policy.astype(np.int64)


def policy_rows(mdp, policy):
    """Flat state-action indices ``s * m + pi(s)`` selected by a policy."""
    return np.arange(mdp.n) * mdp.m + policy


def policy_fingerprint(policy):
    """Short stable digest of a policy, used to spot policy changes."""
    data = np.ascontiguousarray(policy, dtype=np.int64).tobytes()
    return hashlib.sha1(data).hexdigest()[:16]


class InducedChain:
    """Markov chains induced by a fixed policy.

    :param p_state: ``P^pi``, shape (n, n).
    :param p_state_action: ``P-bar^pi``, shape (n * m, n * m).
    :param cost_pi: ``c^pi``, shape (n,).
    """

    def __init__(self, p_state, p_state_action, cost_pi):
        self.p_state = p_state
        self.p_state_action = p_state_action
        self.cost_pi = cost_pi


def induced_chain(mdp, policy):
    """Builds ``P^pi``, ``P-bar^pi`` and ``c^pi`` for a policy.

    :raises: InvalidActionError
    """
    policy = check_policy(mdp, policy)
    rows = policy_rows(mdp, policy)
    p_state_action = np.zeros((mdp.size, mdp.size))
    p_state_action[:, rows] = mdp.kernel
    return InducedChain(
        mdp.kernel[rows], p_state_action, mdp.cost[rows].copy()
    )


def policy_evaluation_exact(mdp, policy):
    """Solves ``(I - gamma P^pi) v = c^pi`` by LU factorization.

    :param mdp: model.
    :type mdp: Mdp.
    :param policy: deterministic policy.
    :type policy: numpy.ndarray.
    :returns: numpy.ndarray -- the value ``v^pi``.
    :raises: InvalidActionError, SingularSystemError
    """
    policy = check_policy(mdp, policy)
    rows = policy_rows(mdp, policy)
    matrix = np.eye(mdp.n) - mdp.gamma * mdp.kernel[rows]
    return solve_regular(matrix, mdp.cost[rows])


def solve_regular(matrix, rhs):
    """Direct solve of a system that must be regular.

    :raises: SingularSystemError
    """
    try:
        lu = scipy.linalg.lu_factor(matrix, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SingularSystemError("Cannot factorize linear system") from exc
    if np.any(np.diag(lu[0]) == 0):
        raise SingularSystemError("Linear system is singular")
    solution = scipy.linalg.lu_solve(lu, rhs)
    residual = np.max(np.abs(matrix @ solution - rhs), initial=0.0)
    scale = 1.0 + np.max(np.abs(rhs), initial=0.0)
    if residual > EVALUATION_RTOL * scale:
        logger.warning(
            f"Direct solve residual {residual:.3e} exceeds relative "
            f"tolerance {EVALUATION_RTOL:.0e}"
        )
    return solution


def bellman_errors(mdp, v, reference=None):
    """Bellman and value errors of a value function.

    :returns: tuple -- ``(|T(v) - v|_inf, |v - reference|_inf)``; the
        second entry is None without a reference.
    :raises: DimensionMismatchError
    """
    v = _check_length(v, mdp.n, "value function")
    bellman = float(np.max(np.abs(bellman_optimality(mdp, v) - v)))
    return bellman, _distance(v, reference)


def bellman_errors_q(mdp, q, reference=None):
    """Q-function analogue of :func:`bellman_errors` using ``T-bar``."""
    q = _check_length(q, mdp.size, "Q-function")
    bellman = float(np.max(np.abs(bellman_q(mdp, q) - q)))
    return bellman, _distance(q, reference)


def _distance(x, reference):
    if reference is None:
        return None
    reference = np.asarray(reference, dtype=np.float64)
    if reference.shape != x.shape:
        raise DimensionMismatchError(
            f"Reference has shape {reference.shape}, expected {x.shape}"
        )
    return float(np.max(np.abs(x - reference)))


# Model documents: {"n", "m", "gamma", "cost": [n*m], "kernel": [[n]*n*m]}.
DOCUMENT_FIELDS = ("n", "m", "gamma", "cost", "kernel")


def mdp_to_document(mdp):
    """JSON-compatible document describing the model."""
    return {
        "n": mdp.n,
        "m": mdp.m,
        "gamma": mdp.gamma,
        "cost": mdp.cost.tolist(),
        "kernel": mdp.kernel.tolist(),
    }


def mdp_from_document(document):
    """Builds and validates a model from a document.

    :raises: MdpFormatError, MdpError
    """
    if not isinstance(document, dict):
        raise MdpFormatError("Model document must be a mapping")
    missing = [key for key in DOCUMENT_FIELDS if key not in document]
    if missing:
        raise MdpFormatError(f"Model document misses fields {missing}")
    return Mdp(
        document["n"],
        document["m"],
        document["kernel"],
        document["cost"],
        document["gamma"],
    )


def dump_mdp(mdp, path):
    """Writes the model document to ``path`` (any fsspec URL)."""
    with fsspec.open(path, "w") as stream:
        json.dump(mdp_to_document(mdp), stream)
        stream.write("\n")


def load_mdp(path):
    """Reads a model document from ``path`` (any fsspec URL).

    :raises: MdpFormatError, MdpError
    """
    try:
        with fsspec.open(path, "r") as stream:
            document = json.load(stream)
    except json.JSONDecodeError as exc:
        raise MdpFormatError(f"Cannot parse model document {path}") from exc
    return mdp_from_document(document)
