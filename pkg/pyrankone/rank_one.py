"""Stationary distributions and the rank-one approximation ``1 d^T``.

The rank-one solvers replace the transition matrix of the greedy policy by
``1 d^T`` with ``d`` its (estimated) stationary distribution. The inverse of
``I - gamma 1 d^T`` is available in closed form, so applying it costs one inner
product.
"""

import logging

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components

from .mdp import DimensionMismatchError, MdpError

logger = logging.getLogger(__name__)

# Rounding noise below this magnitude is clamped away after a power step.
CLAMP_TOL = 1e-14
SIMPLEX_TOL = 1e-10
ORACLE_MAX_SIZE = 64


class NonUniqueStationaryError(MdpError):
    """Chain has more than one stationary distribution."""


class ConvergenceFailureError(MdpError):
    """Eigenvalue computation did not converge."""


def _square(matrix):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionMismatchError(
            f"Expected a square matrix, got shape {matrix.shape}"
        )
    return matrix


def uniform_distribution(size):
    """Uniform element of the simplex."""
    return np.full(size, 1.0 / size)


def is_distribution(d, tol=SIMPLEX_TOL):
    """True when ``d`` is nonnegative and sums to one within ``tol``."""
    d = np.asarray(d, dtype=np.float64)
    return bool(np.all(d >= 0) and abs(d.sum() - 1.0) <= tol)


def normalize(f):
    """Clamps rounding negatives and rescales ``f`` to unit 1-norm."""
    f = np.where((f < 0) & (f > -CLAMP_TOL), 0.0, f)
    return f / np.abs(f).sum()


def power_step(p, d):
    """One normalized power-method step ``P^T d / |P^T d|_1``.

    :param p: row-stochastic matrix.
    :type p: numpy.ndarray.
    :param d: distribution of matching length.
    :type d: numpy.ndarray.
    :returns: numpy.ndarray -- the next distribution estimate.
    :raises: DimensionMismatchError
    """
    p = _square(p)
    d = np.asarray(d, dtype=np.float64)
    if d.shape != (p.shape[0],):
        raise DimensionMismatchError(
            f"Distribution has shape {d.shape}, expected ({p.shape[0]},)"
        )
    return normalize(d @ p)


def power_method(p, d, steps):
    """Runs ``steps`` power steps from ``d`` and returns every estimate."""
    estimates = [np.asarray(d, dtype=np.float64)]
    for _ in range(steps):
        estimates.append(power_step(p, estimates[-1]))
    return estimates


def exact_stationary(p):
    """Unique stationary distribution of ``p`` via a direct linear solve.

    The last equation of ``(P^T - I) d = 0`` is replaced by ``sum(d) = 1``.

    :param p: row-stochastic matrix of an ergodic chain.
    :type p: numpy.ndarray.
    :raises: NonUniqueStationaryError
    """
    p = _square(p)
    n = p.shape[0]
    system = p.T - np.eye(n)
    if np.linalg.matrix_rank(system) < n - 1:
        raise NonUniqueStationaryError(
            "Chain has several closed classes, stationary distribution is "
            "not unique"
        )
    system[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        d = scipy.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise NonUniqueStationaryError(str(exc)) from exc
    return normalize(d)


def is_ergodic(p):
    """Irreducible and aperiodic check on the support graph of ``p``."""
    p = _square(p)
    support = p > 0
    components, _ = connected_components(
        support, directed=True, connection="strong"
    )
    if components != 1:
        return False
    # Primitive iff some power is positive; Wielandt bounds the exponent.
    n = p.shape[0]
    reach = support.astype(np.int64)
    step = reach.copy()
    for _ in range((n - 1) ** 2 + 1):
        if np.all(reach > 0):
            return True
        reach = np.minimum(reach @ step, 1)
    return bool(np.all(reach > 0))


def rank_one_coefficient(gamma, power=1):
    """Scalar ``gamma**power / (1 - gamma)`` multiplying ``<d, r> 1``."""
    return gamma**power / (1.0 - gamma)


def rank_one_correct(d, gamma, r):
    """Applies ``(I - gamma 1 d^T)^{-1}`` to ``r`` in closed form.

    :returns: numpy.ndarray -- ``r + gamma / (1 - gamma) <d, r> 1``.
    :raises: DimensionMismatchError
    """
    d = np.asarray(d, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if d.shape != r.shape or d.ndim != 1:
        raise DimensionMismatchError(
            f"Distribution {d.shape} and residual {r.shape} do not match"
        )
    return r + rank_one_coefficient(gamma) * float(d @ r)


def rank_one_gain(d, gamma):
    """Dense ``I + gamma / (1 - gamma) 1 d^T``; meant for checks only."""
    d = np.asarray(d, dtype=np.float64)
    return np.eye(d.size) + rank_one_coefficient(gamma) * np.outer(
        np.ones(d.size), d
    )


def eigenvalue_moduli(a):
    """Eigenvalue moduli of ``a`` sorted in decreasing order.

    :raises: ConvergenceFailureError, DimensionMismatchError
    """
    a = _square(a)
    if a.shape[0] > ORACLE_MAX_SIZE:
        raise DimensionMismatchError(
            f"Eigen-oracle is limited to {ORACLE_MAX_SIZE} states"
        )
    if a.size == 0:
        return np.zeros(0)
    try:
        values = scipy.linalg.eigvals(a)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ConvergenceFailureError(str(exc)) from exc
    return np.sort(np.abs(values))[::-1]


def spectral_radius(a):
    """Largest eigenvalue modulus of a square matrix."""
    moduli = eigenvalue_moduli(a)
    return float(moduli[0]) if moduli.size else 0.0


def subdominant_modulus(p):
    """Second largest eigenvalue modulus ``|lambda_2|`` of ``p``."""
    moduli = eigenvalue_moduli(p)
    return float(moduli[1]) if moduli.size > 1 else 0.0
