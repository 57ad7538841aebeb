"""Benchmark model generators.

All generators draw from counter-based streams (:mod:`pyrankone.rng`), so a
parameter set and seed produce a bit-identical model on every platform.
"""

import logging

import numpy as np

from .mdp import Mdp, MdpError
from .rng import counter_generator

logger = logging.getLogger(__name__)

DEFAULT_GAMMA = 0.99

UP, DOWN, LEFT, RIGHT = range(4)
MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}

ABSORBING = "absorbing_positive_reward"
TERMINAL = "terminal_zero_reward"
GRIDWORLD_VARIANTS = (ABSORBING, TERMINAL)


class BranchingTooLargeError(MdpError):
    """Garnet branching factor outside ``[1, n]``."""


class InvalidSlipError(MdpError):
    """Graph slip probability outside ``[0, 1)``."""


class GoalOutOfBoundsError(MdpError):
    """Gridworld goal cell lies outside the grid."""


class GarnetSpec:
    """Garnet family member: ``n`` states, ``m`` actions, ``branching``
    successors per pair.
    """

    def __init__(self, n=200, m=5, branching=10, seed=0):
        self.n = int(n)
        self.m = int(m)
        self.branching = int(branching)
        self.seed = int(seed)

    def __repr__(self):
        return (
            f"GarnetSpec(n={self.n}, m={self.m}, "
            f"branching={self.branching}, seed={self.seed})"
        )


class GraphSpec:
    def __init__(self, nodes=6, slip=0.2, seed=0):
        self.nodes = int(nodes)
        self.slip = float(slip)
        self.seed = int(seed)

    def __repr__(self):
        return (
            f"GraphSpec(nodes={self.nodes}, slip={self.slip}, "
            f"seed={self.seed})"
        )


class GridworldSpec:
    """Deterministic grid with one absorbing goal cell.

    :param rows: grid height.
    :param cols: grid width.
    :param variant: ``absorbing_positive_reward`` or ``terminal_zero_reward``.
    :param goal: ``(row, col)`` of the goal, the last cell by default.
    :param step_cost: cost of every move outside the goal.
    :param goal_reward: reward per step collected at the goal by the
        absorbing variant.
    """

    def __init__(
        self,
        rows=5,
        cols=5,
        variant=TERMINAL,
        goal=None,
        step_cost=1.0,
        goal_reward=1.0,
    ):
        self.rows = int(rows)
        self.cols = int(cols)
        self.variant = variant
        self.goal = tuple(goal) if goal is not None else (rows - 1, cols - 1)
        self.step_cost = float(step_cost)
        self.goal_reward = float(goal_reward)

    def __repr__(self):
        return (
            f"GridworldSpec({self.rows}x{self.cols}, variant={self.variant!r},"
            f" goal={self.goal})"
        )

    @property
    def goal_state(self):
        return self.goal[0] * self.cols + self.goal[1]


def _stick_breaking(rng, rows, branching):
    """Gap lengths of ``branching - 1`` sorted uniform cut points on [0, 1].

    Rows with a zero-length gap are redrawn so the support stays exact.
    """
    probs = np.empty((rows, branching))
    pending = np.arange(rows)
    while pending.size:
        cuts = np.sort(rng.random((pending.size, branching - 1)), axis=1)
        edges = np.hstack(
            [np.zeros((pending.size, 1)), cuts, np.ones((pending.size, 1))]
        )
        gaps = np.diff(edges, axis=1)
        probs[pending] = gaps
        pending = pending[np.any(gaps <= 0.0, axis=1)]
    return probs


def gen_garnet(spec, gamma=DEFAULT_GAMMA):
    """Random Garnet model.

    Each pair picks ``branching`` distinct successors uniformly without
    replacement and splits the unit mass among them by stick breaking.
    Costs are Uniform[0, 1).

    :param spec: family parameters and seed.
    :type spec: GarnetSpec.
    :param gamma: discount factor.
    :type gamma: float.
    :returns: pyrankone.mdp.Mdp
    :raises: BranchingTooLargeError
    """
    n, m, branching = spec.n, spec.m, spec.branching
    if not 1 <= branching <= n:
        raise BranchingTooLargeError(
            f"Branching factor {branching} outside [1, {n}]"
        )
    rng = counter_generator(spec.seed)
    rows = n * m
    # Argsort of i.i.d. keys is a uniform permutation per row.
    successors = np.argsort(rng.random((rows, n)), axis=1)[:, :branching]
    kernel = np.zeros((rows, n))
    np.put_along_axis(
        kernel, successors, _stick_breaking(rng, rows, branching), axis=1
    )
    cost = rng.random(rows)
    logger.debug(f"Generated {spec!r}")
    return Mdp(n, m, kernel, cost, gamma)


def graph_out_neighbors(nodes):
    """Out-neighbors ``{i+1, i+2, i+nodes//2} mod nodes`` without ``i``."""
    neighbors = []
    for i in range(nodes):
        hops = [1, nodes // 2] if nodes <= 2 else [1, 2, nodes // 2]
        targets = sorted({(i + h) % nodes for h in hops} - {i})
        neighbors.append(targets)
    return neighbors


def gen_graph(nodes=6, slip=0.2, seed=0, gamma=DEFAULT_GAMMA):
    """Ring-with-chords navigation model.

    Action ``a`` at node ``i`` heads for its ``a``-th out-neighbor; nodes with
    fewer out-neighbors than the maximum are padded with self-loop actions.
    The chosen move succeeds with probability ``1 - slip``, otherwise the
    walker lands uniformly on one of the out-neighbors. Edge costs are
    Uniform[0, 1).

    :raises: InvalidSlipError, ValueError
    """
    if nodes < 2:
        raise ValueError(f"Graph needs at least 2 nodes, got {nodes}")
    if not 0.0 <= slip < 1.0:
        raise InvalidSlipError(f"Slip probability {slip} outside [0, 1)")
    neighbors = graph_out_neighbors(nodes)
    m = max(len(out) for out in neighbors)
    kernel = np.zeros((nodes * m, nodes))
    for i, out in enumerate(neighbors):
        for a in range(m):
            row = kernel[i * m + a]
            row[out] += slip / len(out)
            row[out[a] if a < len(out) else i] += 1.0 - slip
    cost = counter_generator(seed).random(nodes * m)
    return Mdp(nodes, m, kernel, cost, gamma)


def gen_gridworld(spec=None, gamma=DEFAULT_GAMMA):
    """Gridworld with an absorbing goal, in cost convention.

    States are cells in row-major order and actions are up, down, left and
    right; moves off the grid stay in place. Every action at the goal loops
    back to it. Outside the goal each move costs ``step_cost``; at the goal
    the absorbing variant costs ``-goal_reward`` per step and the terminal
    variant costs nothing.

    :type spec: GridworldSpec.
    :raises: GoalOutOfBoundsError, ValueError
    """
    spec = spec or GridworldSpec()
    rows, cols = spec.rows, spec.cols
    if rows < 1 or cols < 1 or rows * cols < 2:
        raise ValueError(f"Grid {rows}x{cols} needs at least two cells")
    if spec.variant not in GRIDWORLD_VARIANTS:
        raise ValueError(f"Unknown gridworld variant {spec.variant!r}")
    goal_row, goal_col = spec.goal
    if not (0 <= goal_row < rows and 0 <= goal_col < cols):
        raise GoalOutOfBoundsError(
            f"Goal {spec.goal} outside the {rows}x{cols} grid"
        )
    n, m = rows * cols, len(MOVES)
    goal = spec.goal_state
    kernel = np.zeros((n * m, n))
    cost = np.full(n * m, spec.step_cost)
    for s in range(n):
        r, c = divmod(s, cols)
        for a, (dr, dc) in MOVES.items():
            if s == goal:
                target = goal
            else:
                nr, nc = r + dr, c + dc
                inside = 0 <= nr < rows and 0 <= nc < cols
                target = nr * cols + nc if inside else s
            kernel[s * m + a, target] = 1.0
    goal_cost = -spec.goal_reward if spec.variant == ABSORBING else 0.0
    cost[goal * m : (goal + 1) * m] = goal_cost
    return Mdp(n, m, kernel, cost, gamma)


def gen_random_mdp(n, m, gamma=DEFAULT_GAMMA, seed=0):
    """Dense model with Dirichlet(1) kernel rows; every induced chain is
    ergodic with probability one.
    """
    rng = counter_generator(seed)
    kernel = rng.dirichlet(np.ones(n), size=n * m)
    cost = rng.random(n * m)
    return Mdp(n, m, kernel, cost, gamma)


def gen_deterministic_mdp(n, m, gamma=DEFAULT_GAMMA, seed=0):
    """Model whose every kernel row is one-hot."""
    rng = counter_generator(seed)
    successors = rng.integers(0, n, size=n * m)
    kernel = np.zeros((n * m, n))
    kernel[np.arange(n * m), successors] = 1.0
    cost = rng.random(n * m)
    return Mdp(n, m, kernel, cost, gamma)
