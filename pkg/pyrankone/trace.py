"""Per-iteration records of solver runs."""

import time

import numpy as np


class Trace:
    """Series recorded at iterates ``k = 0, ..., iterations``.

    Every series holds ``iterations + 1`` entries: iterate 0 is recorded
    before the first update. ``corrections`` holds the rank-one shift added
    at each update (rank-one solvers only) and therefore has ``iterations``
    entries.
    """

    def __init__(self, algo, keep_iterates=False):
        self.algo = algo
        self.keep_iterates = keep_iterates
        self.bellman_errs = []
        self.value_errs = []
        self.policy_fingerprints = []
        self.policy_value_errs = []
        self.wallclock_ns = []
        self.corrections = []
        self.iterates = []
        self.converged = False
        self.solution = None

    def __len__(self):
        return len(self.bellman_errs)

    def __repr__(self):
        return (
            f"{type(self).__name__}(algo={self.algo!r}, "
            f"iterations={self.iterations}, converged={self.converged})"
        )

    @property
    def iterations(self):
        """Number of updates applied."""
        return max(len(self.bellman_errs) - 1, 0)

    @property
    def final_bellman_err(self):
        return self.bellman_errs[-1] if self.bellman_errs else None

    @property
    def final_value_err(self):
        return self.value_errs[-1] if self.value_errs else None

    def first_below(self, metric, tol):
        """First iterate index whose ``metric`` series is at most ``tol``.

        :param metric: ``"bellman"``, ``"value"`` or ``"policy_value"``.
        :type metric: str.
        :returns: int or None -- None when the threshold is never reached.
        """
        series = {
            "bellman": self.bellman_errs,
            "value": self.value_errs,
            "policy_value": self.policy_value_errs,
        }[metric]
        for k, err in enumerate(series):
            if err is not None and err <= tol:
                return k
        return None


class SolveTrace(Trace):
    """Record of a planning run; ``v`` is the last iterate."""

    def __init__(self, algo, keep_iterates=False):
        super().__init__(algo, keep_iterates)
        self.distributions = []

    @property
    def v(self):
        return self.solution


class LearnTrace(Trace):
    """Record of a learning run; ``q`` is the last iterate."""

    def __init__(self, algo, seed, keep_iterates=False):
        super().__init__(algo, keep_iterates)
        self.seed = seed
        self.sample_digests = []
        self.diverged = False

    @property
    def q(self):
        return self.solution


class Stopwatch:
    """Monotonic per-iteration timer."""

    def __init__(self):
        self._last = time.perf_counter_ns()

    def lap(self):
        now = time.perf_counter_ns()
        elapsed, self._last = now - self._last, now
        return elapsed


def keep(trace, vector):
    """Stores a copy of ``vector`` when the trace keeps iterates."""
    if trace.keep_iterates:
        trace.iterates.append(np.array(vector, copy=True))
