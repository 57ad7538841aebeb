"""Benchmark suites: planning threshold sweeps and learning error curves.

A suite expands a :class:`~pyrankone.settings.BenchConfig` into independent
runs, executes them on a thread pool and writes one CSV row per logged
iterate plus a quantile summary. Rows are sorted by run key before writing,
so the output does not depend on scheduling.
"""

import logging
from collections import namedtuple
from concurrent import futures

import numpy as np
import pandas as pd
from tqdm import tqdm

from ..envs import (
    GarnetSpec,
    GridworldSpec,
    gen_garnet,
    gen_graph,
    gen_gridworld,
)
from ..learning import LEARNERS
from ..mdp import bellman_optimality, q_from_values
from ..planning import (
    REFERENCE_TOL,
    StopRule,
    run_mpi,
    run_r1vi,
    PLANNERS,
    solve_reference,
)
from ..rng import derive_seed

logger = logging.getLogger(__name__)

COLUMNS = (
    "run_id",
    "env",
    "gamma",
    "algo",
    "instance",
    "seed",
    "iteration",
    "bellman_err",
    "value_err",
    "policy_value_err",
    "wallclock_ns",
)
PLANNING_SUMMARY_COLUMNS = (
    "env",
    "gamma",
    "algo",
    "metric",
    "threshold",
    "q1",
    "median",
    "q3",
    "reached",
    "unreached",
)
LEARNING_SUMMARY_COLUMNS = (
    "env",
    "gamma",
    "algo",
    "iteration",
    "metric",
    "q1",
    "median",
    "q3",
    "runs",
    "diverged",
)
QUANTILES = (0.25, 0.5, 0.75)
DEFAULT_PLANNING_ALGORITHMS = ("vi", "pi", "r1vi", "nesterov", "anderson")
DEFAULT_LEARNING_ALGORITHMS = ("ql", "speedy", "zap", "r1ql")
# Stream tags keeping model and sample seeds apart.
MODEL_STREAM, SAMPLE_STREAM = 0, 1

ResultRow = namedtuple("ResultRow", COLUMNS)


class EmptyGroupError(ValueError):
    """Quantiles requested over no rows."""


class ReferenceSolutionError(RuntimeError):
    """Reference solution misses its Bellman error bound."""


def run_id(env, gamma, algo, instance, seed=None):
    """Stable identifier of one run."""
    suffix = "" if seed is None else f"-s{seed}"
    return f"{env}-g{gamma}-{algo}-i{instance}{suffix}"


def build_env(cfg, instance, gamma):
    """Model of ``instance`` for the configured environment.

    Garnet and Graph instances are seeded by
    ``derive_seed(master_seed, 0, instance)``; gridworlds are deterministic.

    :returns: pyrankone.mdp.Mdp
    """
    params = cfg.env_params
    seed = derive_seed(cfg.master_seed, MODEL_STREAM, instance)
    if cfg.env == "garnet":
        spec = GarnetSpec(
            params["n"], params["m"], params["branching"], seed=seed
        )
        return gen_garnet(spec, gamma)
    if cfg.env == "graph":
        return gen_graph(params["nodes"], params["slip"], seed, gamma)
    spec = GridworldSpec(
        params["rows"],
        params["cols"],
        params["variant"],
        params["goal"],
        params["step_cost"],
        params["goal_reward"],
    )
    return gen_gridworld(spec, gamma)


def sample_seed(cfg, instance, seed):
    """Sample-stream key shared by every learner of ``(instance, seed)``."""
    return derive_seed(cfg.master_seed, SAMPLE_STREAM, instance, seed)


def certified_reference(mdp):
    """Optimal values checked against the reference tolerance.

    :raises: ReferenceSolutionError
    """
    v_star, policy = solve_reference(mdp)
    residual = float(np.max(np.abs(bellman_optimality(mdp, v_star) - v_star)))
    if residual > REFERENCE_TOL:
        raise ReferenceSolutionError(
            f"Reference Bellman error {residual:.3e} exceeds "
            f"{REFERENCE_TOL:.0e} for {mdp!r}"
        )
    return v_star, policy


def logged_iterations(trace, log_every):
    """Iterates written to CSV: every ``log_every``-th and the last."""
    last = len(trace) - 1
    steps = list(range(0, last + 1, log_every))
    if steps and steps[-1] != last:
        steps.append(last)
    return steps


def trace_rows(trace, env, gamma, instance, seed, log_every=1):
    """One :class:`ResultRow` per logged iterate of ``trace``."""
    identifier = run_id(env, gamma, trace.algo, instance, seed)
    return [
        ResultRow(
            identifier,
            env,
            gamma,
            trace.algo,
            instance,
            seed,
            k,
            trace.bellman_errs[k],
            trace.value_errs[k],
            trace.policy_value_errs[k],
            trace.wallclock_ns[k],
        )
        for k in logged_iterations(trace, log_every)
    ]


def rows_frame(rows):
    """Result rows as a frame with the CSV column order."""
    return pd.DataFrame.from_records(rows, columns=COLUMNS)


def write_csv(frame, path):
    """Writes ``frame``; missing metrics become empty fields."""
    frame.to_csv(path, index=False, na_rep="")
    logger.info(f"Wrote {len(frame)} rows to {path}")


def aggregate_quantiles(rows, value, by=("env", "gamma", "algo", "iteration")):
    """First quartile, median and third quartile of ``value`` per group.

    Quantiles use linear interpolation between order statistics; rows with
    a missing ``value`` are ignored.

    :param rows: result rows or a frame holding them.
    :type rows: list or pandas.DataFrame.
    :param value: column to aggregate.
    :type value: str.
    :param by: grouping columns.
    :type by: tuple.
    :returns: pandas.DataFrame -- ``by`` columns plus ``q1, median, q3``.
    :raises: EmptyGroupError
    """
    frame = rows if isinstance(rows, pd.DataFrame) else rows_frame(rows)
    if frame.empty:
        raise EmptyGroupError(f"No rows with a {value} to aggregate")
    counts = frame.groupby(list(by), sort=True)[value].count()
    if (counts == 0).any():
        empty = counts[counts == 0].index[0]
        raise EmptyGroupError(f"Group {empty} has no {value} to aggregate")
    frame = frame.dropna(subset=[value]).astype({value: float})
    table = (
        frame.groupby(list(by), sort=True)[value]
        .quantile(list(QUANTILES), interpolation="linear")
        .unstack()
    )
    table.columns = ["q1", "median", "q3"]
    return table.reset_index()


def _map_runs(tasks, call, cfg, description):
    """Runs ``call(*task)`` for every task and returns results in order."""
    results = [None] * len(tasks)
    with futures.ThreadPoolExecutor(max_workers=cfg.threads) as executor:
        pending = {
            executor.submit(call, *task): index
            for index, task in enumerate(tasks)
        }
        with tqdm(
            total=len(tasks),
            desc=description,
            unit="run",
            disable=not cfg.progress,
        ) as progress:
            for future in futures.as_completed(pending):
                results[pending[future]] = future.result()
                progress.update()
    return results


def _reference_task(cfg, instance, gamma):
    mdp = build_env(cfg, instance, gamma)
    v_star, _ = certified_reference(mdp)
    return mdp, v_star


def _plan(cfg, mdp, algo, stop, v_star):
    options = {"reference": v_star, "policy_values": cfg.policy_values}
    if algo in ("mpi", "r1mpi"):
        return run_mpi(
            mdp,
            steps=cfg.mpi_steps,
            rank_one=algo == "r1mpi",
            stop=stop,
            power_steps=cfg.power_steps,
            **options,
        )
    if algo == "r1vi":
        return run_r1vi(
            mdp, stop=stop, power_steps=cfg.power_steps, **options
        )
    return PLANNERS[algo](mdp, stop=stop, **options)


def _planning_task(cfg, instance, gamma, algo, mdp, v_star):
    thresholds = cfg.ThresholdsFor(gamma)
    stop = StopRule(
        bellman_tol=thresholds["bellman"],
        value_tol=thresholds["value"],
        max_iters=cfg.max_iters,
    )
    trace = _plan(cfg, mdp, algo, stop, v_star)
    reached = {
        metric: trace.first_below(metric, tol)
        for metric, tol in thresholds.items()
    }
    if None in reached.values():
        logger.warning(
            f"{run_id(cfg.env, gamma, algo, instance)}: threshold "
            f"unreachable within {cfg.max_iters} iterations"
        )
    rows = trace_rows(trace, cfg.env, gamma, instance, None, cfg.log_every)
    return rows, reached


def planning_summary(cfg, outcomes):
    """Iterations-to-threshold quantiles per ``(env, gamma, algo, metric)``.

    :param outcomes: ``(gamma, algo, {metric: iterations or None})`` per run.
    :returns: pandas.DataFrame
    """
    records = []
    for gamma, algo, reached in outcomes:
        thresholds = cfg.ThresholdsFor(gamma)
        for metric, iterations in reached.items():
            records.append(
                {
                    "env": cfg.env,
                    "gamma": gamma,
                    "algo": algo,
                    "metric": metric,
                    "threshold": thresholds[metric],
                    "iterations": iterations,
                }
            )
    frame = pd.DataFrame.from_records(records)
    keys = ["env", "gamma", "algo", "metric", "threshold"]
    counts = frame.groupby(keys, sort=True)["iterations"].agg(
        reached="count", unreached=lambda s: int(s.isna().sum())
    )
    hits = frame.dropna(subset=["iterations"])
    if not hits.empty:
        quantiles = aggregate_quantiles(hits, "iterations", by=keys)
        summary = counts.reset_index().merge(quantiles, on=keys, how="left")
    else:
        summary = counts.reset_index()
        for column in ("q1", "median", "q3"):
            summary[column] = np.nan
    return summary[list(PLANNING_SUMMARY_COLUMNS)]


def run_planning_suite(cfg):
    """Threshold sweep of planning algorithms.

    For every ``(gamma, instance)`` the model is built and its optimal
    values certified by policy iteration; every configured planner then runs
    until both the Bellman and the value thresholds of ``gamma`` hold or
    ``max_iters`` updates are spent. Unreached thresholds are counted in the
    summary, never raised.

    :param cfg: validated configuration with ``out`` set.
    :type cfg: pyrankone.settings.BenchConfig.
    :returns: tuple -- ``(rows frame, summary frame)``, both also written.
    """
    cfg.ValidateAlgorithms(PLANNERS, DEFAULT_PLANNING_ALGORITHMS)
    groups = [
        (cfg, instance, gamma)
        for gamma in cfg.gammas
        for instance in range(cfg.instances)
    ]
    references = _map_runs(groups, _reference_task, cfg, "references")
    tasks = [
        (cfg, instance, gamma, algo, mdp, v_star)
        for (_, instance, gamma), (mdp, v_star) in zip(groups, references)
        for algo in cfg.algorithms
    ]
    results = _map_runs(tasks, _planning_task, cfg, "planning")
    rows, outcomes = [], []
    for task, (run_rows, reached) in zip(tasks, results):
        rows.extend(run_rows)
        outcomes.append((task[2], task[3], reached))
    frame = rows_frame(sorted(rows, key=_row_key))
    summary = planning_summary(cfg, outcomes)
    write_csv(frame, cfg.out)
    write_csv(summary, cfg.summary_path)
    return frame, summary


def _learning_reference(cfg, instance, gamma):
    mdp = build_env(cfg, instance, gamma)
    v_star, _ = certified_reference(mdp)
    return mdp, v_star, q_from_values(mdp, v_star)


def _learning_task(cfg, instance, gamma, seed, algo, mdp, v_star, q_star):
    trace = LEARNERS[algo](
        mdp,
        seed=sample_seed(cfg, instance, seed),
        iters=cfg.iters,
        reference_q=q_star,
        reference_v=v_star,
        policy_values=cfg.policy_values,
    )
    if trace.diverged:
        logger.warning(
            f"{run_id(cfg.env, gamma, algo, instance, seed)}: diverged "
            f"after {trace.iterations} rounds"
        )
    rows = trace_rows(trace, cfg.env, gamma, instance, seed, cfg.log_every)
    return rows, trace.diverged


def learning_summary(frame, env, outcomes):
    """Error quantiles per ``(env, gamma, algo, iteration)`` across
    instances and seeds, for the value and Bellman errors.

    ``runs`` counts the runs behind each row, ``diverged`` the runs of
    ``(env, gamma, algo)`` stopped by the divergence guard.

    :param outcomes: ``(gamma, algo, diverged)`` per run.
    :returns: pandas.DataFrame
    """
    keys = ["env", "gamma", "algo", "iteration"]
    parts = []
    for metric in ("value_err", "bellman_err"):
        table = aggregate_quantiles(frame, metric)
        runs = frame.groupby(keys, sort=True)[metric].count()
        table = table.merge(runs.rename("runs").reset_index(), on=keys)
        table.insert(4, "metric", metric)
        parts.append(table)
    divergences = pd.DataFrame.from_records(
        [
            {"env": env, "gamma": gamma, "algo": algo, "diverged": int(flag)}
            for gamma, algo, flag in outcomes
        ]
    )
    divergences = divergences.groupby(
        ["env", "gamma", "algo"], as_index=False
    )["diverged"].sum()
    summary = pd.concat(parts, ignore_index=True).merge(
        divergences, on=["env", "gamma", "algo"], how="left"
    )
    return summary[list(LEARNING_SUMMARY_COLUMNS)]


def run_learning_suite(cfg):
    """Synchronous learning runs with sample streams shared per seed.

    Every learner of one ``(instance, seed)`` reads the same sample stream,
    so their rows for a round reference identical samples.

    :type cfg: pyrankone.settings.BenchConfig.
    :returns: tuple -- ``(rows frame, summary frame)``, both also written.
    """
    cfg.ValidateAlgorithms(LEARNERS, DEFAULT_LEARNING_ALGORITHMS)
    groups = [
        (cfg, instance, gamma)
        for gamma in cfg.gammas
        for instance in range(cfg.instances)
    ]
    references = _map_runs(groups, _learning_reference, cfg, "references")
    tasks = [
        (cfg, instance, gamma, seed, algo, *reference)
        for (_, instance, gamma), reference in zip(groups, references)
        for seed in range(cfg.seeds)
        for algo in cfg.algorithms
    ]
    results = _map_runs(tasks, _learning_task, cfg, "learning")
    rows, outcomes = [], []
    for task, (run_rows, diverged) in zip(tasks, results):
        rows.extend(run_rows)
        outcomes.append((task[2], task[4], diverged))
    frame = rows_frame(sorted(rows, key=_row_key))
    summary = learning_summary(frame, cfg.env, outcomes)
    write_csv(frame, cfg.out)
    write_csv(summary, cfg.summary_path)
    return frame, summary


def _row_key(row):
    seed = -1 if row.seed is None else row.seed
    return (row.gamma, row.algo, row.instance, seed, row.iteration)
