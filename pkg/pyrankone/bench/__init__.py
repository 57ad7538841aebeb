from pyrankone.bench.runner import (
    aggregate_quantiles,
    run_learning_suite,
    run_planning_suite,
)

__all__ = ["aggregate_quantiles", "run_learning_suite", "run_planning_suite"]
