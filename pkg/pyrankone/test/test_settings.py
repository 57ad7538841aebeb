import unittest

import pytest

from pyrankone.settings import (
    DEFAULT_GAMMAS,
    BenchConfig,
    InvalidConfigError,
    LoadSettingsFile,
    SettingsError,
    ValidateSettings,
)
from pyrankone.test.test_util import create_file, settings_file_path


class SettingsTest(unittest.TestCase):
    """Loading and validating benchmark settings files."""

    @pytest.fixture(autouse=True)
    def _tmp(self, tmp_path):
        self.tmp_path = tmp_path

    def test_DefaultsFilled(self):
        cfg = BenchConfig(settings_file_path("default.yaml", self.tmp_path))
        self.assertEqual(cfg.env, "garnet")
        self.assertEqual(cfg.gammas, DEFAULT_GAMMAS)
        self.assertEqual(cfg.instances, 25)
        self.assertEqual(cfg.seeds, 5)
        self.assertEqual(cfg.iters, 5000)
        self.assertEqual(cfg.max_iters, 100000)
        self.assertIsNone(cfg.algorithms)
        self.assertEqual(
            cfg.env_params, {"n": 200, "m": 5, "branching": 10}
        )
        self.assertEqual(cfg.out, "results/plan.csv")
        self.assertEqual(cfg.summary_path, "results/plan.summary.csv")

    def test_DefaultsAreCopies(self):
        cfg = BenchConfig(overrides={"out": "a.csv"})
        cfg.gammas.append(0.5)
        fresh = BenchConfig(overrides={"out": "b.csv"})
        self.assertEqual(fresh.gammas, DEFAULT_GAMMAS)
        self.assertEqual(DEFAULT_GAMMAS, [0.9, 0.95, 0.99, 0.999])

    def test_SmallPlanningFile(self):
        path = settings_file_path("plan_small.yaml", self.tmp_path)
        cfg = BenchConfig(path, overrides={"out": "plan.csv"})
        self.assertEqual(cfg.env_params, {"n": 12, "m": 3, "branching": 4})
        self.assertEqual(cfg.gammas, [0.9, 0.99])
        self.assertEqual(cfg.algorithms, ["vi", "pi", "r1vi"])
        self.assertFalse(cfg.progress)

    def test_JsonFile(self):
        path = settings_file_path("gridworld.json", self.tmp_path)
        cfg = BenchConfig(path, overrides={"out": "grid.csv"})
        self.assertEqual(cfg.env, "gridworld")
        params = cfg.env_params
        self.assertEqual((params["rows"], params["cols"]), (3, 4))
        self.assertEqual(params["variant"], "absorbing_positive_reward")
        self.assertIsNone(params["goal"])
        self.assertEqual(params["step_cost"], 1.0)

    def test_OverridesWin(self):
        path = settings_file_path("plan_small.yaml", self.tmp_path)
        cfg = BenchConfig(
            path,
            overrides={"out": "x.csv", "instances": 9, "master_seed": None},
        )
        self.assertEqual(cfg.instances, 9)
        self.assertEqual(cfg.master_seed, 7)

    def test_MissingOut(self):
        path = settings_file_path("plan_small.yaml", self.tmp_path)
        with self.assertRaises(InvalidConfigError):
            BenchConfig(path)

    def test_BadType(self):
        path = settings_file_path("bad_type.yaml", self.tmp_path)
        with self.assertRaises(InvalidConfigError):
            BenchConfig(path, overrides={"out": "x.csv"})

    def test_BoolIsNotInt(self):
        with self.assertRaises(InvalidConfigError):
            BenchConfig(overrides={"out": "x.csv", "instances": True})

    def test_UnknownKey(self):
        path = settings_file_path("unknown_key.yaml", self.tmp_path)
        with self.assertRaises(InvalidConfigError):
            BenchConfig(path, overrides={"out": "x.csv"})

    def test_ThresholdWidthMismatch(self):
        path = settings_file_path("bad_thresholds.yaml", self.tmp_path)
        with self.assertRaises(InvalidConfigError):
            BenchConfig(path, overrides={"out": "x.csv"})

    def test_MissingFile(self):
        with self.assertRaises(SettingsError):
            LoadSettingsFile(str(self.tmp_path / "absent.yaml"))

    def test_NotAMapping(self):
        path = str(self.tmp_path / "list.yaml")
        create_file(path, "- 1\n- 2\n")
        with self.assertRaises(SettingsError):
            LoadSettingsFile(path)

    def test_EmptyFile(self):
        path = str(self.tmp_path / "empty.yaml")
        create_file(path, "")
        self.assertEqual(LoadSettingsFile(path), {})


def test_default_thresholds_by_gamma():
    cfg = BenchConfig(overrides={"out": "x.csv"})
    assert cfg.ThresholdsFor(0.9) == {"value": 1e-5, "bellman": 1e-5}
    assert cfg.ThresholdsFor(0.99) == {"value": 1e-4, "bellman": 1e-5}
    assert cfg.ThresholdsFor(0.999) == {"value": 1e-2, "bellman": 1e-4}
    graph = BenchConfig(overrides={"out": "x.csv", "env": "graph"})
    assert graph.ThresholdsFor(0.99)["value"] == 1e-3


def test_custom_thresholds(tmp_path):
    path = settings_file_path("custom_thresholds.yaml", tmp_path)
    cfg = BenchConfig(path, overrides={"out": "x.csv"})
    assert cfg.ThresholdsFor(0.6) == {"value": 1e-3, "bellman": 1e-4}
    # Nearest column wins.
    assert cfg.ThresholdsFor(0.999) == {"value": 1e-2, "bellman": 1e-3}


@pytest.mark.parametrize(
    "overrides",
    [
        {"env": "maze"},
        {"gammas": [1.0]},
        {"gammas": [0.0, 0.5]},
        {"instances": 0},
        {"threads": 0},
        {"master_seed": -1},
    ],
)
def test_invalid_values(overrides):
    with pytest.raises(InvalidConfigError):
        BenchConfig(overrides=dict(overrides, out="x.csv"))


def test_validate_algorithms():
    cfg = BenchConfig(overrides={"out": "x.csv"})
    cfg.ValidateAlgorithms({"vi", "pi"}, ["vi"])
    assert cfg.algorithms == ["vi"]
    cfg.algorithms = ["vi", "sarsa"]
    with pytest.raises(InvalidConfigError):
        cfg.ValidateAlgorithms({"vi", "pi"}, ["vi"])
    cfg.algorithms = []
    with pytest.raises(InvalidConfigError):
        cfg.ValidateAlgorithms({"vi"}, ["vi"])


def test_summary_path():
    cfg = BenchConfig(overrides={"out": "runs/out"})
    assert cfg.summary_path == "runs/out.summary.csv"
    cfg = BenchConfig(overrides={"out": "a.csv", "summary": "b.csv"})
    assert cfg.summary_path == "b.csv"


def test_env_block_validated():
    data = {"env": "graph", "graph": {"nodes": "six"}, "out": "x"}
    with pytest.raises(InvalidConfigError):
        ValidateSettings(data)
