import copy

import fsspec
from yaml import load
from yaml import YAMLError

try:
    from yaml import CSafeLoader as SafeLoader
except ImportError:
    from yaml import SafeLoader

SETTINGS_FILE = "bench.yaml"
NUMBER = (int, float)
DEFAULT_GAMMAS = [0.9, 0.95, 0.99, 0.999]
# Error thresholds per environment and metric, aligned with
# ``threshold_gammas``.
DEFAULT_THRESHOLDS = {
    "garnet": {
        "value": [1e-5, 1e-4, 1e-4, 1e-2],
        "bellman": [1e-5, 1e-5, 1e-5, 1e-4],
    },
    "graph": {
        "value": [1e-5, 1e-4, 1e-3, 1e-2],
        "bellman": [1e-5, 1e-5, 1e-5, 1e-4],
    },
    "gridworld": {
        "value": [1e-5, 1e-4, 1e-4, 1e-2],
        "bellman": [1e-5, 1e-5, 1e-5, 1e-4],
    },
}
THRESHOLD_METRICS = ("value", "bellman")
SETTINGS_STRUCT = {
    "env": {
        "type": str,
        "required": True,
        "default": "garnet",
        "dependency": [
            {"value": "garnet", "attribute": ["garnet"]},
            {"value": "graph", "attribute": ["graph"]},
            {"value": "gridworld", "attribute": ["gridworld"]},
        ],
    },
    "garnet": {
        "type": dict,
        "required": False,
        "default": {},
        "struct": {
            "n": {"type": int, "required": True, "default": 200},
            "m": {"type": int, "required": True, "default": 5},
            "branching": {"type": int, "required": True, "default": 10},
        },
    },
    "graph": {
        "type": dict,
        "required": False,
        "default": {},
        "struct": {
            "nodes": {"type": int, "required": True, "default": 6},
            "slip": {"type": NUMBER, "required": True, "default": 0.2},
        },
    },
    "gridworld": {
        "type": dict,
        "required": False,
        "default": {},
        "struct": {
            "rows": {"type": int, "required": True, "default": 5},
            "cols": {"type": int, "required": True, "default": 5},
            "variant": {
                "type": str,
                "required": True,
                "default": "terminal_zero_reward",
            },
            "goal": {
                "type": list,
                "required": True,
                "struct": int,
                "default": None,
            },
            "step_cost": {"type": NUMBER, "required": True, "default": 1.0},
            "goal_reward": {
                "type": NUMBER,
                "required": True,
                "default": 1.0,
            },
        },
    },
    "gammas": {
        "type": list,
        "required": True,
        "struct": NUMBER,
        "default": DEFAULT_GAMMAS,
    },
    "instances": {"type": int, "required": True, "default": 25},
    "seeds": {"type": int, "required": True, "default": 5},
    "algorithms": {
        "type": list,
        "required": True,
        "struct": str,
        "default": None,
    },
    "thresholds": {
        "type": dict,
        "required": True,
        "struct": {},
        "default": DEFAULT_THRESHOLDS,
    },
    "threshold_gammas": {
        "type": list,
        "required": True,
        "struct": NUMBER,
        "default": DEFAULT_GAMMAS,
    },
    "max_iters": {"type": int, "required": True, "default": 100000},
    "iters": {"type": int, "required": True, "default": 5000},
    "master_seed": {"type": int, "required": True, "default": 0},
    "out": {"type": str, "required": True},
    "summary": {"type": str, "required": True, "default": None},
    "threads": {"type": int, "required": True, "default": 1},
    "policy_values": {"type": bool, "required": True, "default": False},
    "log_every": {"type": int, "required": True, "default": 1},
    "mpi_steps": {"type": int, "required": True, "default": 3},
    "power_steps": {"type": int, "required": True, "default": 1},
    "progress": {"type": bool, "required": True, "default": True},
}


class SettingsError(IOError):
    """Error while loading settings"""


class InvalidConfigError(IOError):
    """Error trying to read bench configuration."""


def LoadSettingsFile(filename=SETTINGS_FILE):
    """Loads settings file in yaml (or json) format given file name.

    :param filename: path or fsspec URL of the settings file. 'bench.yaml'
        by default.
    :type filename: str.
    :raises: SettingsError
    """
    try:
        with fsspec.open(filename, "r") as stream:
            data = load(stream, Loader=SafeLoader)
    except (YAMLError, OSError) as e:
        raise SettingsError(e)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise SettingsError(f"Settings file {filename} is not a mapping")
    return data


def ValidateSettings(data):
    """Validates if current settings is valid, filling in defaults.

    :param data: dictionary containing all settings.
    :type data: dict.
    :raises: InvalidConfigError
    """
    unknown = sorted(set(data) - set(SETTINGS_STRUCT))
    if unknown:
        raise InvalidConfigError(f"Unknown settings {unknown}")
    _ValidateSettingsStruct(data, SETTINGS_STRUCT)


def _ValidateSettingsStruct(data, struct):
    """Validates if provided data fits provided structure.

    :param data: dictionary containing settings.
    :type data: dict.
    :param struct: dictionary containing structure information of settings.
    :type struct: dict.
    :raises: InvalidConfigError
    """
    # Validate required elements of the setting.
    for key in struct:
        if struct[key]["required"]:
            _ValidateSettingsElement(data, struct, key)


def _ValidateSettingsElement(data, struct, key):
    """Validates if provided element of settings data fits provided structure.

    :param data: dictionary containing settings.
    :type data: dict.
    :param struct: dictionary containing structure information of settings.
    :type struct: dict.
    :param key: key of the settings element to validate.
    :type key: str.
    :raises: InvalidConfigError
    """
    # Check if data exists. If not, check if default value exists.
    value = data.get(key)
    data_type = struct[key]["type"]
    if value is None:
        try:
            default = struct[key]["default"]
        except KeyError:
            raise InvalidConfigError("Missing required setting %s" % key)
        else:
            data[key] = copy.deepcopy(default)
    # If data exists, Check type of the data
    elif not isinstance(value, data_type) or (
        isinstance(value, bool) and data_type is not bool
    ):
        raise InvalidConfigError(f"Setting {key} should be type {data_type}")
    if data[key] is None:
        return
    # If type of this data is dict, check if structure of the data is valid.
    if data_type is dict:
        _ValidateSettingsStruct(data[key], struct[key]["struct"])
    # If type of this data is list, check if all values in the list is valid.
    elif data_type is list:
        for element in data[key]:
            if not isinstance(element, struct[key]["struct"]):
                raise InvalidConfigError(
                    "Setting %s should be list of %s"
                    % (key, struct[key]["struct"])
                )
    # Check dependency of this attribute.
    dependencies = struct[key].get("dependency")
    if dependencies:
        for dependency in dependencies:
            if data[key] == dependency["value"]:
                for reqkey in dependency["attribute"]:
                    _ValidateSettingsElement(data, struct, reqkey)


class SettingAttribute:
    """A data descriptor that returns validated settings."""

    def __init__(self, name):
        """Create an instance of SettingAttribute.

        :param name: name of the setting.
        :type name: str.
        """
        self.name = name

    def __get__(self, obj, type=None):
        """Accesses value of this setting."""
        if obj is None:
            return self
        return obj.settings.get(self.name)

    def __set__(self, obj, value):
        """Write value of this setting."""
        obj.settings[self.name] = value


class BenchConfig:
    """Validated benchmark configuration.

    Values come from the struct defaults, then the settings file, then
    ``overrides`` (typically command-line flags), later sources winning.

    :param settings_file: path of a yaml/json settings file, optional.
    :type settings_file: str.
    :param overrides: settings taking precedence over the file; ``None``
        values are ignored.
    :type overrides: dict.
    :raises: SettingsError, InvalidConfigError
    """

    env = SettingAttribute("env")
    gammas = SettingAttribute("gammas")
    instances = SettingAttribute("instances")
    seeds = SettingAttribute("seeds")
    algorithms = SettingAttribute("algorithms")
    thresholds = SettingAttribute("thresholds")
    threshold_gammas = SettingAttribute("threshold_gammas")
    max_iters = SettingAttribute("max_iters")
    iters = SettingAttribute("iters")
    master_seed = SettingAttribute("master_seed")
    out = SettingAttribute("out")
    summary = SettingAttribute("summary")
    threads = SettingAttribute("threads")
    policy_values = SettingAttribute("policy_values")
    log_every = SettingAttribute("log_every")
    mpi_steps = SettingAttribute("mpi_steps")
    power_steps = SettingAttribute("power_steps")
    progress = SettingAttribute("progress")

    def __init__(self, settings_file=None, overrides=None):
        self.settings = (
            LoadSettingsFile(settings_file) if settings_file else {}
        )
        for key, value in (overrides or {}).items():
            if value is not None:
                self.settings[key] = value
        ValidateSettings(self.settings)
        self._ValidateValues()

    def __repr__(self):
        return f"BenchConfig(env={self.env!r}, gammas={self.gammas})"

    @property
    def env_params(self):
        """Parameter block of the selected environment."""
        return self.settings[self.env]

    @property
    def summary_path(self):
        """Summary CSV path, next to ``out`` unless set explicitly."""
        if self.summary:
            return self.summary
        stem = self.out[:-4] if self.out.endswith(".csv") else self.out
        return f"{stem}.summary.csv"

    def ThresholdsFor(self, gamma):
        """Thresholds of the current environment for discount ``gamma``.

        The column is the entry of ``threshold_gammas`` closest to
        ``gamma``.

        :returns: dict -- metric name to threshold.
        """
        column = min(
            range(len(self.threshold_gammas)),
            key=lambda i: abs(self.threshold_gammas[i] - gamma),
        )
        table = self.thresholds[self.env]
        return {metric: table[metric][column] for metric in THRESHOLD_METRICS}

    def ValidateAlgorithms(self, known, default):
        """Fills the default algorithm list and rejects unknown names.

        :param known: algorithm names accepted by the sub-command.
        :type known: iterable.
        :param default: list used when none is configured.
        :type default: list.
        :raises: InvalidConfigError
        """
        if self.algorithms is None:
            self.algorithms = list(default)
        if not self.algorithms:
            raise InvalidConfigError("Algorithm list is empty")
        unknown = [name for name in self.algorithms if name not in known]
        if unknown:
            raise InvalidConfigError(
                f"Unknown algorithms {unknown}, expected any of "
                f"{sorted(known)}"
            )

    def _ValidateValues(self):
        if self.env not in DEFAULT_THRESHOLDS:
            raise InvalidConfigError(f"Unknown environment {self.env!r}")
        if not self.gammas:
            raise InvalidConfigError("Setting gammas is empty")
        for gamma in self.gammas:
            if not 0.0 < gamma < 1.0:
                raise InvalidConfigError(f"Discount {gamma} outside (0, 1)")
        for key in (
            "instances",
            "seeds",
            "max_iters",
            "iters",
            "threads",
            "log_every",
            "mpi_steps",
            "power_steps",
        ):
            if self.settings[key] < 1:
                raise InvalidConfigError(f"Setting {key} must be positive")
        if self.master_seed < 0:
            raise InvalidConfigError("Setting master_seed must be >= 0")
        self._ValidateThresholds()

    def _ValidateThresholds(self):
        table = self.thresholds.get(self.env)
        if not isinstance(table, dict):
            raise InvalidConfigError(
                f"Setting thresholds has no entry for {self.env}"
            )
        width = len(self.threshold_gammas)
        for metric in THRESHOLD_METRICS:
            row = table.get(metric)
            if not isinstance(row, list) or len(row) != width:
                raise InvalidConfigError(
                    f"Thresholds {self.env}.{metric} should list {width} "
                    "values"
                )
            for value in row:
                if (
                    not isinstance(value, NUMBER)
                    or isinstance(value, bool)
                    or value <= 0
                ):
                    raise InvalidConfigError(
                        f"Thresholds {self.env}.{metric} should be positive "
                        f"numbers, got {value!r}"
                    )
