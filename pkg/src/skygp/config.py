"""
Run configuration for the command-line tools.

A run is described by one YAML file with the sections ``kernel``, ``pool``,
``bound``, ``controller``, ``control``, ``dataset`` and ``output`` plus a
top-level ``seed``.  Values are resolved as command defaults, then the file,
then command-line overrides.  The fully resolved mapping is echoed into
every report.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from skygp.control import LEARNING_MODES, ControllerConfig
from skygp.error_bound import BoundParams
from skygp.kernel import Hyperparameters
from skygp.pool import PoolConfig


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


BASE_DEFAULTS = {
    "seed": 0,
    "kernel": None,
    "pool": {},
    "bound": None,
    "controller": {},
    "control": {
        "n_trials": 100,
        "variants": ["fast"],
        "learning": "gp",
        "record": True,
        "max_total_points": None,
        "duration": None,
    },
    "dataset": {
        "path": None,
        "target_column": "y",
        "normalize": False,
        "pretrain_count": None,
        "synthetic": {"kind": "sine", "n": 2000, "noise_dev": 0.1, "dim": None, "seed": None},
    },
    "output": {"dir": "out", "per_step": False, "compare": False},
}

# Settings that worked for the closed-loop task: the disturbance varies
# quickly in position (sin(5 q)) and slowly in velocity.
COMMAND_DEFAULTS = {
    "bench": {"kernel": None},
    "control": {
        "kernel": {"lengthscales": [0.3, 1.0], "signal_dev": 5.0, "noise_dev": 0.05},
        "pool": {"capacity": 50, "max_agg": 2, "max_window": 10},
    },
}

SECTIONS = set(BASE_DEFAULTS)

# command-line flag -> dotted config key
FLAG_KEYS = {
    "mode": "pool.mode",
    "max_agg": "pool.max_agg",
    "max_points": "pool.capacity",
    "window": "pool.max_window",
    "agg": "pool.aggregation",
    "gamma": "pool.decay",
    "theta_bar": "pool.theta_min",
    "rho": "pool.window_scale",
    "seed": "seed",
    "out": "output.dir",
    "per_step": "output.per_step",
    "compare": "output.compare",
    "n_trials": "control.n_trials",
    "variant": "control.variants",
    "learning": "control.learning",
    "duration": "control.duration",
    "dataset": "dataset.path",
}


def deep_merge(base: dict, top: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in top.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_dotted(d: dict, key: str, value) -> None:
    parts = key.split(".")
    for p in parts[:-1]:
        if d.get(p) is None:
            d[p] = {}
        d = d[p]
    d[parts[-1]] = value


def read_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: cannot parse YAML: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(data) - SECTIONS
    if unknown:
        raise ConfigError(f"{path}: unknown section(s) {sorted(unknown)}; allowed {sorted(SECTIONS)}")
    return data


def _check_keys(section: str, given: dict | None, allowed) -> None:
    if given is None:
        return
    if not isinstance(given, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    unknown = set(given) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in section {section!r}")


def _init_fields(cls) -> list[str]:
    return [f.name for f in fields(cls) if f.init]


@dataclass
class RunConfig:
    """Validated run configuration.

    ``raw`` is the resolved mapping; the typed objects are built from it.
    ``hyperparameters`` is ``None`` when the kernel section is omitted, in
    which case unit lengthscales for the dataset dimension are used.
    """

    raw: dict
    hyperparameters: Hyperparameters | None
    pool: PoolConfig
    bound: BoundParams | None
    controller: ControllerConfig

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["output"]["dir"])

    @property
    def control(self) -> dict:
        return self.raw["control"]

    @property
    def dataset(self) -> dict:
        return self.raw["dataset"]

    def echo(self) -> dict:
        """Resolved configuration, JSON-serialisable."""
        return copy.deepcopy(self.raw)


def resolve(command: str, path=None, overrides: dict | None = None) -> RunConfig:
    """Merge defaults, file and overrides (``None`` values are ignored) and validate."""
    raw = deep_merge(BASE_DEFAULTS, COMMAND_DEFAULTS.get(command, {}))
    if path is not None:
        raw = deep_merge(raw, read_file(path))
    for flag, value in (overrides or {}).items():
        if value is None:
            continue
        if flag not in FLAG_KEYS:
            raise ConfigError(f"unknown override {flag!r}")
        set_dotted(raw, FLAG_KEYS[flag], value)
    return validate(raw)


def validate(raw: dict) -> RunConfig:
    _check_keys("pool", raw.get("pool"), _init_fields(PoolConfig))
    _check_keys("bound", raw.get("bound"), _init_fields(BoundParams))
    _check_keys("controller", raw.get("controller"), _init_fields(ControllerConfig))
    _check_keys("kernel", raw.get("kernel"), ("lengthscales", "signal_dev", "noise_dev"))
    _check_keys("control", raw.get("control"), BASE_DEFAULTS["control"])
    _check_keys("dataset", raw.get("dataset"), BASE_DEFAULTS["dataset"])
    _check_keys("dataset.synthetic", raw["dataset"].get("synthetic"), BASE_DEFAULTS["dataset"]["synthetic"])
    _check_keys("output", raw.get("output"), BASE_DEFAULTS["output"])
    try:
        raw["seed"] = int(raw["seed"])
        h = Hyperparameters.from_dict(raw["kernel"]) if raw.get("kernel") else None
        pool = PoolConfig(**(raw.get("pool") or {}))
        bound = BoundParams(**raw["bound"]) if raw.get("bound") else None
        if bound is not None:
            bound.check_agg(pool.max_agg)
        controller = ControllerConfig(**(raw.get("controller") or {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None

    ctl = raw["control"]
    if isinstance(ctl["variants"], str):
        ctl["variants"] = [v.strip() for v in ctl["variants"].split(",") if v.strip()]
    for v in ctl["variants"]:
        if v not in ("fast", "dense"):
            raise ConfigError(f"control variant must be 'fast' or 'dense', got {v!r}")
    if ctl["learning"] not in LEARNING_MODES:
        raise ConfigError(f"control.learning must be one of {LEARNING_MODES}")
    if int(ctl["n_trials"]) < 1:
        raise ConfigError("control.n_trials must be >= 1")
    mtp = ctl["max_total_points"]
    if mtp is not None and int(mtp) < pool.capacity:
        raise ConfigError("control.max_total_points must be at least pool.capacity")

    ds = raw["dataset"]
    if ds.get("path") is None and ds["synthetic"]["kind"] not in ("sine", "rkhs_mixture", "piecewise"):
        raise ConfigError(f"unknown synthetic kind {ds['synthetic']['kind']!r}")

    # canonical echo of the typed sections
    raw["pool"] = pool.to_dict()
    raw["controller"] = controller.to_dict()
    if bound is not None:
        raw["bound"] = bound.to_dict()
    if h is not None:
        raw["kernel"] = h.to_dict()
    return RunConfig(raw, h, pool, bound, controller)
