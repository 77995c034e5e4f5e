"""YAML experiment configuration."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .experiments import ALGORITHMS, BETA0_ALGORITHMS, Pipeline
from .tabular import HyperParams, TabularEnv

SEED_ENV_VAR = "PEPO_LAB_SEED"
ENSEMBLE_ALGORITHMS = ("pepo", "pepo-meanstd", "perl")
METRICS = ("suboptimality", "prob_optimal_action", "err_norm", "abstention_rate")
_HP_KEYS = {f.name for f in fields(HyperParams)} - {"extra"}


class ConfigError(ValueError):
    """Invalid or unreadable configuration (CLI exit code 2)."""


@dataclass
class AlgorithmSpec:
    name: str
    hp: HyperParams
    label: str = ""

    def display(self) -> str:
        return self.label or self.name


@dataclass
class ExperimentConfig:
    experiment: str
    env: TabularEnv
    algorithms: list
    N: list
    L: list
    seeds: list
    seed: int = 0
    pipeline: Pipeline = field(default_factory=Pipeline)
    eval_beta: float | None = None
    metric: str = "suboptimality"
    output_dir: str = "results"
    csv: str = ""
    plot: bool = True
    title: str = ""

    @property
    def csv_name(self) -> str:
        return self.csv or f"{self.experiment}.csv"


def _require(d, key, where):
    if key not in d:
        raise ConfigError(f"{where}: missing key {key!r}")
    return d[key]


def _int_list(values, where) -> list[int]:
    if isinstance(values, (int, float)):
        values = [values]
    try:
        out = [int(v) for v in values]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: expected integers") from exc
    if not out:
        raise ConfigError(f"{where}: sweep axis is empty")
    return out


def parse_env(d) -> TabularEnv:
    if not isinstance(d, dict):
        raise ConfigError("env: expected a mapping")
    try:
        return TabularEnv.from_dict(d)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"env: {exc}") from exc


def parse_algorithm(d, defaults: dict) -> AlgorithmSpec:
    if isinstance(d, str):
        d = {"name": d}
    name = _require(d, "name", "algorithms[]")
    if name not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {name!r}; registered: {', '.join(ALGORITHMS)}")
    params = {**defaults, **{k: v for k, v in d.items() if k in _HP_KEYS}}
    unknown = set(d) - _HP_KEYS - {"name", "label"}
    if unknown:
        raise ConfigError(f"algorithm {name!r}: unknown keys {sorted(unknown)}")
    try:
        hp = HyperParams(**params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"algorithm {name!r}: {exc}") from exc
    return AlgorithmSpec(name, hp, d.get("label", ""))


def parse_config(d: dict, seed_override: int | None = None) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a parsed mapping.

    Seed precedence: ``seed_override`` (the ``--seed`` flag), then the
    ``PEPO_LAB_SEED`` environment variable, then the file's ``seed``.
    """
    if not isinstance(d, dict):
        raise ConfigError("config root must be a mapping")
    env = parse_env(_require(d, "env", "config"))
    defaults = d.get("defaults", {}) or {}
    bad = set(defaults) - _HP_KEYS
    if bad:
        raise ConfigError(f"defaults: unknown keys {sorted(bad)}")
    algos = [parse_algorithm(a, defaults) for a in _require(d, "algorithms", "config")]
    if not algos:
        raise ConfigError("algorithms: at least one algorithm is required")
    sweep = _require(d, "sweep", "config")
    N = _int_list(_require(sweep, "N", "sweep"), "sweep.N")
    if any(n < 0 for n in N):
        raise ConfigError("sweep.N: sizes must be nonnegative")
    L = _int_list(sweep.get("L", [algos[0].hp.L]), "sweep.L")
    if any(v < 1 for v in L):
        raise ConfigError("sweep.L: ensemble sizes must be positive")
    seeds = _int_list(_require(sweep, "seeds", "sweep"), "sweep.seeds")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("sweep.seeds: seeds must be distinct")
    pipe_d = d.get("pipeline", {}) or {}
    try:
        pipe = Pipeline(**pipe_d)
    except TypeError as exc:
        raise ConfigError(f"pipeline: {exc}") from exc
    if pipe.fit_mode not in ("ascent", "closed-form"):
        raise ConfigError("pipeline.fit_mode must be ascent or closed-form")
    if pipe.p_bar not in ("constant", "theoretical"):
        raise ConfigError("pipeline.p_bar must be constant or theoretical")
    if pipe.label_rule not in ("bt", "argmax"):
        raise ConfigError("pipeline.label_rule must be bt or argmax")
    seed = int(d.get("seed", 0))
    if seed_override is not None:
        seed = int(seed_override)
    elif os.environ.get(SEED_ENV_VAR):
        try:
            seed = int(os.environ[SEED_ENV_VAR])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer") from exc
    if seed < 0:
        raise ConfigError("seed must be nonnegative")
    ev = d.get("eval", {}) or {}
    eval_beta = ev.get("beta")
    if eval_beta is None and any(a.name in BETA0_ALGORITHMS for a in algos):
        eval_beta = 0.0
    metric = ev.get("metric", "suboptimality")
    if metric not in METRICS:
        raise ConfigError(f"eval.metric must be one of {METRICS}")
    out = d.get("output", {}) or {}
    return ExperimentConfig(
        experiment=str(d.get("experiment", "experiment")),
        env=env, algorithms=algos, N=N, L=L, seeds=seeds, seed=seed, pipeline=pipe,
        eval_beta=None if eval_beta is None else float(eval_beta), metric=metric,
        output_dir=str(out.get("dir", "results")), csv=str(out.get("csv", "")),
        plot=bool(out.get("plot", True)), title=str(d.get("title", "")))


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    return parse_config(data, seed_override)
