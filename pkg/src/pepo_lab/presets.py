"""Pinned configurations for ``reproduce <figure_id>``."""

from __future__ import annotations

import copy
from pathlib import Path

from .config import ConfigError, ExperimentConfig, parse_config
from .figures import plot_panels
from .runner import run_experiment, write_csv

PI_DATA = [[0.04, 0.93, 0.03]]
PI_REF_UNKNOWN = [[0.00025, 0.00025, 0.9995]]
TOY_REWARD = {"kind": "gaussian", "means": [[1.0, 1.5, 1.0]], "variances": [[1.5, 0.5, 1.5]]}
GRID_3ARM = [200 * 2**k for k in range(8)]       # 200 ... 25600
SEEDS5 = [0, 1, 2, 3, 4]


def _env(pi_ref=None, reward=None):
    return {"pi_data": PI_DATA, "pi_ref": pi_ref or PI_DATA,
            "reward": reward or TOY_REWARD, "r_max": 3.0}


def _arms20():
    means = [1.0] * 20
    variances = [1.0] * 20
    # optimal arm placed away from index 0 so lowest-index tie-breaking cannot favour it
    means[7], variances[7] = 2.9, 0.5
    return {"pi_data": [[0.05] * 20], "r_max": 3.0,
            "reward": {"kind": "gaussian", "means": [means], "variances": [variances]}}


KNOWN = {
    "experiment": "exp-known",
    "title": "3-arm bandit, known data policy (pi_ref = pi_data)",
    "seed": 0,
    "env": _env(),
    "defaults": {"beta": 0.1, "L": 3, "chi2_gamma": 0.1},
    "algorithms": ["pepo", "chi2po", "dpo", "sft-dpo"],
    "sweep": {"N": GRID_3ARM, "L": [3], "seeds": SEEDS5},
    "eval": {"metric": "suboptimality"},
}

UNKNOWN = {
    "experiment": "exp-unknown",
    "title": "3-arm bandit, unknown data policy (beta = 0.001)",
    "seed": 0,
    "env": _env(PI_REF_UNKNOWN),
    "defaults": {"beta": 0.001, "L": 3, "chi2_gamma": 0.001},
    "algorithms": ["pepo", "chi2po", "dpo", "sft-dpo"],
    "sweep": {"N": GRID_3ARM, "L": [3], "seeds": SEEDS5},
    "eval": {"metric": "suboptimality"},
}

ABLATION_L = {
    "experiment": "exp-ablation-L",
    "title": "20-arm bandit, ensemble size ablation",
    "seed": 0,
    "env": _arms20(),
    "defaults": {"beta": 0.1},
    "algorithms": ["pepo"],
    "sweep": {"N": [25 * 2**k for k in range(8)], "L": [1, 2, 3, 5, 8], "seeds": SEEDS5},
    "eval": {"metric": "prob_optimal_action"},
}

BETA0_KNOWN = {
    "experiment": "exp-beta0-known",
    "title": "beta = 0, known data policy",
    "seed": 0,
    "env": _env(),
    "defaults": {"L": 3, "chi2_gamma": 40.0},
    "algorithms": ["rl", "chi2rl", "perl"],
    "sweep": {"N": [50 * 2**k for k in range(10)], "L": [3], "seeds": SEEDS5},
    "eval": {"beta": 0.0, "metric": "suboptimality"},
}

BETA0_UNKNOWN = {**copy.deepcopy(BETA0_KNOWN), "experiment": "exp-beta0-unknown",
                 "title": "beta = 0, unknown data policy", "env": _env(PI_REF_UNKNOWN)}

# deterministic-reward version of the known environment for the rate check
RATE = {
    "experiment": "exp-rate",
    "title": "PEPO suboptimality vs N (fixed rewards, beta = 0.1)",
    "seed": 0,
    "env": _env(reward={"kind": "fixed", "values": [[1.0, 1.5, 1.0]]}),
    "defaults": {"beta": 0.1, "L": 3},
    "algorithms": ["pepo"],
    "sweep": {"N": [400 * 2**k for k in range(7)], "L": [3], "seeds": list(range(20))},
    "eval": {"metric": "suboptimality"},
}

FIGURES = {
    "known": ([KNOWN], "suboptimality", True),
    "unknown": ([UNKNOWN], "suboptimality", False),
    "ablation_l": ([ABLATION_L], "prob_optimal_action", False),
    "beta0": ([BETA0_KNOWN, BETA0_UNKNOWN], "suboptimality", False),
    "rate": ([RATE], "suboptimality", True),
}


def figure_configs(figure_id: str, seed: int | None = None) -> list[ExperimentConfig]:
    if figure_id not in FIGURES:
        raise ConfigError(f"unknown figure id {figure_id!r}; known: {', '.join(FIGURES)}")
    return [parse_config(copy.deepcopy(d), seed) for d in FIGURES[figure_id][0]]


def reproduce(figure_id: str, out_dir, seed: int | None = None, jobs: int = 1,
              record_time: bool = False, plot: bool = True):
    """Run the pinned configs for ``figure_id``; returns ``(rows, csv path, svg path)``."""
    cfgs = figure_configs(figure_id, seed)
    metric, logy = FIGURES[figure_id][1], FIGURES[figure_id][2]
    out_dir = Path(out_dir)
    rows, panels = [], []
    for cfg in cfgs:
        r = run_experiment(cfg, jobs)
        rows += r
        panels.append((cfg.title or cfg.experiment, r))
    csv_path = out_dir / f"{figure_id}.csv"
    write_csv(rows, csv_path, record_time)
    svg_path = None
    if plot:
        svg_path = plot_panels(panels, out_dir / f"{figure_id}.svg", metric, logy=logy)
    return rows, csv_path, svg_path
