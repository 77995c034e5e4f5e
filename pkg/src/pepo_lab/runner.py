"""Sweep execution and CSV output."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ENSEMBLE_ALGORITHMS, ExperimentConfig
from .experiments import Cell, ResultRow, run_cell

log = logging.getLogger(__name__)


def build_cells(cfg: ExperimentConfig) -> list[Cell]:
    """One cell per (algorithm, N, L, seed); L only varies for ensemble algorithms."""
    cells = []
    for spec in cfg.algorithms:
        Ls = cfg.L if spec.name in ENSEMBLE_ALGORITHMS else [1]
        for N in cfg.N:
            for L in Ls:
                hp = spec.hp
                if spec.name in ENSEMBLE_ALGORITHMS and hp.L != L:
                    hp = type(hp)(**{**hp.__dict__, "L": L})
                for s in cfg.seeds:
                    cells.append(Cell(cfg.experiment, spec.name, s, N, L, cfg.seed,
                                      cfg.env, hp, cfg.pipeline, cfg.eval_beta, spec.label))
    return cells


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> list[ResultRow]:
    """Run every cell. Output order follows the cell order regardless of ``jobs``."""
    cells = build_cells(cfg)
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run_cell, cells, chunksize=max(1, len(cells) // (4 * jobs))))
    else:
        rows = [run_cell(c) for c in cells]
    failed = sum(r.status != "ok" for r in rows)
    if failed:
        log.warning("%d of %d cells failed in %s", failed, len(rows), cfg.experiment)
    return rows


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return repr(float(v))
    return str(v)


def write_csv(rows, path, record_time: bool = False):
    """Write rows under the fixed header; ``wall_time`` is blank unless ``record_time``.

    Leaving timings out keeps repeated runs byte-identical.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ResultRow.header()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            vals = [_fmt(v) for v in r.as_list()]
            if not record_time:
                vals[header.index("wall_time")] = ""
            w.writerow(vals)


def read_csv(path) -> list[dict]:
    with Path(path).open() as fh:
        return list(csv.DictReader(fh))
