"""SVG line plots of sweep results (metric vs N, mean +- 1 s.e. over seeds)."""

from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

METRIC_LABELS = {
    "suboptimality": r"suboptimality $J_\beta(\pi^\star) - J_\beta(\pi)$",
    "prob_optimal_action": "probability of the optimal action",
    "err_norm": r"$\langle \pi_{data}, \mathrm{Err}^2 \rangle$",
    "abstention_rate": "abstention probability",
}


def summarize(rows, metric: str) -> dict:
    """``{series: (N array, mean array, s.e. array)}``; series split by L when it varies."""
    rows = [r for r in rows if _get(r, "status") == "ok"]
    Ls = defaultdict(set)
    for r in rows:
        Ls[_get(r, "algorithm")].add(int(_get(r, "L")))
    groups = defaultdict(lambda: defaultdict(list))
    for r in rows:
        algo = _get(r, "algorithm")
        name = f"{algo} L={_get(r, 'L')}" if len(Ls[algo]) > 1 else algo
        v = float(_get(r, metric))
        if math.isfinite(v):
            groups[name][int(_get(r, "N"))].append(v)
    out = {}
    for name, byN in groups.items():
        Ns = np.array(sorted(byN))
        vals = [np.asarray(byN[n]) for n in Ns]
        mean = np.array([v.mean() for v in vals])
        se = np.array([v.std(ddof=1) / math.sqrt(len(v)) if len(v) > 1 else 0.0 for v in vals])
        out[name] = (Ns, mean, se)
    return out


def _get(r, key):
    return r[key] if isinstance(r, dict) else getattr(r, key)


def plot_panels(panels, path, metric: str = "suboptimality", title: str = "",
                logy: bool = False):
    """One subplot per ``(panel title, rows)``; writes a self-contained SVG."""
    plt.rcParams["svg.hashsalt"] = "pepo-lab"
    fig, axes = plt.subplots(1, len(panels), figsize=(5.2 * len(panels), 3.8), squeeze=False)
    for ax, (name, rows) in zip(axes[0], panels):
        for series, (Ns, mean, se) in summarize(rows, metric).items():
            line, = ax.plot(Ns, mean, marker="o", ms=3, lw=1.4, label=series)
            ax.fill_between(Ns, mean - se, mean + se, color=line.get_color(), alpha=0.2, lw=0)
        ax.set_xscale("log")
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel("dataset size N")
        ax.set_ylabel(METRIC_LABELS.get(metric, metric))
        ax.set_title(name, fontsize=10)
        ax.grid(alpha=0.3, lw=0.5)
        ax.legend(fontsize=8, frameon=False)
    if title:
        fig.suptitle(title, fontsize=11)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
