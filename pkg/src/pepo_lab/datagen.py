"""Synthetic preference data: generation, tallies and even sharding."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .preference import sigma
from .tabular import FixedReward, TabularEnv

LABEL_RULES = ("bt", "argmax")


@dataclass(frozen=True)
class PreferenceDataset:
    """Comparison triples ``(prompt, winner, loser)`` stored as an ``(n, 3)`` int array."""

    triples: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        t = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "triples", t)

    def __len__(self):
        return len(self.triples)

    @property
    def x(self):
        return self.triples[:, 0]

    @property
    def winner(self):
        return self.triples[:, 1]

    @property
    def loser(self):
        return self.triples[:, 2]

    def subset(self, idx) -> "PreferenceDataset":
        return PreferenceDataset(self.triples[idx], self.seed)

    @classmethod
    def concat(cls, parts) -> "PreferenceDataset":
        parts = list(parts)
        if not parts:
            return cls(np.zeros((0, 3), dtype=np.int64))
        return cls(np.concatenate([p.triples for p in parts]), parts[0].seed)


@dataclass(frozen=True)
class CountTables:
    n_xab: np.ndarray   # (X, A, A) symmetric pair counts
    n_win: np.ndarray   # (X, A, A) ordered win counts, [x, a, b] = #(a beat b)
    n_xa: np.ndarray    # (X, A) appearances of a as a recorded response
    n_x: np.ndarray     # (X,)

    @property
    def total(self) -> int:
        return int(self.n_x.sum())


def _sample_rows(rng, probs, rows):
    """One categorical draw per entry of ``rows`` from ``probs[rows]``."""
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(len(rows))
    return (cdf[rows] < u[:, None]).sum(axis=1)


def generate_dataset(env: TabularEnv, n: int, rng_seed: int,
                     label_rule: str = "bt") -> PreferenceDataset:
    """Draw ``n`` labeled comparisons.

    Prompts come from ``nu0``, both responses i.i.d. from ``pi_data``. Gaussian
    rewards are realized afresh per comparison; the ``bt`` rule then labels by
    ``Bernoulli(sigma(r_A - r_B))`` and ``argmax`` by the larger realization.
    """
    if label_rule not in LABEL_RULES:
        raise ValueError(f"label_rule must be one of {LABEL_RULES}")
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = np.random.default_rng(rng_seed)
    if n == 0:
        return PreferenceDataset(np.zeros((0, 3), dtype=np.int64), rng_seed)
    x = rng.choice(env.num_prompts, size=n, p=env.nu0)
    a = _sample_rows(rng, env.pi_data, x)
    b = _sample_rows(rng, env.pi_data, x)
    if isinstance(env.reward, FixedReward):
        ra = env.reward.values[x, a]
        rb = env.reward.values[x, b]
    else:
        mean, var = env.reward.means, env.reward.variances
        z = rng.standard_normal((2, n))
        ra = mean[x, a] + np.sqrt(var[x, a]) * z[0]
        rb = mean[x, b] + np.sqrt(var[x, b]) * z[1]
    u = rng.random(n)
    if label_rule == "bt":
        a_wins = u < sigma(ra - rb)
    else:
        a_wins = (ra > rb) | ((ra == rb) & (u < 0.5))
    win = np.where(a_wins, a, b)
    lose = np.where(a_wins, b, a)
    return PreferenceDataset(np.stack([x, win, lose], axis=1), rng_seed)


def build_counts(data: PreferenceDataset, env) -> CountTables:
    """Exact tallies of a dataset; ``env`` is a :class:`TabularEnv` or an ``(X, A)`` shape."""
    X, A = (env.num_prompts, env.num_actions) if isinstance(env, TabularEnv) else env
    n_win = np.zeros((X, A, A), dtype=np.int64)
    np.add.at(n_win, (data.x, data.winner, data.loser), 1)
    n_xab = n_win + n_win.transpose(0, 2, 1)
    n_xa = np.zeros((X, A), dtype=np.int64)
    np.add.at(n_xa, (data.x, data.winner), 1)
    np.add.at(n_xa, (data.x, data.loser), 1)
    n_x = np.bincount(data.x, minlength=X).astype(np.int64)
    return CountTables(n_xab, n_win, n_xa, n_x)


def partition(data: PreferenceDataset, l: int, rng_seed: int) -> list[PreferenceDataset]:
    """Split into ``l`` disjoint shards, spreading every repeated triple evenly.

    Triples are ordered by (prompt, unordered pair, ordered pair) and dealt
    round-robin over a seeded permutation of the shards, so each run of equal
    triples, and each unordered pair, lands floor/ceil(m / l) times per shard.
    Shards keep the original relative order of their triples.
    """
    if l < 1:
        raise ValueError("l must be at least 1")
    n = len(data)
    if l == 1:
        return [PreferenceDataset(data.triples.copy(), data.seed)]
    t = data.triples
    lo = np.minimum(t[:, 1], t[:, 2])
    hi = np.maximum(t[:, 1], t[:, 2])
    order = np.lexsort((t[:, 2], t[:, 1], hi, lo, t[:, 0]))
    shard_order = np.random.default_rng(rng_seed).permutation(l)
    assign = np.empty(n, dtype=np.int64)
    assign[order] = shard_order[np.arange(n) % l]
    return [PreferenceDataset(t[assign == s], data.seed) for s in range(l)]


def complement(shards, index: int) -> PreferenceDataset:
    """All shards except ``index``, concatenated."""
    return PreferenceDataset.concat(s for i, s in enumerate(shards) if i != index)


def save_dataset(data: PreferenceDataset, path, env: TabularEnv | None = None):
    path = Path(path)
    env_hash = env.digest() if env is not None else "-"
    lines = [f"# pepo-lab dataset env={env_hash} seed={data.seed} n={len(data)}",
             "# x\twinner\tloser"]
    lines += [f"{x}\t{w}\t{l}" for x, w, l in data.triples.tolist()]
    path.write_text("\n".join(lines) + "\n")


def load_dataset(path) -> PreferenceDataset:
    seed = None
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            for tok in line[1:].split():
                if tok.startswith("seed=") and tok[5:] not in ("None", "-"):
                    seed = int(tok[5:])
            continue
        if line.strip():
            rows.append([int(v) for v in line.split("\t")])
    return PreferenceDataset(np.array(rows, dtype=np.int64).reshape(-1, 3), seed)
