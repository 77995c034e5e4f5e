"""Exact sampling from the output policy by rejection from a dominating proposal."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ensemble import DegeneratePromptError, PessimisticAggregate


@dataclass(frozen=True)
class SampleOutcome:
    """``action`` is ``None`` when the sampler abstained."""

    action: int | None
    trials_used: int

    @property
    def accepted(self) -> bool:
        return self.action is not None

    def label(self) -> str:
        return f"accept:{self.action}" if self.accepted else "abstain"


class DominanceError(ValueError):
    pass


def trial_budget(f_out_row, delta: float) -> int:
    """``ceil(log(1/delta) / sum_a f_out(x, a))``, at least one trial."""
    total = float(np.sum(f_out_row))
    if not total > 0:
        raise DegeneratePromptError("numerator row sums to zero")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return max(1, math.ceil(math.log(1 / delta) / total))


def sampling_numerator(agg: PessimisticAggregate, x: int) -> np.ndarray:
    """Numerator row used for sampling.

    With centering the row is divided by ``max_l e^{-zeta_l(x)}`` so that any
    member still dominates it; the normalized target is unchanged.
    """
    row = np.exp(agg.log_f_out[x])
    if agg.centering:
        zetas = [m.zeta[x] for m in agg.members if m.zeta is not None]
        if zetas:
            row = row / math.exp(-min(zetas))
    return row


def rejection_sample(agg: PessimisticAggregate, x: int, proposal=0, delta: float = 0.05,
                     rng_seed=None, rng: np.random.Generator | None = None) -> SampleOutcome:
    """Draw from ``pi_out(.|x)`` by proposing from a member (index) or an explicit policy row/table."""
    if rng is None:
        rng = np.random.default_rng(rng_seed)
    if isinstance(proposal, (int, np.integer)):
        prop = agg.members[int(proposal)].policy[x]
    else:
        prop = np.asarray(proposal, dtype=float)
        if prop.ndim == 2:
            prop = prop[x]
    f = sampling_numerator(agg, x)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(f > 0, f / prop, 0.0)
    bad = np.flatnonzero(ratio > 1 + 1e-12)
    if bad.size:
        raise DominanceError(f"proposal does not dominate the numerator at action {bad[0]}")
    ratio = np.minimum(ratio, 1.0)
    budget = trial_budget(f, delta)
    cdf = np.cumsum(prop)
    cdf[-1] = 1.0
    for trial in range(1, budget + 1):
        a = int(np.searchsorted(cdf, rng.random(), side="right"))
        alpha = ratio[a]
        assert 0.0 <= alpha <= 1.0
        if rng.random() <= alpha:
            return SampleOutcome(a, trial)
    return SampleOutcome(None, budget)


def sample_many(agg: PessimisticAggregate, x: int, n: int, proposal=0, delta=0.05,
                rng_seed=None) -> list[SampleOutcome]:
    rng = np.random.default_rng(rng_seed)
    return [rejection_sample(agg, x, proposal, delta, rng=rng) for _ in range(n)]
