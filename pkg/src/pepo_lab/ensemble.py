"""Pessimistic aggregation of ensemble members into the output policy."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from .datagen import CountTables
from .member import MemberFit
from .tabular import HyperParams, TabularEnv, log_normalize, softmax_policy

log = logging.getLogger(__name__)

EQUIVALENCE_TOL = 1e-10


class DegeneratePromptError(ValueError):
    """A prompt whose output numerator vanishes for every action."""


@dataclass
class PessimisticAggregate:
    members: list
    pi_ref: np.ndarray
    beta: float
    p_tie_bar: np.ndarray
    b_scale: float
    log_f_out: np.ndarray
    pi_out: np.ndarray
    r_minus: np.ndarray
    centering: bool = False
    equivalence_error: float = 0.0

    @property
    def f_out(self) -> np.ndarray:
        return np.exp(self.log_f_out)

    @property
    def L(self) -> int:
        return len(self.members)


def ensemble_size(num_prompts: int, num_actions: int, delta: float) -> int:
    """Ensemble size ``ceil(7 log(|X||A|/delta) / 2)``, at least one."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return max(1, math.ceil(3.5 * math.log(num_prompts * num_actions / delta)))


def tie_upper_bound(counts: CountTables, hp: HyperParams, env: TabularEnv,
                    mode: str = "theoretical", alpha: float = 0.1) -> np.ndarray:
    """High-probability bound on the tie probability of each action against ``pi_data``.

    ``theoretical``: ``min(1, 9 L |A| e^{r_max} log(N^2 |X||A|/delta) / (N(x,a) + gamma))``.
    ``constant``: ``alpha`` everywhere.
    """
    shape = counts.n_xa.shape
    if mode == "constant":
        return np.full(shape, float(alpha))
    if mode != "theoretical":
        raise ValueError(f"unknown tie-bound mode {mode!r}")
    if not 0 < hp.delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    N = max(counts.total, 1)
    X, A = shape
    num = 9 * hp.L * A * math.exp(env.r_max) * math.log(N**2 * X * A / hp.delta)
    with np.errstate(divide="ignore"):
        raw = num / (counts.n_xa + hp.gamma_count)
    return np.minimum(1.0, raw)


def _stack_u(members, centering):
    return np.stack([m.centered_u(centering) for m in members])


def worst_case_reward(members, p_tie_bar, B: float, centering: bool = False) -> np.ndarray:
    """``min over members of (centered) implicit rewards, minus B * p_tie_bar``."""
    return _stack_u(members, centering).min(axis=0) - B * np.asarray(p_tie_bar)


def output_policy(members, pi_ref, beta: float, p_tie_bar, B: float,
                  centering: bool = False) -> PessimisticAggregate:
    """Normalized-min output policy.

    The numerator ``min_l pi_l(a|x) e^{-zeta_l(x)} exp(-B p(x,a)/beta)`` is kept
    in log form. The result is cross-checked against the softmax of the
    worst-case reward.
    """
    pi_ref = np.atleast_2d(np.asarray(pi_ref, dtype=float))
    p_bar = np.broadcast_to(np.asarray(p_tie_bar, dtype=float), pi_ref.shape)
    with np.errstate(divide="ignore"):
        log_ref = np.log(pi_ref)
    u = _stack_u(members, centering)
    log_min = (log_ref[None] + u / beta).min(axis=0)
    log_f = log_min - B * p_bar / beta
    if np.any(np.all(~np.isfinite(log_f), axis=1)):
        raise DegeneratePromptError("output numerator vanishes at some prompt")
    # per-prompt shift keeps the normalization well conditioned
    shift = (B * p_bar).min(axis=1, keepdims=True)
    pi_out = log_normalize(log_min - (B * p_bar - shift) / beta)
    r_minus = u.min(axis=0) - B * p_bar
    check = softmax_policy(r_minus + shift, pi_ref, beta)
    err = float(np.max(np.abs(check - pi_out)))
    if err > EQUIVALENCE_TOL:
        log.warning("closed-form and softmax constructions differ by %.3g", err)
    return PessimisticAggregate(list(members), pi_ref, beta, p_bar.copy(), B, log_f,
                                pi_out, r_minus, centering, err)


def aggregate_numerator(numerator, members, pi_ref, beta, p_tie_bar, B,
                        centering=False) -> PessimisticAggregate:
    """Aggregate built from an explicit nonnegative numerator (e.g. mean - eta * std)."""
    numerator = np.atleast_2d(np.asarray(numerator, dtype=float))
    if np.any(numerator.sum(axis=1) <= 0):
        raise DegeneratePromptError("output numerator vanishes at some prompt")
    with np.errstate(divide="ignore"):
        log_f = np.log(numerator)
    pi_out = log_normalize(log_f)
    with np.errstate(divide="ignore"):
        r_minus = beta * (log_f - np.log(pi_ref))
    return PessimisticAggregate(list(members), np.atleast_2d(pi_ref), beta,
                                np.broadcast_to(p_tie_bar, numerator.shape).copy(),
                                B, log_f, pi_out, r_minus, centering, 0.0)


def estimated_gap_table(agg: PessimisticAggregate) -> np.ndarray:
    """``D[x, a, b] = min_l u_l(x,a) - max_l u_l(x,b) - B p(x,a)``."""
    u = _stack_u(agg.members, agg.centering)
    lo, hi = u.min(axis=0), u.max(axis=0)
    return lo[:, :, None] - hi[:, None, :] - (agg.b_scale * agg.p_tie_bar)[:, :, None]


def estimated_gap(agg: PessimisticAggregate, x: int, a: int, b: int) -> float:
    u = _stack_u(agg.members, agg.centering)
    return float(u[:, x, a].min() - u[:, x, b].max() - agg.b_scale * agg.p_tie_bar[x, a])


def mean_std_numerator(members, eta: float, p_tie_bar, B: float, beta: float) -> np.ndarray:
    """``max(0, mean_l pi_l - eta * std_l pi_l) * exp(-B p / beta)``, std with ``L - 1``."""
    probs = np.stack([m.policy for m in members])
    mean = probs.mean(axis=0)
    std = probs.std(axis=0, ddof=1) if len(members) > 1 else np.zeros_like(mean)
    return np.maximum(0.0, mean - eta * std) * np.exp(-B * np.asarray(p_tie_bar) / beta)


# token level -----------------------------------------------------------------

@dataclass
class FactoredPolicySet:
    """Autoregressive policies over ``alphabet``-sized tokens for ``horizon`` stages.

    ``ref[h]`` and ``members[l][h]`` have shape ``(alphabet**h, alphabet)``: row
    ``i`` is the conditional given the history whose base-``alphabet`` index is ``i``.
    """

    horizon: int
    alphabet: int
    ref: list
    members: list
    beta: float = 1.0

    def __post_init__(self):
        for tables in [self.ref, *self.members]:
            if len(tables) != self.horizon:
                raise ValueError("one conditional table per stage is required")
            for h, t in enumerate(tables):
                if t.shape != (self.alphabet**h, self.alphabet):
                    raise ValueError(f"stage {h} table has shape {t.shape}")
                if np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1) > 1e-9):
                    raise ValueError(f"stage {h} rows are not distributions")

    @classmethod
    def random(cls, rng, horizon, alphabet, num_members, beta=1.0, conc=1.0):
        def tables():
            return [rng.dirichlet(np.full(alphabet, conc), size=alphabet**h)
                    for h in range(horizon)]
        return cls(horizon, alphabet, tables(), [tables() for _ in range(num_members)], beta)

    def trajectories(self):
        return list(itertools.product(range(self.alphabet), repeat=self.horizon))

    @staticmethod
    def _history_index(traj, h, k):
        idx = 0
        for t in traj[:h]:
            idx = idx * k + t
        return idx

    def stage_probs(self, tables, traj):
        k = self.alphabet
        return np.array([tables[h][self._history_index(traj, h, k), traj[h]]
                         for h in range(self.horizon)])


def token_level_output(fps: FactoredPolicySet) -> list:
    """Per-stage conditionals ``min_l pi_l(a|h) / sum_a' min_l pi_l(a'|h)``."""
    out = []
    for h in range(fps.horizon):
        mins = np.min(np.stack([m[h] for m in fps.members]), axis=0)
        sums = mins.sum(axis=1, keepdims=True)
        if np.any(sums <= 0):
            raise DegeneratePromptError(f"stage {h} has an all-zero row")
        out.append(mins / sums)
    return out


def token_rewards(fps: FactoredPolicySet, traj) -> tuple[float, float]:
    """``(sum_h r_h^-(traj), r^-(traj))`` for one trajectory (no tie penalty)."""
    ref = fps.stage_probs(fps.ref, traj)
    per_member = np.stack([np.log(fps.stage_probs(m, traj)) - np.log(ref) for m in fps.members])
    stagewise = fps.beta * per_member.min(axis=0).sum()
    whole = fps.beta * per_member.sum(axis=1).min()
    return float(stagewise), float(whole)
