"""Experiment cells: run one algorithm on one dataset and score the result."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.special import logsumexp

from .baselines import (beta0_select, chi2_policy, fit_dpo, fit_reward_mle, fit_sft_dpo,
                        rlhf_policy, _one_hot)
from .datagen import PreferenceDataset, build_counts, generate_dataset, partition
from .ensemble import (PessimisticAggregate, aggregate_numerator, ensemble_size,
                       estimated_gap_table, mean_std_numerator, output_policy,
                       tie_upper_bound)
from .member import fit_ensemble
from .sampler import sampling_numerator, trial_budget
from .tabular import (HyperParams, TabularEnv, concentrability, j_beta, optimal_policy)

ALGORITHMS = ("pepo", "pepo-meanstd", "dpo", "sft-dpo", "rlhf", "chi2po", "rl", "chi2rl", "perl")
BETA0_ALGORITHMS = ("rl", "chi2rl", "perl")


@dataclass(frozen=True)
class Pipeline:
    """How PEPO-style algorithms are assembled.

    ``theoretical=True`` overrides ``L`` with the ensemble-size rule, uses the
    count-based tie bound and ``B = 6 e^{3 r_max}``.
    """

    fit_mode: str = "ascent"
    p_bar: str = "constant"
    alpha: float = 0.1
    centering: bool = False
    label_rule: str = "bt"
    theoretical: bool = False
    sample_delta: float = 0.05

    def resolve(self) -> "Pipeline":
        if self.theoretical:
            return Pipeline("closed-form", "theoretical", self.alpha, self.centering,
                            self.label_rule, True, self.sample_delta)
        return self


@dataclass
class ResultRow:
    experiment: str
    algorithm: str
    seed: int
    N: int
    L: int
    suboptimality: float = math.nan
    prob_optimal_action: float = math.nan
    selected_action: str = ""
    c_star: float = math.nan
    err_norm: float = math.nan
    abstention_rate: float = math.nan
    wall_time: float = 0.0
    status: str = "ok"

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_list(self) -> list:
        return list(asdict(self).values())


def child_seed(*keys) -> int:
    """Deterministic 63-bit seed from integer keys (master seed first)."""
    ss = np.random.SeedSequence([int(k) for k in keys])
    return int(ss.generate_state(2, dtype=np.uint32) @ np.array([1 << 31, 1], dtype=np.uint64)
               % (1 << 63))


def resolve_L(env: TabularEnv, hp: HyperParams, pipe: Pipeline) -> int:
    if pipe.theoretical:
        return ensemble_size(env.num_prompts, env.num_actions, hp.delta)
    return int(hp.L)


def resolve_B(env: TabularEnv, hp: HyperParams, pipe: Pipeline) -> float:
    if pipe.theoretical:
        return HyperParams.theoretical_B(env.r_max)
    return float(hp.B)


def build_pepo(data: PreferenceDataset, env: TabularEnv, hp: HyperParams, pipe: Pipeline,
               L: int, part_seed: int, meanstd: bool = False,
               lambda_table=None) -> PessimisticAggregate:
    """Partition, fit one member per shard and aggregate."""
    pipe = pipe.resolve()
    shards = partition(data, L, part_seed)
    members = fit_ensemble(shards, env, hp, pipe.fit_mode, pipe.centering, lambda_table)
    counts = build_counts(data, env)
    hpL = HyperParams(**{**asdict(hp), "L": L})
    p_bar = tie_upper_bound(counts, hpL, env, pipe.p_bar, pipe.alpha)
    B = resolve_B(env, hp, pipe)
    if meanstd:
        num = mean_std_numerator(members, hp.eta, np.zeros_like(p_bar), B, hp.beta)
        # apply the tie penalty in log space, relative to the per-prompt minimum
        pen = B * p_bar / hp.beta
        pen = pen - pen.min(axis=1, keepdims=True)
        return aggregate_numerator(num * np.exp(-pen), members, env.pi_ref, hp.beta,
                                   p_bar, B, pipe.centering)
    return output_policy(members, env.pi_ref, hp.beta, p_bar, B, pipe.centering)


def err_norm(agg_or_gaps, env: TabularEnv) -> float:
    """``<pi_data, Err^2>`` with ``Err(x,a) = Dhat(x,a,pi_data) - D_{r*}(x,a,pi_data)``.

    Accepts an aggregate or an explicit gap table ``D[x, a, b]``.
    """
    if isinstance(agg_or_gaps, PessimisticAggregate):
        gaps = estimated_gap_table(agg_or_gaps)
    else:
        gaps = np.asarray(agg_or_gaps, dtype=float)
    r = env.r_star
    true = r[:, :, None] - r[:, None, :]
    err = np.einsum("xab,xb->xa", gaps - true, env.pi_data)
    return float(env.nu0 @ (env.pi_data * err**2).sum(axis=1))


def reward_gaps(u) -> np.ndarray:
    u = np.atleast_2d(u)
    return u[:, :, None] - u[:, None, :]


def abstention_probability(agg: PessimisticAggregate, env: TabularEnv, delta: float) -> float:
    """Exact probability that the rejection sampler abstains, averaged over ``nu0``."""
    out = np.zeros(env.num_prompts)
    for x in range(env.num_prompts):
        log_z = float(logsumexp(agg.log_f_out[x]))
        if agg.centering:
            z = float(np.sum(sampling_numerator(agg, x)))
        else:
            z = math.exp(log_z)
        if z <= 0.0:
            # budget * z -> log(1/delta) in the underflow limit
            out[x] = delta
            continue
        z = min(z, 1.0)
        budget = trial_budget([z], delta)
        out[x] = math.exp(budget * math.log1p(-z)) if z < 1 else 0.0
    return float(env.nu0 @ out)


def _mle_ensemble(data, env, L, part_seed):
    return [fit_reward_mle(s, env) for s in partition(data, L, part_seed)]


def run_algorithm(name: str, data: PreferenceDataset, env: TabularEnv, hp: HyperParams,
                  pipe: Pipeline, L: int, part_seed: int) -> dict:
    """Fit ``name`` on ``data``; returns ``policy`` plus optional ``agg``, ``gaps``, ``selected``."""
    if name in ("pepo", "pepo-meanstd"):
        agg = build_pepo(data, env, hp, pipe, L, part_seed, meanstd=name == "pepo-meanstd")
        return {"policy": agg.pi_out, "agg": agg, "gaps": estimated_gap_table(agg)}
    if name == "dpo":
        res = fit_dpo(data, env, hp.beta)
        return {"policy": res.policy, "gaps": reward_gaps(res.fitted_reward)}
    if name == "sft-dpo":
        res = fit_sft_dpo(data, env, hp.beta, hp.lambda_sft)
        return {"policy": res.policy, "gaps": reward_gaps(res.fitted_reward)}
    if name in ("rlhf", "chi2po"):
        r_hat = fit_reward_mle(data, env)
        pi = rlhf_policy(r_hat, env, hp.beta) if name == "rlhf" else chi2_policy(r_hat, env, hp.chi2_gamma)
        return {"policy": pi, "gaps": reward_gaps(r_hat)}
    if name == "rl":
        r_hat = fit_reward_mle(data, env)
        sel = beta0_select("rl", r_hat)
        return {"policy": _one_hot(sel, env.num_actions), "gaps": reward_gaps(r_hat), "selected": sel}
    if name == "chi2rl":
        r_hat = fit_reward_mle(data, env)
        return {"policy": chi2_policy(r_hat, env, hp.chi2_gamma), "gaps": reward_gaps(r_hat)}
    if name == "perl":
        tables = _mle_ensemble(data, env, L, part_seed)
        sel = beta0_select("perl", tables)
        robust = np.min(np.stack(tables), axis=0)
        return {"policy": _one_hot(sel, env.num_actions), "gaps": reward_gaps(robust), "selected": sel}
    raise ValueError(f"unknown algorithm {name!r}")


@dataclass
class Cell:
    experiment: str
    algorithm: str
    seed: int
    N: int
    L: int
    master_seed: int
    env: TabularEnv
    hp: HyperParams
    pipe: Pipeline = field(default_factory=Pipeline)
    eval_beta: float | None = None
    label: str = ""


def run_cell(cell: Cell) -> ResultRow:
    """Generate, fit and score one cell; failures are recorded in ``status``."""
    t0 = time.perf_counter()
    env, hp, pipe = cell.env, cell.hp, cell.pipe.resolve()
    L = resolve_L(env, hp, pipe) if cell.algorithm in ("pepo", "pepo-meanstd") else cell.L
    row = ResultRow(cell.experiment, cell.label or cell.algorithm, cell.seed, cell.N, L)
    beta = hp.beta if cell.eval_beta is None else cell.eval_beta
    try:
        # datasets depend on (seed, N) only, so algorithms share them
        data = generate_dataset(env, cell.N, child_seed(cell.master_seed, cell.seed, cell.N),
                                pipe.label_rule)
        part_seed = child_seed(cell.master_seed, cell.seed, cell.N, L, 1)
        out = run_algorithm(cell.algorithm, data, env, hp, pipe, L, part_seed)
        pi = out["policy"]
        pi_star = optimal_policy(env, beta)
        row.suboptimality = j_beta(pi_star, env, beta) - j_beta(pi, env, beta)
        best = np.argmax(env.r_star, axis=1)
        row.prob_optimal_action = float(env.nu0 @ pi[np.arange(env.num_prompts), best])
        sel = out.get("selected")
        if sel is None:
            sel = np.argmax(pi, axis=1)
        row.selected_action = ";".join(str(int(a)) for a in sel)
        row.c_star = concentrability(pi_star, env)[0]
        if "gaps" in out:
            row.err_norm = err_norm(out["gaps"], env)
        if "agg" in out:
            row.abstention_rate = abstention_probability(out["agg"], env, pipe.sample_delta)
    except Exception as exc:  # recorded per cell, the sweep continues
        row.status = f"error: {type(exc).__name__}: {exc}".replace(",", ";").replace("\n", " ")
    row.wall_time = time.perf_counter() - t0
    return row


def pessimism_violation_rate(pipe: Pipeline, env: TabularEnv, n: int, replications: int,
                             rng_seed: int, hp: HyperParams | None = None, L: int | None = None,
                             lambda_table=None, p_bar=None) -> tuple[float, float]:
    """Monte Carlo frequency of ``Dhat(x,a,pi_data) > D_{r*}(x,a,pi_data)``.

    Returns ``(per-pair rate, any-violation rate)``. ``p_bar`` overrides the
    pipeline's tie bound with a constant (``0`` switches the penalty off).
    """
    if replications < 1:
        raise ValueError("replications must be at least 1")
    hp = hp or HyperParams()
    pipe = pipe.resolve()
    L = resolve_L(env, hp, pipe) if L is None else L
    B = resolve_B(env, hp, pipe)
    r = env.r_star
    true = np.einsum("xab,xb->xa", r[:, :, None] - r[:, None, :], env.pi_data)
    pair_hits, any_hits = 0, 0
    for rep in range(replications):
        data = generate_dataset(env, n, child_seed(rng_seed, rep, 0), pipe.label_rule)
        shards = partition(data, L, child_seed(rng_seed, rep, 1))
        members = fit_ensemble(shards, env, hp, pipe.fit_mode, pipe.centering, lambda_table)
        if p_bar is None:
            hpL = HyperParams(**{**asdict(hp), "L": L})
            pb = tie_upper_bound(build_counts(data, env), hpL, env, pipe.p_bar, pipe.alpha)
        else:
            pb = np.full(env.pi_ref.shape, float(p_bar))
        agg = output_policy(members, env.pi_ref, hp.beta, pb, B, pipe.centering)
        est = np.einsum("xab,xb->xa", estimated_gap_table(agg), env.pi_data)
        viol = est > true
        pair_hits += int(viol.sum())
        any_hits += int(viol.any())
    return pair_hits / (replications * viol.size), any_hits / replications
