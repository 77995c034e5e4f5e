"""Comparison algorithms: DPO, reward MLE + RLHF, chi^2-regularized policies,
SFT+DPO and the beta = 0 selectors RL and PERL."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .datagen import PreferenceDataset, build_counts
from .member import implicit_reward
from .optim import maximize_box, pairwise_objective
from .tabular import TabularEnv, softmax_policy


@dataclass
class BaselineResult:
    name: str
    policy: np.ndarray
    fitted_reward: np.ndarray | None = None
    selected: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


def _log_sigmoid_phi(d):
    val = -np.logaddexp(0.0, -d)
    s, t = expit(d), expit(-d)
    return val, t, -s * t


def dpo_objective(u_row, win):
    """Value, gradient and Hessian of ``sum win[a,b] log sigma(u[a] - u[b])``."""
    return pairwise_objective(win, np.asarray(u_row, dtype=float), _log_sigmoid_phi)


def sft_objective(u_row, appear, pi_ref_row, beta):
    """``sum_a appear[a] * log pi(a)`` with ``pi ∝ pi_ref e^{u/beta}``, plus derivatives."""
    u_row = np.asarray(u_row, dtype=float)
    logits = np.log(pi_ref_row) + u_row / beta
    top = logits.max()
    logp = logits - top - np.log(np.exp(logits - top).sum())
    p = np.exp(logp)
    total = appear.sum()
    mask = appear > 0
    value = float(np.sum(appear[mask] * logp[mask]))
    grad = (appear - total * p) / beta
    hess = -total / beta**2 * (np.diag(p) - np.outer(p, p))
    return value, grad, hess


def _one_hot(actions, num_actions):
    pi = np.zeros((len(actions), num_actions))
    pi[np.arange(len(actions)), actions] = 1.0
    return pi


def fit_dpo(data: PreferenceDataset, env: TabularEnv, beta: float, cap: float = 30.0,
            lambda_sft: float = 0.0, name: str = "DPO", tol: float = 1e-8) -> BaselineResult:
    """Box-constrained DPO (optionally with an SFT term on both recorded responses)."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    counts = build_counts(data, env)
    X, A = env.num_prompts, env.num_actions
    u = np.zeros((X, A))
    info = {"iterations": 0, "grad_norm": 0.0, "converged": True, "value": 0.0}
    for x in range(X):
        if counts.n_x[x] == 0:
            continue
        win = counts.n_win[x].astype(float)
        appear = counts.n_xa[x].astype(float)

        def fun(v):
            f, g, H = dpo_objective(v, win)
            if lambda_sft > 0:
                fs, gs, Hs = sft_objective(v, appear, env.pi_ref[x], beta)
                f, g, H = f + lambda_sft * fs, g + lambda_sft * gs, H + lambda_sft * Hs
            return f, g, H

        res = maximize_box(fun, np.zeros(A), -cap, cap, tol=tol)
        u[x] = res.x
        info["iterations"] += res.iterations
        info["grad_norm"] = max(info["grad_norm"], res.grad_norm)
        info["converged"] &= res.converged
        info["value"] += res.value
    policy = softmax_policy(u, env.pi_ref, beta)
    return BaselineResult(name, policy, implicit_reward(u, env.pi_ref, beta), None, info)


def fit_sft_dpo(data, env, beta, lambda_sft=0.005, cap=30.0) -> BaselineResult:
    return fit_dpo(data, env, beta, cap, lambda_sft=lambda_sft, name="SFT+DPO")


def fit_reward_mle(data: PreferenceDataset, env, r_max: float | None = None,
                   tol: float = 1e-8) -> np.ndarray:
    """Constrained Bradley-Terry MLE over ``[0, r_max]`` per prompt and action.

    Unobserved actions stay at 0; the minimum observed value is shifted to 0.
    """
    shape = (env.num_prompts, env.num_actions) if isinstance(env, TabularEnv) else env
    if r_max is None:
        r_max = env.r_max
    counts = build_counts(data, shape)
    X, A = shape
    r = np.zeros((X, A))
    for x in range(X):
        obs = counts.n_xa[x] > 0
        if not obs.any():
            continue
        win = counts.n_win[x].astype(float)
        res = maximize_box(lambda v: dpo_objective(v, win), np.zeros(A), 0.0,
                           np.where(obs, r_max, 0.0), tol=tol)
        row = res.x.copy()
        row[obs] -= row[obs].min()
        r[x] = np.clip(row, 0.0, r_max)
    return r


def rlhf_policy(r_hat, env: TabularEnv, beta: float) -> np.ndarray:
    return softmax_policy(r_hat, env.pi_ref, beta)


def chi2_policy(r_hat, env_or_ref, chi2_gamma: float) -> np.ndarray:
    """Maximizer of ``<pi, r_hat> - gamma * sum (pi - pi_ref)^2 / pi_ref`` on the simplex.

    KKT gives ``pi = pi_ref * max(0, 1 + (r_hat - mu) / (2 gamma))`` with ``mu``
    solving the normalization, found by bracketed root finding.
    """
    if chi2_gamma <= 0:
        raise ValueError("chi2_gamma must be positive")
    pi_ref = env_or_ref.pi_ref if isinstance(env_or_ref, TabularEnv) else np.atleast_2d(env_or_ref)
    if np.any(pi_ref <= 0):
        raise ValueError("chi^2 policy needs a strictly positive reference")
    r_hat = np.atleast_2d(np.asarray(r_hat, dtype=float))
    out = np.empty_like(r_hat)
    for x, (r, ref) in enumerate(zip(r_hat, pi_ref)):
        def mass(mu):
            return float(np.sum(ref * np.maximum(0.0, 1 + (r - mu) / (2 * chi2_gamma)))) - 1.0
        lo, hi = r.min(), r.max()
        mu = lo if hi - lo < 1e-15 else brentq(mass, lo, hi, xtol=1e-14, rtol=1e-15)
        pi = ref * np.maximum(0.0, 1 + (r - mu) / (2 * chi2_gamma))
        out[x] = pi / pi.sum()
    return out


def chi2_objective(pi, r_hat, pi_ref, chi2_gamma) -> float:
    pi, r_hat, pi_ref = (np.atleast_2d(v) for v in (pi, r_hat, pi_ref))
    return float(np.sum(pi * r_hat) - chi2_gamma * np.sum((pi - pi_ref) ** 2 / pi_ref))


def beta0_select(mode: str, r_hats) -> np.ndarray:
    """Greedy action per prompt: ``rl`` on one table, ``perl`` on the min over several."""
    if isinstance(r_hats, np.ndarray) and r_hats.ndim == 2:
        r_hats = [r_hats]
    tables = np.stack([np.atleast_2d(r) for r in r_hats])
    if mode == "rl":
        if len(tables) != 1:
            raise ValueError("rl expects a single reward table")
        return np.argmax(tables[0], axis=1)
    if mode == "perl":
        return np.argmax(tables.min(axis=0), axis=1)
    raise ValueError(f"unknown beta=0 mode {mode!r}")


def select_result(mode, r_hats, num_actions) -> BaselineResult:
    actions = beta0_select(mode, r_hats)
    return BaselineResult(mode.upper(), _one_hot(actions, num_actions), None, actions)
