"""Tabular domain types and the evaluation quantities shared by every module.

Policies and reward tables are plain ``(num_prompts, num_actions)`` float
arrays. :class:`TabularEnv` bundles the problem instance.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

PROB_TOL = 1e-12


def as_policy(probs, name="policy") -> np.ndarray:
    """Validate and renormalize a per-prompt probability table.

    A 1-D input is treated as a single-prompt policy.
    """
    p = np.array(probs, dtype=float)
    if p.ndim == 1:
        p = p[None, :]
    if p.ndim != 2:
        raise ValueError(f"{name} must be a (prompts, actions) table")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError(f"{name} has negative or non-finite entries")
    sums = p.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise ValueError(f"{name} has an all-zero row")
    if np.any(np.abs(sums - 1) > 1e-6):
        raise ValueError(f"{name} rows do not sum to one")
    return p / sums


def is_policy(p, tol=PROB_TOL) -> bool:
    p = np.asarray(p, dtype=float)
    return bool(np.all(p >= 0) and np.all(np.abs(p.sum(axis=1) - 1) <= tol))


@dataclass(frozen=True)
class FixedReward:
    values: np.ndarray

    def mean(self) -> np.ndarray:
        return self.values

    def to_dict(self):
        return {"kind": "fixed", "values": self.values.tolist()}


@dataclass(frozen=True)
class GaussianReward:
    means: np.ndarray
    variances: np.ndarray

    def mean(self) -> np.ndarray:
        return self.means

    def to_dict(self):
        return {
            "kind": "gaussian",
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }


def _table(values, shape=None) -> np.ndarray:
    t = np.array(values, dtype=float)
    if t.ndim == 1:
        t = t[None, :]
    if shape is not None and t.shape != shape:
        t = np.broadcast_to(t, shape).copy()
    return t


@dataclass(frozen=True)
class TabularEnv:
    """Prompts, responses, data/reference policies and the ground-truth reward."""

    nu0: np.ndarray
    pi_data: np.ndarray
    pi_ref: np.ndarray
    reward: FixedReward | GaussianReward
    r_max: float

    @property
    def num_prompts(self) -> int:
        return self.pi_data.shape[0]

    @property
    def num_actions(self) -> int:
        return self.pi_data.shape[1]

    @property
    def r_star(self) -> np.ndarray:
        """Expected reward table; Gaussian rewards contribute their means."""
        return self.reward.mean()

    @classmethod
    def create(cls, pi_data, pi_ref=None, *, means=None, variances=None,
               rewards=None, nu0=None, r_max=3.0) -> "TabularEnv":
        pi_data = as_policy(pi_data, "pi_data")
        pi_ref = pi_data.copy() if pi_ref is None else as_policy(pi_ref, "pi_ref")
        shape = pi_data.shape
        if pi_ref.shape != shape:
            raise ValueError("pi_ref and pi_data shapes differ")
        if nu0 is None:
            nu0 = np.full(shape[0], 1.0 / shape[0])
        nu0 = np.array(nu0, dtype=float)
        if nu0.shape != (shape[0],) or np.any(nu0 < 0) or abs(nu0.sum() - 1) > 1e-6:
            raise ValueError("nu0 must be a distribution over prompts")
        nu0 = nu0 / nu0.sum()
        if r_max <= 0:
            raise ValueError("r_max must be positive")
        if rewards is not None:
            values = _table(rewards, shape)
            if np.any(values < 0) or np.any(values > r_max):
                raise ValueError("fixed rewards must lie in [0, r_max]")
            reward = FixedReward(values)
        else:
            if means is None or variances is None:
                raise ValueError("need either rewards or means and variances")
            var = _table(variances, shape)
            if np.any(var < 0):
                raise ValueError("variances must be nonnegative")
            reward = GaussianReward(_table(means, shape), var)
        return cls(nu0, pi_data, pi_ref, reward, float(r_max))

    def to_dict(self):
        return {
            "nu0": self.nu0.tolist(),
            "pi_data": self.pi_data.tolist(),
            "pi_ref": self.pi_ref.tolist(),
            "reward": self.reward.to_dict(),
            "r_max": self.r_max,
        }

    @classmethod
    def from_dict(cls, d) -> "TabularEnv":
        reward = d["reward"]
        kind = reward.get("kind", "gaussian" if "means" in reward else "fixed")
        kwargs = dict(pi_data=d["pi_data"], pi_ref=d.get("pi_ref"),
                      nu0=d.get("nu0"), r_max=d.get("r_max", 3.0))
        if kind == "fixed":
            return cls.create(rewards=reward["values"], **kwargs)
        if kind == "gaussian":
            return cls.create(means=reward["means"], variances=reward["variances"], **kwargs)
        raise ValueError(f"unknown reward kind {kind!r}")

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class HyperParams:
    beta: float = 0.1
    delta: float = 0.1
    gamma_count: float = 1.0
    L: int = 3
    eta: float = 0.1
    lambda_sft: float = 0.005
    chi2_gamma: float = 40.0
    B: float = 0.0
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.gamma_count < 0 or self.eta < 0 or self.lambda_sft < 0:
            raise ValueError("gamma_count, eta and lambda_sft must be nonnegative")
        if int(self.L) < 1:
            raise ValueError("L must be a positive integer")
        if self.chi2_gamma <= 0 or self.B < 0:
            raise ValueError("chi2_gamma must be positive and B nonnegative")

    @staticmethod
    def theoretical_B(r_max: float) -> float:
        return 6.0 * math.exp(3.0 * r_max)

    @classmethod
    def theoretical(cls, r_max: float, **kwargs) -> "HyperParams":
        return cls(B=cls.theoretical_B(r_max), **kwargs)


def kl_divergence(p, q, nu0=None) -> float:
    """Prompt-averaged ``KL(p || q)``; returns ``inf`` on a support violation."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if nu0 is None:
        nu0 = np.full(p.shape[0], 1.0 / p.shape[0])
    pos = p > 0
    if np.any(pos & (q <= 0)):
        return math.inf
    terms = np.zeros_like(p)
    terms[pos] = p[pos] * (np.log(p[pos]) - np.log(q[pos]))
    return float(max(np.asarray(nu0) @ terms.sum(axis=1), 0.0))


def expected_reward(pi, env: TabularEnv) -> float:
    pi = np.atleast_2d(np.asarray(pi, dtype=float))
    return float(env.nu0 @ (pi * env.r_star).sum(axis=1))


def j_beta(pi, env: TabularEnv, beta: float) -> float:
    """KL-regularized value ``<pi, r*> - beta KL(pi, pi_ref)``."""
    value = expected_reward(pi, env)
    if beta == 0:
        return value
    return value - beta * kl_divergence(pi, env.pi_ref, env.nu0)


def concentrability(pi_star, env: TabularEnv) -> tuple[float, float]:
    """Single-policy ``C*`` of ``pi_star`` and the all-policy ``C_all`` of ``pi_data``."""
    pi_star = np.atleast_2d(np.asarray(pi_star, dtype=float))
    data = env.pi_data
    pos = pi_star > 0
    if np.any(pos & (data <= 0)):
        c_star = math.inf
    else:
        ratio = np.zeros_like(pi_star)
        ratio[pos] = pi_star[pos] ** 2 / data[pos]
        c_star = float(env.nu0 @ ratio.sum(axis=1))
    with np.errstate(divide="ignore"):
        worst = np.max(1.0 / data, axis=1)
    c_all = float(env.nu0 @ worst)
    return c_star, c_all


def softmax_policy(r, pi_ref, beta: float) -> np.ndarray:
    """``pi(a|x) ∝ pi_ref(a|x) exp(r(x,a) / beta)``, stabilized per prompt."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    r = np.atleast_2d(np.asarray(r, dtype=float))
    if not np.all(np.isfinite(r)):
        raise ValueError("reward table has non-finite entries")
    pi_ref = np.atleast_2d(np.asarray(pi_ref, dtype=float))
    with np.errstate(divide="ignore"):
        logits = np.log(pi_ref) + r / beta
    return log_normalize(logits)


def log_normalize(logits) -> np.ndarray:
    """Row-wise softmax of log-weights (``-inf`` allowed, not whole rows)."""
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    top = logits.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise ValueError("a row has no finite log-weight")
    w = np.exp(logits - top)
    return w / w.sum(axis=1, keepdims=True)


def optimal_policy(env: TabularEnv, beta: float) -> np.ndarray:
    """Exact maximizer of ``j_beta``; for ``beta = 0`` the greedy policy (lowest index on ties)."""
    if beta == 0:
        pi = np.zeros_like(env.r_star)
        pi[np.arange(env.num_prompts), np.argmax(env.r_star, axis=1)] = 1.0
        return pi
    return softmax_policy(env.r_star, env.pi_ref, beta)
