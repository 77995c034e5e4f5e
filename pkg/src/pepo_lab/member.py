"""One ensemble member: a pessimistic DPO fit on a single data shard."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import lsq_linear
from scipy.special import logsumexp

from .datagen import CountTables, PreferenceDataset, build_counts
from .optim import maximize_box, pairwise_objective
from .preference import log_sigma_pess, sigma_pess, sigma_pess_inv, tie_probability
from .tabular import HyperParams, TabularEnv, softmax_policy

log = logging.getLogger(__name__)

FIT_MODES = ("ascent", "closed-form")


def implicit_reward(theta, pi_ref, beta):
    """``beta * log(pi / pi_ref)`` for the normalized policy ``pi ∝ pi_ref e^{theta/beta}``."""
    theta = np.atleast_2d(theta)
    with np.errstate(divide="ignore"):
        logits = np.log(pi_ref) + theta / beta
    return theta - beta * logsumexp(logits, axis=1, keepdims=True)


@dataclass
class MemberFit:
    """A fitted member.

    ``theta`` is the box-constrained parameter (``|theta| <= r_max``) and ``u``
    the implicit reward ``beta log(pi_tilde / pi_ref)`` of the normalized
    member policy; the two differ by a per-prompt constant.
    """

    theta: np.ndarray
    u: np.ndarray
    beta: float
    pi_ref: np.ndarray
    lambda_table: np.ndarray | None
    shard_counts: CountTables | None
    fit_mode: str
    zeta: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def policy(self) -> np.ndarray:
        return softmax_policy(self.u, self.pi_ref, self.beta)

    @property
    def log_ratio(self) -> np.ndarray:
        return self.u / self.beta

    def centered_u(self, centering: bool = True) -> np.ndarray:
        if not centering or self.zeta is None:
            return self.u
        return self.u - self.beta * self.zeta[:, None]


def lambda_schedule(shard_counts: CountTables, r_max: float) -> np.ndarray:
    """Tie weights ``4 e^{r_max/2} / (N(x,a,b) + 2)`` for every prompt and pair."""
    if r_max <= 0:
        raise ValueError("r_max must be positive")
    return 4.0 * np.exp(r_max / 2.0) / (shard_counts.n_xab + 2.0)


def _pess_phi(lam):
    def phi(d):
        val = log_sigma_pess(d, lam)
        pw = np.exp(val)
        pl = sigma_pess(-d, lam)
        pt = tie_probability(d, lam)
        # 1 - (pw - pl) = 2 pl + pt, written without cancellation
        d1 = pl + 0.5 * pt
        d2 = -0.25 * (2 * pl + (pw - pl) * (2 * pl + pt))
        return val, d1, d2
    return phi


def pess_dpo_objective(u_row, win, lam):
    """Value, gradient and Hessian of the pessimistic DPO log-likelihood at one prompt."""
    return pairwise_objective(win, np.asarray(u_row, dtype=float), _pess_phi(lam))


def pess_dpo_loss(u, shard: PreferenceDataset, lambda_table, beta: float = 1.0) -> float:
    """``sum over shard of log sigma_pess(u[x,a+] - u[x,a-], lambda[x,a+,a-])``.

    ``u`` is already the beta-scaled implicit reward, so ``beta`` is not applied again.
    """
    if len(shard) == 0:
        return 0.0
    u = np.atleast_2d(np.asarray(u, dtype=float))
    lam = np.asarray(lambda_table, dtype=float)
    x, w, l = shard.x, shard.winner, shard.loser
    if lam.ndim == 0:
        lam_n = np.full(len(shard), float(lam))
    else:
        lam_n = lam[x, w, l]
    return float(np.sum(log_sigma_pess(u[x, w] - u[x, l], lam_n)))


def _fit_ascent(counts, lam, r_max, tol, max_iter):
    X, A = counts.n_xa.shape
    theta = np.zeros((X, A))
    grad_norm, iters, converged = 0.0, 0, True
    history = []
    for x in range(X):
        if counts.n_x[x] == 0:
            continue
        win = counts.n_win[x].astype(float)
        res = maximize_box(lambda v: pess_dpo_objective(v, win, lam[x]),
                           np.zeros(A), -r_max, r_max, tol=tol, max_iter=max_iter,
                           record=True)
        theta[x] = res.x
        grad_norm = max(grad_norm, res.grad_norm)
        iters += res.iterations
        converged &= res.converged
        history.append(res.history)
    return theta, {"grad_norm": grad_norm, "iterations": iters,
                   "converged": converged, "history": history}


def closed_form_targets(counts: CountTables, lam, r_max: float):
    """Pessimized-rate gap targets ``clip(sigma_pess_inv(N(a>b)/(N(a,b)+2), lambda), +-2 r_max)``."""
    y = counts.n_win / (counts.n_xab + 2.0)
    g = sigma_pess_inv(y, np.broadcast_to(lam, y.shape))
    return np.clip(g, -2 * r_max, 2 * r_max)


def _fit_closed_form(counts, lam, r_max):
    X, A = counts.n_xa.shape
    theta = np.zeros((X, A))
    targets = closed_form_targets(counts, lam, r_max)
    for x in range(X):
        obs = np.flatnonzero(counts.n_xa[x] > 0)
        if obs.size < 2:
            continue
        pos = {a: i for i, a in enumerate(obs)}
        rows, rhs = [], []
        # both orderings of every pair enter, so targets for (a,b) and (b,a) are balanced
        for a in obs:
            for b in obs:
                n = counts.n_xab[x, a, b]
                if a == b or n == 0:
                    continue
                row = np.zeros(obs.size)
                row[pos[a]], row[pos[b]] = 1.0, -1.0
                w = np.sqrt(n)
                rows.append(w * row)
                rhs.append(w * targets[x, a, b])
        if not rows:
            continue
        # gauge anchor on observed actions, plus a vanishing ridge for disconnected pair graphs
        rows.append(np.ones(obs.size))
        rhs.append(0.0)
        M = np.vstack(rows + [1e-8 * np.eye(obs.size)])
        v = np.concatenate([rhs, np.zeros(obs.size)])
        sol = lsq_linear(M, v, bounds=(-r_max, r_max), method="bvls", tol=1e-14)
        theta[x, obs] = sol.x
    return theta, {"converged": True}


def fit_member(shard: PreferenceDataset, env: TabularEnv, hp: HyperParams,
               mode: str = "ascent", lambda_table=None, tol: float = 1e-8,
               max_iter: int = 100_000) -> MemberFit:
    """Maximize the pessimistic DPO objective on one shard over the box ``|theta| <= r_max``.

    ``lambda_table`` overrides the count-based schedule (a scalar broadcasts).
    """
    if mode not in FIT_MODES:
        raise ValueError(f"mode must be one of {FIT_MODES}")
    counts = build_counts(shard, env)
    if lambda_table is None:
        lam = lambda_schedule(counts, env.r_max)
    else:
        lam = np.broadcast_to(np.asarray(lambda_table, dtype=float), counts.n_xab.shape).copy()
    if mode == "ascent":
        theta, diag = _fit_ascent(counts, lam, env.r_max, tol, max_iter)
        if not diag["converged"]:
            log.warning("member fit stopped with projected gradient norm %.3g", diag["grad_norm"])
    else:
        theta, diag = _fit_closed_form(counts, lam, env.r_max)
    u = implicit_reward(theta, env.pi_ref, hp.beta)
    return MemberFit(theta, u, hp.beta, env.pi_ref, lam, counts, mode, None, diag)


def centered_offsets(member: MemberFit, complement: PreferenceDataset, gamma: float,
                     beta: float | None = None) -> np.ndarray:
    """Per-prompt offsets ``zeta(x)`` from held-out data.

    ``zeta(x) = (1 + gamma/(2m)) / (2m + gamma) * sum of log-ratios over the
    2m response slots`` of the ``m`` held-out comparisons at ``x``; zero when ``m = 0``.
    """
    beta = member.beta if beta is None else beta
    logratio = member.u / beta
    X = member.u.shape[0]
    zeta = np.zeros(X)
    if len(complement) == 0:
        return zeta
    x = complement.x
    slots = logratio[x, complement.winner] + logratio[x, complement.loser]
    sums = np.bincount(x, weights=slots, minlength=X)
    m = np.bincount(x, minlength=X).astype(float)
    seen = m > 0
    zeta[seen] = (1 + gamma / (2 * m[seen])) / (2 * m[seen] + gamma) * sums[seen]
    return zeta


def fit_ensemble(shards, env: TabularEnv, hp: HyperParams, mode: str = "ascent",
                 centering: bool = False, lambda_table=None) -> list[MemberFit]:
    """Fit one member per shard; with ``centering`` attach held-out offsets."""
    members = [fit_member(s, env, hp, mode, lambda_table=lambda_table) for s in shards]
    if centering:
        for i, m in enumerate(members):
            held_out = PreferenceDataset.concat(s for j, s in enumerate(shards) if j != i)
            m.zeta = centered_offsets(m, held_out, hp.gamma_count, hp.beta)
    return members


def shard_digest(shard: PreferenceDataset) -> str:
    return hashlib.sha256(shard.triples.tobytes()).hexdigest()[:16]


def save_member(member: MemberFit, path, shard: PreferenceDataset | None = None,
                name: str | None = None):
    """Write ``x<TAB>a<TAB>u`` rows under a ``#``-prefixed metadata header."""
    head = [f"mode={member.fit_mode}", f"beta={member.beta!r}"]
    if name:
        head.insert(0, f"name={name}")
    if member.lambda_table is not None:
        head.append("lambda=4*exp(r_max/2)/(N+2)")
    if shard is not None:
        head.append(f"shard={shard_digest(shard)}")
    lines = ["# pepo-lab member " + " ".join(head)]
    lines.append("# pi_ref=" + ";".join(",".join(repr(float(v)) for v in row)
                                        for row in member.pi_ref))
    if member.zeta is not None:
        lines.append("# zeta=" + ",".join(repr(float(z)) for z in member.zeta))
    lines.append("# x\ta\tu")
    X, A = member.u.shape
    lines += [f"{x}\t{a}\t{float(member.u[x, a])!r}" for x in range(X) for a in range(A)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_member(path) -> MemberFit:
    meta, rows, zeta, pi_ref = {}, [], None, None
    for line in Path(path).read_text().splitlines():
        if line.startswith("# pi_ref="):
            pi_ref = np.array([[float(v) for v in r.split(",")]
                               for r in line[len("# pi_ref="):].split(";")])
        elif line.startswith("# zeta="):
            zeta = np.array([float(v) for v in line[len("# zeta="):].split(",")])
        elif line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
        elif line.strip():
            x, a, u = line.split("\t")
            rows.append((int(x), int(a), float(u)))
    X = max(r[0] for r in rows) + 1
    A = max(r[1] for r in rows) + 1
    u = np.zeros((X, A))
    for x, a, val in rows:
        u[x, a] = val
    beta = float(meta.get("beta", 1.0))
    fit = MemberFit(u.copy(), u, beta, pi_ref, None, None, meta.get("mode", "ascent"), zeta)
    fit.diagnostics["name"] = meta.get("name")
    return fit
