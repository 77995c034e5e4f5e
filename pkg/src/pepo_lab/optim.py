"""Box-constrained maximization of smooth concave objectives.

The per-prompt problems in this package have one variable per action, so a
projected Newton method (Newton step on the free variables, gradient step
as fallback, Armijo backtracking along the projection arc) is cheap and
converges to tight tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AscentResult:
    x: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    stalled: bool = False


def projected_grad(x, g, lower, upper):
    return np.clip(x + g, lower, upper) - x


def maximize_box(fun, x0, lower, upper, tol=1e-8, max_iter=100_000,
                 record=False, step_tol=1e-6) -> AscentResult:
    """Maximize a concave ``fun`` over the box ``[lower, upper]``.

    ``fun(x)`` returns ``(value, grad, hess)``. Stops when the projected
    gradient's max-norm drops below ``tol`` and the projected Newton step is
    below ``step_tol``, or after three accepted steps that fail to change the
    value beyond round-off (``stalled``). The accepted iterates have
    nondecreasing objective values.
    """
    lower = np.broadcast_to(np.asarray(lower, dtype=float), np.shape(x0))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), np.shape(x0))
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    f, g, H = fun(x)
    history = [f] if record else []
    it = 0
    stalls = 0
    pg = projected_grad(x, g, lower, upper)
    while it < max_iter:
        gnorm = float(np.max(np.abs(pg), initial=0.0))
        at_lo = (x <= lower) & (g < 0)
        at_hi = (x >= upper) & (g > 0)
        free = ~(at_lo | at_hi)
        d = np.zeros_like(x)
        if free.any():
            Hf = H[np.ix_(free, free)]
            sol, *_ = np.linalg.lstsq(-Hf, g[free], rcond=1e-12)
            d[free] = sol
        newton_ok = np.all(np.isfinite(d)) and g @ d > 0
        # a tiny gradient with a long Newton step means the optimum lies at the box
        step = float(np.max(np.abs(np.clip(x + d, lower, upper) - x), initial=0.0)) if newton_ok else 0.0
        if gnorm <= tol and step <= step_tol:
            return AscentResult(x, f, gnorm, it, True, history)
        it += 1
        if not newton_ok:
            d = np.where(free, g, 0.0)
        accepted = False
        for direction in (d, np.where(free, g, 0.0)):
            t = 1.0
            while t > 1e-14:
                xn = np.clip(x + t * direction, lower, upper)
                fn, gn, Hn = fun(xn)
                if np.isfinite(fn) and fn >= f + 1e-4 * (g @ (xn - x)) and fn >= f:
                    accepted = True
                    break
                t *= 0.5
            if accepted:
                break
        if not accepted:
            break
        # no representable progress: the iterate sits at the optimum up to round-off
        stalls = stalls + 1 if fn - f <= 4 * np.finfo(float).eps * abs(f) else 0
        x, f, g, H = xn, fn, gn, Hn
        if stalls >= 3:
            pg = projected_grad(x, g, lower, upper)
            gnorm = float(np.max(np.abs(pg), initial=0.0))
            return AscentResult(x, f, gnorm, it, gnorm <= 1e3 * tol, history, True)
        pg = projected_grad(x, g, lower, upper)
        if record:
            history.append(f)
    gnorm = float(np.max(np.abs(pg), initial=0.0))
    return AscentResult(x, f, gnorm, it, gnorm <= tol, history)


def pairwise_objective(win, u, phi):
    """Value, gradient and Hessian of ``sum_{a,b} win[a,b] * phi(u[a] - u[b])``.

    ``phi(d)`` maps the gap matrix ``d[a, b] = u[a] - u[b]`` to
    ``(value, first derivative, second derivative)`` arrays.
    """
    d = u[:, None] - u[None, :]
    val, d1, d2 = phi(d)
    mask = win > 0
    value = float(np.sum(win[mask] * val[mask]))
    # self-comparisons add a constant; leaving them out of the derivatives avoids round-off
    mask &= ~np.eye(len(u), dtype=bool)
    gw = np.where(mask, win * d1, 0.0)
    grad = gw.sum(axis=1) - gw.sum(axis=0)
    hw = np.where(mask, win * d2, 0.0)
    s = hw + hw.T
    hess = np.diag(s.sum(axis=1)) - s
    return value, grad, hess
