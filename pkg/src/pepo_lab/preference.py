"""Bradley-Terry machinery, with and without ties.

All functions accept scalars or numpy arrays and broadcast. The gap argument
of :func:`sigma_pess` is the already beta-scaled reward gap.
"""

import numpy as np
from scipy.special import expit, logsumexp


def _out(value):
    value = np.asarray(value, dtype=float)
    return float(value) if value.ndim == 0 else value


def sigma(x):
    """Logistic sigmoid ``1 / (1 + exp(-x))``."""
    return _out(expit(np.asarray(x, dtype=float)))


def log_sigma_pess(x, lam):
    """``log sigma_pess(x, lam)`` evaluated as ``x/2 - logsumexp(x/2, -x/2, log lam)``."""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    x, lam = np.broadcast_arrays(x, lam)
    with np.errstate(divide="ignore"):
        log_lam = np.log(lam)
    terms = np.stack([x / 2, -x / 2, log_lam])
    return _out(x / 2 - logsumexp(terms, axis=0))


def sigma_pess(x, lam):
    """Pessimistic sigmoid ``e^{x/2} / (e^{x/2} + e^{-x/2} + lam)``.

    Equals ``sigma(x - log(1 + lam * e^{x/2}))``; ``lam = 0`` gives ``sigma``.
    """
    return _out(np.exp(log_sigma_pess(x, lam)))


def tie_probability(delta, lam):
    """Tie probability ``lam / (e^{delta/2} + e^{-delta/2} + lam)``."""
    delta = np.asarray(delta, dtype=float)
    lam = np.asarray(lam, dtype=float)
    delta, lam = np.broadcast_arrays(delta, lam)
    with np.errstate(divide="ignore"):
        log_lam = np.log(lam)
    terms = np.stack([delta / 2, -delta / 2, log_lam])
    return _out(np.exp(log_lam - logsumexp(terms, axis=0)))


def sigma_pess_inv(y, lam):
    """Inverse of :func:`sigma_pess` in its first argument.

    Uses ``log(u) + 2 arsinh(lam sqrt(u) / 2)`` with ``u = y / (1 - y)``, which
    is algebraically the same as ``2 log((lam y + sqrt(lam^2 y^2 + 4y - 4y^2)) / (2(1-y)))``.
    ``y = 0`` maps to ``-inf``; values outside ``[0, 1)`` raise ``ValueError``.
    """
    y = np.asarray(y, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ValueError("tie weight must be nonnegative")
    if np.any(~np.isfinite(y)) or np.any(y < 0) or np.any(y >= 1):
        raise ValueError("sigma_pess_inv is defined for 0 <= y < 1")
    with np.errstate(divide="ignore"):
        u = y / (1.0 - y)
        out = np.log(u) + 2.0 * np.arcsinh(0.5 * lam * np.sqrt(u))
    return _out(out)


def sigma_pess_inv_direct(y, lam):
    """Textbook closed form of the inverse; kept as a cross-check."""
    y = np.asarray(y, dtype=float)
    lam = np.asarray(lam, dtype=float)
    root = np.sqrt(lam**2 * y**2 + 4 * y - 4 * y**2)
    return _out(2.0 * np.log((lam * y + root) / (2.0 * (1.0 - y))))


def bt_win_prob(r, x, a, b):
    """``P(a beats b | x) = sigma(r[x, a] - r[x, b])`` for a reward table ``r``."""
    r = np.asarray(r, dtype=float)
    return sigma(r[x, a] - r[x, b])


def quad_bound(x, lam):
    """Upper bound ``x + lam^2 e^x + lam e^{x/2}`` on ``sigma_pess_inv(sigma(x), lam)``."""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    return _out(x + lam**2 * np.exp(x) + lam * np.exp(x / 2))


def lipschitz_bound(r_max, lam):
    """Lipschitz constant of ``sigma_pess_inv(., lam)`` on ``[a, 1 - a]``, ``a = 1/(e^{2 r_max} + 1)``."""
    r_max = np.asarray(r_max, dtype=float)
    lam = np.asarray(lam, dtype=float)
    k = np.exp(2 * r_max) + 1
    return _out((lam + 2) * k + (lam**2 + 6) / 2 * k**2)


def lipschitz_interval(r_max):
    """The interval ``[a, 1 - a]`` on which :func:`lipschitz_bound` applies."""
    a = 1.0 / (np.exp(2 * r_max) + 1)
    return a, 1.0 - a
