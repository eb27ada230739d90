"""Reference estimators: the support-aware MMSE bound and a dense LMMSE solve."""

from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import InvalidInputError, NumericalFailure


def support_indices(x0):
    return np.flatnonzero(x0)


def _spd_solve(mat, rhs):
    try:
        return cho_solve(cho_factor(mat, lower=True), rhs)
    except (LinAlgError, ValueError) as exc:
        raise NumericalFailure(f"system is not positive definite: {exc}") from exc


def support_oracle_mmse(problem, support, prior, gamma_w0=None):
    """Posterior mean of x0 given its support, with N(0, sigma_x2) nonzeros.

    Off-support entries are zero; the on-support block solves
    ``(gamma A_S'A_S + I/sigma_x2) x_S = gamma A_S'y``.
    """
    gamma = problem.gamma_w0 if gamma_w0 is None else gamma_w0
    support = np.asarray(support, dtype=int)
    if support.size and (np.any(np.diff(support) <= 0) or support[0] < 0 or support[-1] >= problem.n):
        raise InvalidInputError("support must be sorted, unique and within [0, n)")
    xhat = np.zeros(problem.n)
    if support.size == 0:
        return xhat
    a_s = problem.a[:, support]
    gram = gamma * (a_s.T @ a_s) + np.eye(support.size) / prior.sigma_x2
    xhat[support] = _spd_solve(gram, gamma * (a_s.T @ problem.y))
    return xhat


def lmmse_direct_solve(r2, gamma2, a, y, gamma_w):
    """Dense Cholesky solve of ``(gamma_w A'A + gamma2 I) x = gamma_w A'y + gamma2 r2``."""
    if not gamma2 > 0:
        raise InvalidInputError(f"gamma2 must be positive, got {gamma2}")
    a = np.asarray(a, dtype=float)
    q = gamma_w * (a.T @ a) + gamma2 * np.eye(a.shape[1])
    return _spd_solve(q, gamma_w * (a.T @ y) + gamma2 * np.asarray(r2, dtype=float))
