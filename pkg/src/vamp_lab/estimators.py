"""scikit-learn compatible wrappers around the iterative solvers.

The design matrix ``X`` plays the role of ``A`` (rows are measurements) and
``coef_`` is the recovered signal, so ``predict(X) == X @ coef_``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, validate_data

from .algorithms import SolverOptions, cold_start_gamma, amp_run, ist_run, vamp_lmmse_run, vamp_svd_run
from .denoisers import BgMmse, SoftThreshold
from .errors import InvalidInputError
from .matgen import BgPrior, ProblemInstance


def _moment_noise_precision(a, y, prior):
    # E||y||^2 = E[x^2] ||A||_F^2 + m / gamma_w
    # floored so the implied SNR never exceeds 40 dB
    m = a.shape[0]
    yy = float(y @ y)
    excess = yy - prior.second_moment * float(np.sum(a * a))
    return m / max(excess, 1e-4 * yy, np.finfo(float).tiny)


class _MessagePassingRegressor(RegressorMixin, BaseEstimator):
    def _problem(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        return ProblemInstance.from_matrix(X, y)

    def _finish(self, trace, gamma_w):
        self.trace_ = trace
        self.coef_ = trace.final_xhat
        self.n_iter_ = len(trace.records)
        self.converged_ = trace.termination.kind == "converged"
        self.noise_precision_ = gamma_w
        if trace.failed:
            raise InvalidInputError(f"solver failed: {trace.termination.detail}")
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return X @ self.coef_


class VAMPRegressor(_MessagePassingRegressor):
    """Sparse linear regression by VAMP with a Bernoulli-Gaussian MMSE denoiser.

    Parameters
    ----------
    rho, sigma_x2 : float
        Prior sparsity rate and variance of the nonzero coefficients.
    noise_precision : float or None
        Postulated noise precision; ``None`` uses a moment estimate from ``y``.
    form : {"svd", "lmmse"}
        Which (algebraically equivalent) form of the iteration to run.
    """

    def __init__(self, rho=0.1, sigma_x2=1.0, noise_precision=None, form="svd", damp=0.97,
                 tol=1e-4, max_iter=100, gamma_min=1e-11, gamma_max=1e11):
        self.rho = rho
        self.sigma_x2 = sigma_x2
        self.noise_precision = noise_precision
        self.form = form
        self.damp = damp
        self.tol = tol
        self.max_iter = max_iter
        self.gamma_min = gamma_min
        self.gamma_max = gamma_max

    def fit(self, X, y):
        problem = self._problem(X, y)
        prior = BgPrior(self.rho, self.sigma_x2)
        gamma_w = (self.noise_precision if self.noise_precision is not None
                   else _moment_noise_precision(problem.a, problem.y, prior))
        opts = SolverOptions(gamma_w=gamma_w, max_iters=self.max_iter, tol=self.tol,
                             gamma_min=self.gamma_min, gamma_max=self.gamma_max, damp=self.damp,
                             gamma_init=cold_start_gamma(prior.second_moment))
        if self.form == "svd":
            trace = vamp_svd_run(problem, BgMmse(prior), opts)
        elif self.form == "lmmse":
            trace = vamp_lmmse_run(problem, BgMmse(prior), opts)
        else:
            raise InvalidInputError(f"form must be 'svd' or 'lmmse', got {self.form!r}")
        return self._finish(trace, gamma_w)


class AMPRegressor(_MessagePassingRegressor):
    """AMP with a Bernoulli-Gaussian MMSE denoiser; diverges on ill-conditioned designs."""

    def __init__(self, rho=0.1, sigma_x2=1.0, noise_precision=None,
                 gamma_rule="onsager_recursion", tol=1e-4, max_iter=1000):
        self.rho = rho
        self.sigma_x2 = sigma_x2
        self.noise_precision = noise_precision
        self.gamma_rule = gamma_rule
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        problem = self._problem(X, y)
        prior = BgPrior(self.rho, self.sigma_x2)
        gamma_w = (self.noise_precision if self.noise_precision is not None
                   else _moment_noise_precision(problem.a, problem.y, prior))
        opts = SolverOptions(gamma_w=gamma_w, max_iters=self.max_iter, tol=self.tol, damp=1.0,
                             gamma_init=SolverOptions.gamma_min)
        trace = amp_run(problem, BgMmse(prior), opts, gamma_rule=self.gamma_rule)
        return self._finish(trace, gamma_w)


class ISTRegressor(_MessagePassingRegressor):
    """Iterative soft thresholding for ``0.5||y - Xb||^2 + (lam/gamma)||b||_1``.

    ``step=None`` uses ``1/||X||_2^2``, which guarantees monotone descent.
    """

    def __init__(self, lam=1.0, gamma=1.0, step=None, tol=1e-6, max_iter=1000):
        self.lam = lam
        self.gamma = gamma
        self.step = step
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        problem = self._problem(X, y)
        step = self.step
        if step is None:
            step = 1.0 / max(float(problem.s_bar[0]) ** 2, np.finfo(float).tiny)
        if not step > 0:
            raise InvalidInputError(f"step must be positive, got {step}")
        # a gradient step of size t on (A, y, lam) is a unit step on (sqrt(t) A, sqrt(t) y, t lam)
        scaled = ProblemInstance.from_matrix(np.sqrt(step) * problem.a, np.sqrt(step) * problem.y)
        opts = SolverOptions(gamma_w=1.0, max_iters=self.max_iter, tol=self.tol, damp=1.0,
                             gamma_init=self.gamma)
        trace = ist_run(scaled, SoftThreshold(self.lam * step), opts)
        self.step_ = step
        return self._finish(trace, None)
