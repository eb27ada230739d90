"""Separable scalar denoisers with analytic derivatives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import InvalidInputError
from .matgen import BgPrior


def _check_gamma(gamma):
    if not (math.isfinite(gamma) and gamma > 0):
        raise InvalidInputError(f"precision must be finite and positive, got {gamma}")


def _check_r(r):
    if not np.all(np.isfinite(r)):
        raise InvalidInputError("denoiser input contains non-finite values")


@dataclass(frozen=True)
class BgMmse:
    """Posterior-mean denoiser for a Bernoulli-Gaussian prior under AWGN of precision gamma."""

    prior: BgPrior

    def posterior(self, r, gamma):
        """Return ``(pi, slab_mean, slab_var)`` of the posterior given ``r``.

        ``pi`` is the posterior probability of the Gaussian component.
        """
        v = 1.0 / gamma
        s2 = self.prior.sigma_x2
        shrink = s2 / (s2 + v)
        slab_mean = shrink * r
        slab_var = shrink * v
        if self.prior.rho >= 1.0:
            return np.ones_like(r), slab_mean, slab_var
        rho = self.prior.rho
        # log odds of slab vs spike; stays finite for gamma up to 1e11
        logit = (math.log(rho / (1.0 - rho)) + 0.5 * math.log(v / (s2 + v))
                 + 0.5 * r * r * (shrink / v))
        return expit(logit), slab_mean, slab_var

    def __call__(self, r, gamma):
        r = np.asarray(r, dtype=float)
        _check_gamma(gamma)
        _check_r(r)
        pi, m, c = self.posterior(r, gamma)
        xhat = pi * m
        var = pi * c + pi * (1.0 - pi) * m * m
        return xhat, gamma * var

    def breakpoints(self, gamma):
        return ()


@dataclass(frozen=True)
class SoftThreshold:
    """``sign(r) max(|r| - lam/gamma, 0)``; derivative taken as 0 at the kink."""

    lam: float

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise InvalidInputError(f"lambda must be positive, got {self.lam}")

    def __call__(self, r, gamma):
        r = np.asarray(r, dtype=float)
        _check_gamma(gamma)
        _check_r(r)
        thresh = self.lam / gamma
        excess = np.abs(r) - thresh
        xhat = np.sign(r) * np.maximum(excess, 0.0)
        return xhat, (excess > 0).astype(float)

    def breakpoints(self, gamma):
        return (self.lam / gamma,)


def denoise(spec, r, gamma):
    """Apply ``spec`` componentwise; returns ``(xhat, deriv)`` with the shape of ``r``."""
    return spec(r, gamma)


def empirical_divergence(derivs):
    derivs = np.asarray(derivs, dtype=float)
    if derivs.size == 0:
        raise InvalidInputError("divergence of an empty vector is undefined")
    return float(np.mean(derivs))


def prior_second_moment(prior):
    return prior.second_moment
