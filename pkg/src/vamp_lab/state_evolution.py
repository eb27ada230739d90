"""Scalar state evolution, error/sensitivity functions and the replica fixed point."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from .denoisers import BgMmse
from .errors import DomainError, InvalidInputError, SeInvalidError
from .matgen import geometric_spectrum

ZERO_SIGNAL = "zero"

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_Z_MAX = 12.0
_PANEL_RATIO = 1.3


@dataclass(frozen=True)
class SpectralDistribution:
    """Discrete law of a non-negative random variable (singular values or eigenvalues)."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if values.shape != weights.shape or values.ndim != 1 or values.size == 0:
            raise InvalidInputError("values and weights must be equal-length 1-D arrays")
        if np.any(values < 0) or np.any(weights <= 0):
            raise InvalidInputError("values must be >= 0 and weights > 0")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidInputError(f"weights sum to {weights.sum()}, not 1")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    @property
    def max_value(self):
        return float(self.values.max())

    def mean(self):
        return float(self.weights @ self.values)

    def expect(self, fn):
        return float(self.weights @ fn(self.values))

    @classmethod
    def from_singular_values(cls, s_bar, n):
        """Square embedding: the ``r`` values get weight 1/n each, zero gets the remaining ``(n - r)/n``."""
        s_bar = np.asarray(s_bar, dtype=float)
        r = s_bar.size
        if r > n:
            raise InvalidInputError(f"rank {r} exceeds n = {n}")
        values, weights = s_bar, np.full(r, 1.0 / n)
        if r < n:
            values = np.append(values, 0.0)
            weights = np.append(weights, (n - r) / n)
        return cls(values, weights)

    @classmethod
    def from_problem(cls, problem):
        return cls.from_singular_values(problem.s_bar, problem.n)

    @classmethod
    def geometric(cls, m, n, kappa):
        return cls.from_singular_values(geometric_spectrum(m, n, kappa), n)

    def squared(self, scale=1.0):
        """Law of ``scale * S**2``, e.g. the eigenvalues of ``gamma_w0 A'A``."""
        return SpectralDistribution(scale * self.values**2, self.weights)


# ---------------------------------------------------------------------------
# denoiser-side expectations


def _half_line_panels(scale_hint, extra):
    z_lo = 1e-3 * min(1.0, scale_hint)
    edges = np.geomspace(z_lo, _Z_MAX, int(math.ceil(math.log(_Z_MAX / z_lo) / math.log(_PANEL_RATIO))) + 1)
    edges = np.concatenate(([0.0], edges, [z for z in extra if 0 < z < _Z_MAX]))
    return np.unique(edges)


def _gauss_expect_even(fn, sd, gamma, breaks=()):
    """``E[fn(sd * Z)]`` for ``Z ~ N(0, 1)`` and even ``fn``, by panelled Gauss-Legendre on [0, 12].

    Panels are geometric in ``z`` down to well below the denoiser's own
    transition scale ``1/(sd sqrt(gamma))``, so sharp shrinkage near zero
    is resolved even when ``sd`` is large.
    """
    edges = _half_line_panels(1.0 / (sd * math.sqrt(gamma)), [b / sd for b in breaks])
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    z = (lo + hi) / 2 + half * _GL_NODES
    w = half * _GL_WEIGHTS * np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    vals = [np.asarray(v) for v in fn(sd * z.ravel())]
    return tuple(2.0 * float(np.sum(w.ravel() * v)) for v in vals)


def _signal_law(denoiser, prior):
    if prior is None:
        if isinstance(denoiser, BgMmse):
            return denoiser.prior
        raise InvalidInputError("signal prior required for non-MMSE denoisers")
    return prior


def _denoiser_moments(denoiser, gamma1, tau1, prior):
    """Return ``(E1, A1)``: MSE and mean derivative of the denoiser at input noise ``tau1``."""
    if not (gamma1 > 0 and math.isfinite(gamma1)):
        raise InvalidInputError(f"gamma1 must be positive and finite, got {gamma1}")
    if not (tau1 >= 0 and math.isfinite(tau1)):
        raise InvalidInputError(f"tau1 must be finite and >= 0, got {tau1}")
    prior = _signal_law(denoiser, prior)
    breaks = denoiser.breakpoints(gamma1)

    def zero_branch(r):
        xhat, deriv = denoiser(r, gamma1)
        return xhat * xhat, deriv

    if tau1 == 0:
        e0, a0 = (float(v[0]) for v in zero_branch(np.zeros(1)))
    else:
        e0, a0 = _gauss_expect_even(zero_branch, math.sqrt(tau1), gamma1, breaks)
    if prior == ZERO_SIGNAL:
        return e0, a0

    s2 = prior.sigma_x2
    shrink = s2 / (s2 + tau1)
    resid_var = s2 * tau1 / (s2 + tau1)

    def slab_branch(r):
        # X0 | R under the true slab is N(shrink * R, resid_var)
        xhat, deriv = denoiser(r, gamma1)
        return (xhat - shrink * r) ** 2 + resid_var, deriv

    e1, a1 = _gauss_expect_even(slab_branch, math.sqrt(s2 + tau1), gamma1, breaks)
    rho = prior.rho
    return (1 - rho) * e0 + rho * e1, (1 - rho) * a0 + rho * a1


def error_fn_denoiser(denoiser, gamma1, tau1, prior=None):
    """``E[(g1(X0 + P, gamma1) - X0)^2]`` with ``P ~ N(0, tau1)``.

    ``prior`` is the law of X0 (defaults to the denoiser's own prior for
    ``BgMmse``); pass ``ZERO_SIGNAL`` for X0 identically zero.
    """
    return _denoiser_moments(denoiser, gamma1, tau1, prior)[0]


def sens_fn_denoiser(denoiser, gamma1, tau1, prior=None):
    """``E[g1'(X0 + P, gamma1)]`` with ``P ~ N(0, tau1)``."""
    return _denoiser_moments(denoiser, gamma1, tau1, prior)[1]


# ---------------------------------------------------------------------------
# LMMSE-side expectations


def error_fn_lmmse(spectrum, gamma2, tau2, gamma_w, gamma_w0):
    if not gamma2 > 0:
        raise InvalidInputError(f"gamma2 must be positive, got {gamma2}")
    if tau2 < 0:
        raise InvalidInputError(f"tau2 must be >= 0, got {tau2}")
    return spectrum.expect(
        lambda s: (gamma_w**2 * s**2 / gamma_w0 + tau2 * gamma2**2) / (gamma_w * s**2 + gamma2) ** 2)


def sens_fn_lmmse(spectrum, gamma2, gamma_w):
    if not gamma2 > 0:
        raise InvalidInputError(f"gamma2 must be positive, got {gamma2}")
    return spectrum.expect(lambda s: gamma2 / (gamma_w * s**2 + gamma2))


# ---------------------------------------------------------------------------
# state evolution


@dataclass
class SeStep:
    k: int
    gamma1: float
    tau1: float
    alpha1: float
    eta1: float
    gamma2: float
    tau2: float
    alpha2: float
    eta2: float
    mse1: float
    mse2: float


@dataclass
class SeTrace:
    steps: list = field(default_factory=list)
    second_moment: float = math.nan

    def column(self, name):
        return np.array([getattr(st, name) for st in self.steps])

    @property
    def nmse(self):
        """Predicted NMSE of the denoiser output per iteration."""
        return self.column("mse1") / self.second_moment


def se_run(denoiser, spectrum, gamma_w, gamma_w0, tau10, gamma10, k_max, prior=None):
    """General (possibly mismatched) state evolution.

    Raises ``SeInvalidError`` as soon as a sensitivity leaves (0, 1), since
    the precisions derived from it would turn negative.
    """
    law = _signal_law(denoiser, prior)
    trace = SeTrace(second_moment=0.0 if law == ZERO_SIGNAL else law.second_moment)
    gamma1, tau1 = float(gamma10), float(tau10)
    for k in range(k_max):
        e1, alpha1 = _denoiser_moments(denoiser, gamma1, tau1, law)
        if not 0 < alpha1 < 1:
            raise SeInvalidError(f"denoiser sensitivity {alpha1} outside (0, 1)", k)
        eta1 = gamma1 / alpha1
        gamma2 = eta1 - gamma1
        tau2 = (e1 - alpha1**2 * tau1) / (1 - alpha1) ** 2

        alpha2 = sens_fn_lmmse(spectrum, gamma2, gamma_w)
        if not 0 < alpha2 < 1:
            raise SeInvalidError(f"LMMSE sensitivity {alpha2} outside (0, 1)", k)
        e2 = error_fn_lmmse(spectrum, gamma2, tau2, gamma_w, gamma_w0)
        eta2 = gamma2 / alpha2
        trace.steps.append(SeStep(k, gamma1, tau1, alpha1, eta1, gamma2, tau2, alpha2, eta2, e1, e2))
        gamma1 = eta2 - gamma2
        tau1 = (e2 - alpha2**2 * tau2) / (1 - alpha2) ** 2
    return trace


def _matched_e1(prior, gamma1):
    return error_fn_denoiser(BgMmse(prior), gamma1, 1.0 / gamma1, prior)


def _matched_e2(spectrum, gamma2, gamma_w0):
    return spectrum.expect(lambda s: 1.0 / (gamma_w0 * s**2 + gamma2))


def se_matched_run(prior, spectrum, gamma_w0, k_max, tol=1e-12):
    """Matched-MMSE state evolution from ``gamma10 = 1/E[X0^2]``; stops early at a fixed point."""
    trace = SeTrace(second_moment=prior.second_moment)
    gamma1 = 1.0 / prior.second_moment
    for k in range(k_max):
        eta1 = 1.0 / _matched_e1(prior, gamma1)
        gamma2 = eta1 - gamma1
        if not gamma2 > 0:
            raise SeInvalidError(f"non-positive precision gamma2 = {gamma2}", k)
        eta2 = 1.0 / _matched_e2(spectrum, gamma2, gamma_w0)
        gamma1_next = eta2 - gamma2
        if not gamma1_next > 0:
            raise SeInvalidError(f"non-positive precision gamma1 = {gamma1_next}", k)
        trace.steps.append(SeStep(k, gamma1, 1.0 / gamma1, gamma1 / eta1, eta1,
                                  gamma2, 1.0 / gamma2, gamma2 / eta2, eta2, 1.0 / eta1, 1.0 / eta2))
        done = abs(gamma1_next - gamma1) / gamma1 < tol
        gamma1 = gamma1_next
        if done:
            break
    return trace


# ---------------------------------------------------------------------------
# spectral transforms and the replica fixed point


def stieltjes(eigs, omega):
    """``E[1/(lambda - omega)]`` for ``omega`` strictly below the spectrum."""
    lam_min = float(eigs.values.min())
    if not omega < lam_min:
        raise DomainError(f"omega = {omega} must lie below the smallest eigenvalue {lam_min}")
    return eigs.expect(lambda lam: 1.0 / (lam - omega))


def stieltjes_inverse(eigs, u):
    """The unique ``z < min(eigs)`` with ``stieltjes(eigs, z) = u`` (requires ``u > 0``)."""
    if not (u > 0 and math.isfinite(u)):
        raise DomainError(f"Stieltjes transform only attains positive values, got {u}")
    lam_min = float(eigs.values.min())
    w_min = float(eigs.weights[eigs.values == lam_min].sum())
    # S(lam_min - 1/u) <= u <= S(lam_min - w_min/u)
    lo, hi = lam_min - 1.0 / u, lam_min - w_min / u
    if lo == hi:
        return lo
    return brentq(lambda z: stieltjes(eigs, z) - u, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                  maxiter=500)


def r_transform(eigs, omega):
    """``S^{-1}(-omega) - 1/omega``."""
    if omega == 0:
        raise DomainError("R-transform is evaluated at omega != 0")
    return stieltjes_inverse(eigs, -omega) - 1.0 / omega


@dataclass
class ReplicaSolution:
    gamma1_star: float
    eta_star: float
    mse: float
    nmse: float
    iterations: int
    converged: bool
    residuals: tuple = (math.nan, math.nan)

    def as_dict(self):
        return asdict(self)


def replica_solve(prior, spectrum, gamma_w0, max_iters=10_000):
    """Solve ``gamma1 = R_C(-1/eta)``, ``1/eta = E1(gamma1)`` for ``C = gamma_w0 A'A``.

    The matched state evolution is run to its fixed point, then both
    equations are re-checked through the independent R-transform path.
    """
    trace = se_matched_run(prior, spectrum, gamma_w0, max_iters)
    last = trace.steps[-1]
    eta = last.eta2
    gamma1 = eta - last.gamma2
    eigs = spectrum.squared(gamma_w0)
    res_r = abs(gamma1 - r_transform(eigs, -1.0 / eta)) / gamma1
    res_e = abs(1.0 / eta - _matched_e1(prior, gamma1)) * eta
    converged = res_r < 1e-9 and res_e < 1e-9
    return ReplicaSolution(gamma1_star=gamma1, eta_star=eta, mse=1.0 / eta,
                           nmse=1.0 / (eta * prior.second_moment), iterations=len(trace.steps),
                           converged=bool(converged), residuals=(res_r, res_e))


def se_to_json(config, trace, fixed_point=None):
    """JSON-ready document ``{config, per_iteration, fixed_point}``."""
    doc = {"config": config,
           "per_iteration": [dict(asdict(st), nmse=st.mse1 / trace.second_moment) for st in trace.steps]}
    if fixed_point is not None:
        doc["fixed_point"] = {"gamma1": fixed_point.gamma1_star, "eta": fixed_point.eta_star,
                              "nmse": fixed_point.nmse, "nmse_db": 10 * math.log10(fixed_point.nmse),
                              "converged": fixed_point.converged}
    return doc
