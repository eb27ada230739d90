"""VAMP (SVD and LMMSE forms), AMP and IST with per-iteration traces."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NumericalFailure

ALPHA_FLOOR = 1e-8


@dataclass(frozen=True)
class SolverOptions:
    gamma_w: float
    max_iters: int = 100
    tol: float = 1e-4
    gamma_min: float = 1e-11
    gamma_max: float = 1e11
    damp: float = 0.97
    r_init: np.ndarray | None = None
    gamma_init: float = 1.0

    def __post_init__(self):
        if not 0 < self.gamma_min < self.gamma_max:
            raise InvalidInputError("need 0 < gamma_min < gamma_max")
        if not 0 < self.damp <= 1:
            raise InvalidInputError(f"damp must lie in (0, 1], got {self.damp}")
        if self.tol < 0:
            raise InvalidInputError("tol must be non-negative")
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be positive")
        if not (self.gamma_w >= 0 and math.isfinite(self.gamma_w)):
            raise InvalidInputError(f"gamma_w must be finite and >= 0, got {self.gamma_w}")

    @classmethod
    def matched(cls, problem, prior, **kw):
        """Defaults used throughout the experiments: true noise precision and a cold start."""
        kw.setdefault("gamma_w", problem.gamma_w0)
        kw.setdefault("gamma_init", cold_start_gamma(prior.second_moment))
        return cls(**kw)

    def clip(self, gamma):
        return min(max(gamma, self.gamma_min), self.gamma_max)


COLD_START = 1e-6


def cold_start_gamma(second_moment):
    """Initial denoiser precision paired with ``r_init = 0``.

    With a tiny gamma the first denoiser pass is nearly linear, so the
    LMMSE block starts from ``r2 = 0`` at precision ``1/E[x0^2]``, which is
    calibrated. Starting at ``gamma = 1/E[x0^2]`` instead treats ``r = 0``
    as a Gaussian observation of ``x0``; the divergence comes out far too
    small and the iteration stalls for several steps.
    """
    return COLD_START / second_moment


@dataclass
class IterationRecord:
    k: int
    r1: np.ndarray
    gamma1: float
    alpha1: float
    eta1: float
    xhat1: np.ndarray
    r2: np.ndarray | None = None
    gamma2: float = math.nan
    alpha2: float = math.nan
    eta2: float = math.nan
    nmse: float = math.nan
    rel_change: float = math.nan


@dataclass(frozen=True)
class Termination:
    kind: str  # "converged" | "max_iters" | "numerical_failure"
    k: int | None = None
    detail: str | None = None


@dataclass
class AlgorithmTrace:
    records: list = field(default_factory=list)
    final_xhat: np.ndarray | None = None
    termination: Termination | None = None

    @property
    def nmse(self):
        return np.array([rec.nmse for rec in self.records])

    @property
    def failed(self):
        return self.termination is not None and self.termination.kind == "numerical_failure"


def _nmse(xhat, x0):
    if x0 is None:
        return math.nan
    err, den = float(np.sum((xhat - x0) ** 2)), float(np.sum(x0**2))
    if den == 0:
        return 0.0 if err == 0 else math.inf
    return err / den


def _rel_change(new, old):
    den = np.linalg.norm(new)
    return float(np.linalg.norm(new - old) / den) if den > 0 else math.inf


def _clamp_alpha(alpha):
    return min(max(alpha, ALPHA_FLOOR), 1.0 - ALPHA_FLOOR)


def _initial_state(problem, opts):
    r = np.zeros(problem.n) if opts.r_init is None else np.array(opts.r_init, dtype=float)
    if r.shape != (problem.n,):
        raise InvalidInputError(f"r_init has shape {r.shape}, expected ({problem.n},)")
    return r, opts.clip(opts.gamma_init)


def _finite(where, *values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise NumericalFailure(f"non-finite value at {where}")


def g2_lmmse(r2, gamma2, problem, gamma_w):
    """LMMSE estimate ``(gamma_w A'A + gamma2 I)^{-1} (gamma_w A'y + gamma2 r2)`` via the stored SVD."""
    if not gamma2 > 0:
        raise InvalidInputError(f"gamma2 must be positive, got {gamma2}")
    s2 = problem.s_bar**2
    gain = gamma_w * s2 / (gamma_w * s2 + gamma2)
    ytil = (problem.u_bar.T @ problem.y) / problem.s_bar
    v = problem.v_bar
    return r2 + v @ (gain * (ytil - v.T @ r2))


def g2_divergence(gamma2, problem, gamma_w):
    """``(gamma2/N) Tr[(gamma_w A'A + gamma2 I)^{-1}]``; null directions contribute 1 each."""
    if not gamma2 > 0:
        raise InvalidInputError(f"gamma2 must be positive, got {gamma2}")
    s2 = problem.s_bar**2
    n, r = problem.n, problem.r
    return float((np.sum(gamma2 / (gamma_w * s2 + gamma2)) + (n - r)) / n)


def g2_complement(gamma2, problem, gamma_w):
    """``1 - g2_divergence``, computed directly so it keeps full relative accuracy near 0."""
    s2 = problem.s_bar**2
    return float(np.sum(gamma_w * s2 / (gamma_w * s2 + gamma2)) / problem.n)


def g2_lmmse_dense(r2, gamma2, problem, gamma_w):
    from .oracle import lmmse_direct_solve

    return lmmse_direct_solve(r2, gamma2, problem.a, problem.y, gamma_w)


def vamp_svd_run(problem, denoiser, opts):
    """VAMP in SVD form with precision clipping, damping and early stopping.

    Damping of the estimate and of the next precision starts at iteration
    k = 2. The recorded ``alpha1`` is the raw divergence; the clamped value
    feeds the Onsager step.
    """
    n, r_rank = problem.n, problem.r
    ratio = n / r_rank
    s2 = problem.s_bar**2
    v = problem.v_bar
    ytil = (problem.u_bar.T @ problem.y) / problem.s_bar
    r, gamma = _initial_state(problem, opts)
    trace = AlgorithmTrace()
    xhat_prev = None
    where = "init"
    try:
        for k in range(opts.max_iters):
            where = "denoiser (lines 5-6)"
            x_new, derivs = denoiser(r, gamma)
            alpha_raw = float(np.mean(derivs))
            _finite(where, x_new, alpha_raw)
            damped = k > 1 and opts.damp < 1
            xhat = opts.damp * x_new + (1 - opts.damp) * xhat_prev if damped else x_new
            alpha = _clamp_alpha(alpha_raw)

            where = "Onsager step (lines 7-8)"
            r_tilde = (xhat - alpha * r) / (1 - alpha)
            gamma_tilde = opts.clip(gamma * (1 - alpha) / alpha)
            _finite(where, r_tilde, gamma_tilde)

            where = "LMMSE step (lines 9-11)"
            d = opts.gamma_w * s2 / (opts.gamma_w * s2 + gamma_tilde)
            d_mean = float(np.mean(d))
            gamma_next = gamma_tilde * d_mean / (ratio - d_mean)
            if damped:
                gamma_next = opts.damp * gamma_next + (1 - opts.damp) * gamma
            gamma_next = opts.clip(gamma_next)
            r_next = r_tilde + ratio * (v @ ((d / d_mean) * (ytil - v.T @ r_tilde)))
            _finite(where, r_next, gamma_next)

            change = _rel_change(r_next, r)
            trace.records.append(IterationRecord(
                k=k, r1=r, gamma1=gamma, alpha1=alpha_raw, eta1=gamma / alpha, xhat1=xhat,
                r2=r_tilde, gamma2=gamma_tilde, alpha2=1 - d_mean / ratio,
                eta2=gamma_tilde / (1 - d_mean / ratio), nmse=_nmse(xhat, problem.x0),
                rel_change=change))
            trace.final_xhat = xhat
            xhat_prev, r, gamma = xhat, r_next, gamma_next
            if change < opts.tol:
                trace.termination = Termination("converged", k)
                return trace
    except (NumericalFailure, InvalidInputError, FloatingPointError, ZeroDivisionError) as exc:
        trace.termination = Termination("numerical_failure", len(trace.records), f"{where}: {exc}")
        return trace
    trace.termination = Termination("max_iters", opts.max_iters - 1)
    return trace


def vamp_lmmse_run(problem, denoiser, opts, solver="svd"):
    """VAMP in LMMSE form; ``solver="dense"`` uses a direct factorization for each LMMSE step."""
    if solver == "svd":
        lmmse = g2_lmmse
    elif solver == "dense":
        lmmse = g2_lmmse_dense
    else:
        raise InvalidInputError(f"unknown solver {solver!r}")
    r1, gamma1 = _initial_state(problem, opts)
    trace = AlgorithmTrace()
    x1_prev = None
    where = "init"
    try:
        for k in range(opts.max_iters):
            where = "denoising block (lines 4-8)"
            x_new, derivs = denoiser(r1, gamma1)
            alpha1_raw = float(np.mean(derivs))
            _finite(where, x_new, alpha1_raw)
            damped = k > 1 and opts.damp < 1
            x1 = opts.damp * x_new + (1 - opts.damp) * x1_prev if damped else x_new
            alpha1 = _clamp_alpha(alpha1_raw)
            eta1 = gamma1 / alpha1
            # eta1 - gamma1 and (eta1 x1 - gamma1 r1)/(eta1 - gamma1), without the cancellation
            gamma2_raw = gamma1 * (1 - alpha1) / alpha1
            r2 = (x1 - alpha1 * r1) / (1 - alpha1)
            gamma2 = opts.clip(gamma2_raw)
            _finite(where, r2, gamma2)

            where = "LMMSE block (lines 11-15)"
            x2 = lmmse(r2, gamma2, problem, opts.gamma_w)
            alpha2 = g2_divergence(gamma2, problem, opts.gamma_w)
            comp2 = g2_complement(gamma2, problem, opts.gamma_w)
            eta2 = gamma2 / alpha2
            gamma1_raw = gamma2 * comp2 / alpha2
            r1_next = r2 + (x2 - r2) / comp2
            if damped:
                gamma1_raw = opts.damp * gamma1_raw + (1 - opts.damp) * gamma1
            gamma1_next = opts.clip(gamma1_raw)
            _finite(where, r1_next, gamma1_next)

            change = _rel_change(r1_next, r1)
            trace.records.append(IterationRecord(
                k=k, r1=r1, gamma1=gamma1, alpha1=alpha1_raw, eta1=eta1, xhat1=x1,
                r2=r2, gamma2=gamma2, alpha2=alpha2, eta2=eta2,
                nmse=_nmse(x1, problem.x0), rel_change=change))
            trace.final_xhat = x1
            x1_prev, r1, gamma1 = x1, r1_next, gamma1_next
            if change < opts.tol:
                trace.termination = Termination("converged", k)
                return trace
    except (NumericalFailure, InvalidInputError, FloatingPointError, ZeroDivisionError,
            np.linalg.LinAlgError) as exc:
        trace.termination = Termination("numerical_failure", len(trace.records), f"{where}: {exc}")
        return trace
    trace.termination = Termination("max_iters", opts.max_iters - 1)
    return trace


def amp_run(problem, denoiser, opts, gamma_rule="onsager_recursion", onsager_scale=1.0):
    """AMP. ``gamma_rule`` is ``"onsager_recursion"``, ``"residual_energy"`` or ``"fixed"``.

    ``onsager_scale`` multiplies the memory term; 0 turns AMP into IST.
    No damping is applied. Divergent runs are reported, not rescued.
    """
    if gamma_rule not in ("onsager_recursion", "residual_energy", "fixed"):
        raise InvalidInputError(f"unknown gamma rule {gamma_rule!r}")
    a, y = problem.a, problem.y
    m, n = a.shape
    r, gamma = _initial_state(problem, opts)
    v_prev = np.zeros(m)
    alpha_prev = 0.0
    trace = AlgorithmTrace()
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(opts.max_iters):
            xhat, derivs = _safe_denoise(denoiser, r, gamma)
            if xhat is None:
                trace.termination = Termination("numerical_failure", k, "denoiser input non-finite")
                return trace
            alpha = float(np.mean(derivs))
            v = y - a @ xhat + onsager_scale * (n / m) * alpha_prev * v_prev
            r_next = xhat + a.T @ v
            if gamma_rule == "onsager_recursion":
                gamma_next = 1.0 / (1.0 / opts.gamma_w + (n / m) * alpha / gamma)
            elif gamma_rule == "residual_energy":
                gamma_next = m / float(v @ v)
            else:
                gamma_next = gamma
            change = _rel_change(r_next, r)
            trace.records.append(IterationRecord(
                k=k, r1=r, gamma1=gamma, alpha1=alpha, eta1=gamma / alpha if alpha else math.inf,
                xhat1=xhat, nmse=_nmse(xhat, problem.x0), rel_change=change))
            trace.final_xhat = xhat
            if not (np.all(np.isfinite(r_next)) and math.isfinite(gamma_next) and gamma_next > 0):
                trace.termination = Termination("numerical_failure", k, "non-finite AMP iterate")
                return trace
            r, gamma = r_next, opts.clip(gamma_next)
            v_prev, alpha_prev = v, alpha
            if change < opts.tol:
                trace.termination = Termination("converged", k)
                return trace
    trace.termination = Termination("max_iters", opts.max_iters - 1)
    return trace


def ist_run(problem, denoiser, opts):
    """Iterative (soft) thresholding: AMP without the memory term, at a fixed precision."""
    a, y = problem.a, problem.y
    r, gamma = _initial_state(problem, opts)
    trace = AlgorithmTrace()
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(opts.max_iters):
            xhat, derivs = _safe_denoise(denoiser, r, gamma)
            if xhat is None:
                trace.termination = Termination("numerical_failure", k, "denoiser input non-finite")
                return trace
            alpha = float(np.mean(derivs))
            v = y - a @ xhat
            r_next = xhat + a.T @ v
            change = _rel_change(r_next, r)
            trace.records.append(IterationRecord(
                k=k, r1=r, gamma1=gamma, alpha1=alpha, eta1=gamma / alpha if alpha else math.inf,
                xhat1=xhat, nmse=_nmse(xhat, problem.x0), rel_change=change))
            trace.final_xhat = xhat
            if not np.all(np.isfinite(r_next)):
                trace.termination = Termination("numerical_failure", k, "non-finite IST iterate")
                return trace
            r = r_next
            if change < opts.tol:
                trace.termination = Termination("converged", k)
                return trace
    trace.termination = Termination("max_iters", opts.max_iters - 1)
    return trace


def _safe_denoise(denoiser, r, gamma):
    if not np.all(np.isfinite(r)):
        return None, None
    return denoiser(r, gamma)


def l1_objective(problem, xhat, lam_eff):
    """``0.5 ||y - A x||^2 + lam_eff ||x||_1``, the cost IST with soft thresholding descends."""
    resid = problem.y - problem.a @ xhat
    return 0.5 * float(resid @ resid) + lam_eff * float(np.sum(np.abs(xhat)))


TRACE_COLUMNS = ("iter", "gamma1", "alpha1", "eta1", "gamma2", "alpha2", "eta2", "nmse_db")


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for rec in trace.records:
            nmse_db = 10 * math.log10(rec.nmse) if rec.nmse > 0 else (
                -math.inf if rec.nmse == 0 else math.nan)
            writer.writerow([rec.k] + [repr(float(x)) for x in (
                rec.gamma1, rec.alpha1, rec.eta1, rec.gamma2, rec.alpha2, rec.eta2, nmse_db)])
