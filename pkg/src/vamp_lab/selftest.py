"""Oracle and equivalence checks run by ``vamp-lab validate``.

Each check returns ``(ok, detail)``; ``run_all`` collects them in order.
Everything here is small enough to finish in a few seconds.
"""

from __future__ import annotations

import math

import numpy as np

from .algorithms import SolverOptions, amp_run, g2_divergence, g2_lmmse, ist_run, vamp_lmmse_run, vamp_svd_run
from .denoisers import BgMmse, SoftThreshold
from .matgen import BgPrior, ProblemInstance, synthesize_problem
from .oracle import lmmse_direct_solve
from .state_evolution import (
    SpectralDistribution,
    error_fn_lmmse,
    replica_solve,
    se_matched_run,
    se_run,
    sens_fn_lmmse,
)

PRIOR = BgPrior(0.1, 1.0)


def _rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


def _small_problem(seed, kappa=10.0, m=30, n=60, snr_db=30.0):
    return synthesize_problem(("rotinv", kappa), m, n, PRIOR, snr_db, np.random.default_rng(seed))


def check_form_equivalence(seed=0, instances=5, tol=1e-8):
    worst = 0.0
    for i in range(instances):
        p = _small_problem(seed + i)
        opts = SolverOptions.matched(p, PRIOR, damp=1.0, tol=0.0, max_iters=20)
        a = vamp_svd_run(p, BgMmse(PRIOR), opts)
        b = vamp_lmmse_run(p, BgMmse(PRIOR), opts)
        if len(a.records) != len(b.records):
            return False, f"instance {i}: iteration counts differ"
        for ra, rb in zip(a.records, b.records):
            scale = max(np.linalg.norm(rb.xhat1), 1e-300)
            worst = max(worst, np.linalg.norm(ra.xhat1 - rb.xhat1) / scale,
                        _rel(ra.gamma1, rb.gamma1), _rel(ra.gamma2, rb.gamma2))
    return worst < tol, f"max relative gap {worst:.2e}"


def check_lmmse_dense(seed=0, tol=1e-10):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((15, 25))
    p = ProblemInstance.from_matrix(a, rng.standard_normal(15))
    r2, gamma2, gamma_w = rng.standard_normal(25), 0.7, 3.0
    gap = _rel(g2_lmmse(r2, gamma2, p, gamma_w), lmmse_direct_solve(r2, gamma2, a, p.y, gamma_w))
    q = gamma_w * a.T @ a + gamma2 * np.eye(25)
    trace_gap = abs(g2_divergence(gamma2, p, gamma_w) - gamma2 * np.trace(np.linalg.inv(q)) / 25)
    ok = gap < 1e-8 and trace_gap < tol
    return ok, f"solve gap {gap:.2e}, divergence gap {trace_gap:.2e}"


def check_lmmse_trace_forms(seed=0, tol=1e-10):
    """Spectral forms of the LMMSE error and sensitivity against dense matrix traces."""
    rng = np.random.default_rng(seed)
    m, n = 12, 20
    a = rng.standard_normal((m, n))
    p = ProblemInstance.from_matrix(a, np.zeros(m))
    spec = SpectralDistribution.from_problem(p)
    gamma2, tau2, gamma_w, gamma_w0 = 0.8, 1.7, 2.5, 4.0
    q_inv = np.linalg.inv(gamma_w * a.T @ a + gamma2 * np.eye(n))
    cov = gamma_w**2 / gamma_w0 * a.T @ a + gamma2**2 * tau2 * np.eye(n)
    e_dense = np.trace(q_inv @ cov @ q_inv) / n
    a_dense = gamma2 * np.trace(q_inv) / n
    gap = max(abs(error_fn_lmmse(spec, gamma2, tau2, gamma_w, gamma_w0) - e_dense) / e_dense,
              abs(sens_fn_lmmse(spec, gamma2, gamma_w) - a_dense) / a_dense)
    return gap < tol, f"relative gap {gap:.2e}"


def check_denoiser_derivative(seed=0, points=200, tol=1e-5):
    rng = np.random.default_rng(seed)
    den = BgMmse(PRIOR)
    worst = 0.0
    for gamma in (0.5, 10.0, 1e3):
        r = rng.standard_normal(points) * (2.0 / math.sqrt(gamma) + 0.5)
        h = 1e-6 * max(1.0, 1.0 / math.sqrt(gamma))
        fd = (den(r + h, gamma)[0] - den(r - h, gamma)[0]) / (2 * h)
        worst = max(worst, float(np.max(np.abs(den(r, gamma)[1] - fd))))
    return worst < tol, f"max |analytic - finite difference| {worst:.2e}"


def check_se_matched(tol=1e-10):
    spec = SpectralDistribution.geometric(64, 128, 10.0)
    gamma_w0 = 1e3
    e0 = PRIOR.second_moment
    general = se_run(BgMmse(PRIOR), spec, gamma_w0, gamma_w0, e0, 1.0 / e0, 15)
    matched = se_matched_run(PRIOR, spec, gamma_w0, 15, tol=0.0)
    gap = max(_rel(general.column(c), matched.column(c)) for c in ("gamma1", "gamma2", "eta1", "eta2"))
    return gap < tol, f"relative gap {gap:.2e}"


def check_replica_fixed_point(tol=1e-9):
    sol = replica_solve(PRIOR, SpectralDistribution.geometric(512, 1024, 100.0), 1e4)
    worst = max(sol.residuals)
    return worst < tol and sol.converged, f"residuals {sol.residuals[0]:.1e}, {sol.residuals[1]:.1e}"


def check_ist_ablation(seed=0):
    p = _small_problem(seed, kappa=1.0)
    opts = SolverOptions(gamma_w=p.gamma_w0, max_iters=30, tol=0.0, damp=1.0, gamma_init=50.0)
    den = SoftThreshold(1.0)
    a = amp_run(p, den, opts, gamma_rule="fixed", onsager_scale=0.0)
    b = ist_run(p, den, opts)
    same = len(a.records) == len(b.records) and all(
        np.array_equal(x.xhat1, y.xhat1) for x, y in zip(a.records, b.records))
    return same, "bit-identical" if same else "iterates differ"


CHECKS = {
    "form_equivalence": check_form_equivalence,
    "lmmse_dense": check_lmmse_dense,
    "lmmse_trace_forms": check_lmmse_trace_forms,
    "denoiser_derivative": check_denoiser_derivative,
    "se_matched": check_se_matched,
    "replica_fixed_point": check_replica_fixed_point,
    "ist_ablation": check_ist_ablation,
}


def run_all():
    out = []
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, not a crashed validator
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out
