import json
import math

import numpy as np
import pytest

from vamp_lab.denoisers import BgMmse, SoftThreshold
from vamp_lab.errors import DomainError, InvalidInputError, SeInvalidError
from vamp_lab.matgen import BgPrior, ProblemInstance, noise_precision
from vamp_lab.state_evolution import (
    ZERO_SIGNAL,
    SpectralDistribution,
    error_fn_denoiser,
    error_fn_lmmse,
    r_transform,
    replica_solve,
    se_matched_run,
    se_run,
    se_to_json,
    sens_fn_denoiser,
    sens_fn_lmmse,
    stieltjes,
    stieltjes_inverse,
)

PRIOR = BgPrior(0.1, 1.0)
GAUSS = BgPrior(1.0, 1.0)
UNIT = SpectralDistribution(np.array([1.0]), np.array([1.0]))


def _point(values, weights=None):
    values = np.asarray(values, dtype=float)
    weights = np.full(values.size, 1 / values.size) if weights is None else np.asarray(weights)
    return SpectralDistribution(values, weights)


# --- spectral distribution ------------------------------------------------


def test_square_embedding_weights():
    spec = SpectralDistribution.from_singular_values(np.array([2.0, 1.0]), 5)
    assert np.array_equal(spec.values, [2.0, 1.0, 0.0])
    assert np.allclose(spec.weights, [0.2, 0.2, 0.6])
    assert spec.mean() == pytest.approx(0.6)
    assert spec.max_value == 2.0


def test_spectral_validation():
    with pytest.raises(InvalidInputError):
        SpectralDistribution(np.array([1.0, 2.0]), np.array([0.5, 0.6]))
    with pytest.raises(InvalidInputError):
        SpectralDistribution(np.array([-1.0]), np.array([1.0]))


# --- denoiser-side error and sensitivity ------------------------------------


def test_gaussian_prior_matched_error():
    assert error_fn_denoiser(BgMmse(GAUSS), 1.0, 1.0) == pytest.approx(0.5, abs=1e-13)


def test_vanishing_noise_error():
    assert error_fn_denoiser(BgMmse(PRIOR), 1e10, 1e-10) <= 1e-9


def test_gaussian_sensitivity_constant():
    for tau in (0.0, 0.3, 5.0):
        assert sens_fn_denoiser(BgMmse(GAUSS), 1.0, tau) == pytest.approx(0.5, abs=1e-13)


def test_soft_threshold_dead_zone_sensitivity():
    assert sens_fn_denoiser(SoftThreshold(1.0), 1.0, 0.0, ZERO_SIGNAL) == 0.0
    assert error_fn_denoiser(SoftThreshold(1.0), 1.0, 0.0, ZERO_SIGNAL) == 0.0


def test_tau_negative_rejected():
    with pytest.raises(InvalidInputError):
        error_fn_denoiser(BgMmse(PRIOR), 1.0, -0.1)


@pytest.mark.parametrize("gamma", [0.3, 3.0, 30.0, 300.0, 3e4])
def test_matched_sensitivity_equals_gamma_times_error(gamma):
    den = BgMmse(PRIOR)
    e = error_fn_denoiser(den, gamma, 1 / gamma)
    a = sens_fn_denoiser(den, gamma, 1 / gamma)
    assert a == pytest.approx(gamma * e, rel=1e-9)


def test_error_matches_monte_carlo_example():
    # gamma1 = 1/tau1 = 10, 1e7 samples in chunks
    rng = np.random.default_rng(0)
    den = BgMmse(PRIOR)
    total, total_sq, count = 0.0, 0.0, 0
    for _ in range(10):
        x0 = rng.standard_normal(1_000_000) * (rng.random(1_000_000) < 0.1)
        r = x0 + rng.standard_normal(x0.size) / math.sqrt(10)
        err = (den(r, 10.0)[0] - x0) ** 2
        total += err.sum()
        total_sq += (err**2).sum()
        count += err.size
    mean = total / count
    se = math.sqrt((total_sq / count - mean**2) / count)
    assert abs(error_fn_denoiser(den, 10.0, 0.1) - mean) < 3 * se


def test_soft_threshold_error_against_closed_form():
    # X0 = 0: E[soft(P)^2] has a closed form in terms of the normal tail
    from scipy.stats import norm

    lam, gamma, tau = 0.7, 2.0, 0.4
    t = lam / gamma
    s = math.sqrt(tau)
    a = t / s
    exact = 2 * ((tau + t * t) * norm.sf(a) - t * s * norm.pdf(a))
    assert error_fn_denoiser(SoftThreshold(lam), gamma, tau, ZERO_SIGNAL) == pytest.approx(exact, rel=1e-10)
    assert sens_fn_denoiser(SoftThreshold(lam), gamma, tau, ZERO_SIGNAL) == pytest.approx(2 * norm.sf(a), rel=1e-10)


# --- LMMSE-side ---------------------------------------------------------------


def test_lmmse_trivial_cases():
    assert error_fn_lmmse(UNIT, 1.0, 1.0, 1.0, 1.0) == pytest.approx(0.5)
    assert sens_fn_lmmse(UNIT, 1.0, 1.0) == pytest.approx(0.5)
    assert error_fn_lmmse(UNIT, 2.0, 0.7, 0.0, 1.0) == pytest.approx(0.7)
    assert sens_fn_lmmse(UNIT, 2.0, 0.0) == 1.0
    with pytest.raises(InvalidInputError):
        sens_fn_lmmse(UNIT, 0.0, 1.0)


@pytest.mark.parametrize("seed", range(10))
def test_lmmse_spectral_forms_match_dense_traces(seed):
    rng = np.random.default_rng(seed)
    m, n = 32, 48
    a = rng.standard_normal((m, n)) * rng.uniform(0.2, 2)
    spec = SpectralDistribution.from_problem(ProblemInstance.from_matrix(a, np.zeros(m)))
    gamma2, tau2, gw, gw0 = rng.uniform(0.1, 5, 4)
    q = gw * a.T @ a + gamma2 * np.eye(n)
    qi = np.linalg.inv(q)
    qt = gw**2 / gw0 * a.T @ a + tau2 * gamma2**2 * np.eye(n)
    e_dense = np.trace(qi @ qi @ qt) / n
    assert abs(error_fn_lmmse(spec, gamma2, tau2, gw, gw0) - e_dense) < 1e-10 * max(1, e_dense)
    assert abs(sens_fn_lmmse(spec, gamma2, gw) - gamma2 * np.trace(qi) / n) < 1e-10


# --- state evolution --------------------------------------------------------


def _matched_general(spec, gamma_w0, k):
    e0 = PRIOR.second_moment
    return se_run(BgMmse(PRIOR), spec, gamma_w0, gamma_w0, e0, 1 / e0, k)


@pytest.mark.parametrize("kappa", [1.0, 100.0, 1e4])
def test_matched_collapse(kappa):
    spec = SpectralDistribution.geometric(512, 1024, kappa)
    gw0 = noise_precision(512, 1024, PRIOR, 40.0)
    general = _matched_general(spec, gw0, 30)
    matched = se_matched_run(PRIOR, spec, gw0, 30, tol=0.0)
    for name in ("gamma1", "gamma2", "eta1", "eta2", "mse1", "mse2"):
        a, b = general.column(name), matched.column(name)
        assert np.max(np.abs(a - b) / np.abs(b)) < 1e-10
    assert np.allclose(general.column("tau2"), 1 / general.column("gamma2"), rtol=1e-9)


def test_gaussian_prior_alphas_in_unit_interval():
    spec = SpectralDistribution.geometric(64, 128, 1e3)
    for g10 in (1e-3, 1.0, 1e3):
        tr = se_run(BgMmse(GAUSS), spec, 1e2, 1e2, 1.0, g10, 25)
        assert np.all((tr.column("alpha1") > 0) & (tr.column("alpha1") < 1))


def test_se_invalid_reports_iteration():
    # a mismatched soft threshold with a huge lambda makes the sensitivity vanish
    spec = SpectralDistribution.geometric(8, 16, 10.0)
    with pytest.raises(SeInvalidError) as info:
        se_run(SoftThreshold(1e6), spec, 1.0, 1.0, 0.1, 1.0, 5, prior=PRIOR)
    assert info.value.iteration == 0


def test_kappa_1000_trajectory_shape():
    spec = SpectralDistribution.geometric(512, 1024, 1000.0)
    gw0 = noise_precision(512, 1024, PRIOR, 40.0)
    nmse_db = 10 * np.log10(_matched_general(spec, gw0, 20).nmse)
    assert np.all(np.diff(nmse_db) < 0)
    assert nmse_db[-1] < -38  # replica is about -38.3 dB here
    assert nmse_db[19] < nmse_db[0] - 25


def test_fixed_point_eta_equal():
    spec = SpectralDistribution.geometric(512, 1024, 100.0)
    tr = se_matched_run(PRIOR, spec, noise_precision(512, 1024, PRIOR, 30.0), 10_000)
    last = tr.steps[-1]
    assert abs(last.eta1 - last.eta2) / last.eta2 < 1e-10


def test_hand_solved_fixed_point():
    tr = se_matched_run(GAUSS, UNIT, 1.0, 10_000)
    last = tr.steps[-1]
    assert last.gamma1 == pytest.approx(1.0, abs=1e-12)
    assert last.eta2 == pytest.approx(2.0, abs=1e-12)
    sol = replica_solve(GAUSS, UNIT, 1.0)
    assert sol.gamma1_star == pytest.approx(1.0, abs=1e-12)
    assert sol.eta_star == pytest.approx(2.0, abs=1e-12)
    assert sol.mse == pytest.approx(0.5, abs=1e-12)
    assert sol.converged and max(sol.residuals) < 1e-12


@pytest.mark.parametrize("snr,expected", [(10, 5.09e-2), (20, 3.50e-3), (30, 2.75e-4)])
def test_replica_reference_values(snr, expected):
    spec = SpectralDistribution.geometric(512, 1024, 1.0)
    sol = replica_solve(PRIOR, spec, noise_precision(512, 1024, PRIOR, snr))
    assert sol.converged
    assert abs(sol.nmse / expected - 1) < 0.02


def test_replica_constant_spectrum_collapse():
    # R_C is the constant gamma_w0 s^2, so gamma1 = gamma_w0 s^2 and 1/eta = E1(gamma1)
    s2, gw0 = 2.0, 37.0
    spec = SpectralDistribution(np.array([math.sqrt(s2)]), np.array([1.0]))
    sol = replica_solve(PRIOR, spec, gw0)
    assert sol.gamma1_star == pytest.approx(gw0 * s2, rel=1e-10)
    g = gw0 * s2
    assert 1 / sol.eta_star == pytest.approx(error_fn_denoiser(BgMmse(PRIOR), g, 1 / g), rel=1e-10)


# --- transforms -----------------------------------------------------------------


def test_stieltjes_examples():
    assert stieltjes(_point([2.0]), -1.0) == pytest.approx(1 / 3)
    assert stieltjes(_point([1.0, 4.0]), 0.0) == pytest.approx(0.625)
    far = stieltjes(_point([1.0, 4.0]), -1e9)
    assert 0 < far < 1e-8
    vals = [stieltjes(_point([1.0, 4.0]), w) for w in (-1e3, -1e2, -10.0, -1.0)]
    assert np.all(np.diff(vals) > 0)
    with pytest.raises(DomainError):
        stieltjes(_point([1.0, 4.0]), 1.0)


def test_r_transform_constant_spectrum():
    for w in (-0.5, -1.0, -2.0):
        assert r_transform(_point([3.0]), w) == pytest.approx(3.0, abs=1e-12)


def test_r_transform_two_point_quadratic():
    # S(z) = 0.5/(1-z) + 0.5/(4-z) = u  <=>  u z^2 - (5u - 1) z + (4u - 2.5) = 0
    u = 0.1
    roots = np.roots([u, -(5 * u - 1), 4 * u - 2.5])
    z = float(np.min(roots[roots < 1]))
    assert r_transform(_point([1.0, 4.0]), -u) == pytest.approx(z + 1 / u, abs=1e-10)


def test_r_transform_round_trip():
    eigs = SpectralDistribution.geometric(64, 128, 100.0).squared(50.0)
    for w in (-1e-3, -0.1, -3.0):
        z = r_transform(eigs, w) + 1 / w
        assert abs(stieltjes(eigs, z) + w) < 1e-10 * abs(w)


def test_transform_domain_errors():
    with pytest.raises(DomainError):
        r_transform(_point([1.0]), 0.0)
    with pytest.raises(DomainError):
        stieltjes_inverse(_point([1.0]), -0.5)


def test_replica_residuals_geometric():
    for kappa in (1.0, 1e2, 1e4, 1e6):
        sol = replica_solve(PRIOR, SpectralDistribution.geometric(512, 1024, kappa),
                            noise_precision(512, 1024, PRIOR, 40.0))
        assert sol.converged and max(sol.residuals) < 1e-9


def test_gamma1_monotone_after_two_iterations():
    gw0 = noise_precision(512, 1024, PRIOR, 40.0)
    for kappa in (1.0, 1e2, 1e4, 1e6):
        g = se_matched_run(PRIOR, SpectralDistribution.geometric(512, 1024, kappa), gw0, 200).column("gamma1")[2:]
        d = np.diff(g)
        assert np.all(d >= -1e-9 * g[1:]) or np.all(d <= 1e-9 * g[1:])


def test_se_json_shape():
    spec = SpectralDistribution.geometric(512, 1024, 1.0)
    gw0 = noise_precision(512, 1024, PRIOR, 10.0)
    doc = se_to_json({"snr_db": 10}, _matched_general(spec, gw0, 5), replica_solve(PRIOR, spec, gw0))
    doc = json.loads(json.dumps(doc))
    assert set(doc) == {"config", "per_iteration", "fixed_point"}
    assert {"gamma1", "eta", "nmse_db"} <= set(doc["fixed_point"])
    assert doc["fixed_point"]["nmse_db"] == pytest.approx(10 * math.log10(5.0878e-2), abs=0.01)
