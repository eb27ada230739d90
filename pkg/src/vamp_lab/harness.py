"""Monte-Carlo experiment driver: seeded trials, robust aggregation, CSV output."""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .algorithms import SolverOptions, amp_run, cold_start_gamma, ist_run, vamp_svd_run
from .denoisers import BgMmse
from .errors import ConfigError, InvalidInputError, NumericalFailure, SeInvalidError
from .matgen import BgPrior, noise_precision, synthesize_problem
from .oracle import support_indices, support_oracle_mmse
from .state_evolution import SpectralDistribution, replica_solve, se_run

KINDS = ("cond_sweep", "mean_sweep", "snr_table", "iter_trace")
ALGORITHMS = ("vamp", "amp", "ist", "se", "replica", "oracle")
_DETERMINISTIC = ("se", "replica")
# substream index reserved for the representative spectrum draw of mean sweeps
_SPECTRUM_STREAM = 2**31 - 1

_DEFAULTS = {
    "cond_sweep": dict(grid=[10.0**p for p in range(7)], trials=500,
                       algorithms=["vamp", "amp", "replica", "oracle"]),
    "mean_sweep": dict(grid=[10.0**p for p in range(-3, 2)], trials=200,
                       algorithms=["vamp", "amp", "replica", "oracle"]),
    "snr_table": dict(grid=[10.0, 20.0, 30.0], trials=1000, algorithms=["vamp", "amp", "replica"]),
    "iter_trace": dict(grid=[1.0, 1000.0], trials=500, algorithms=["vamp", "amp", "se"]),
}


@dataclass
class ExperimentConfig:
    kind: str = "cond_sweep"
    grid: list = None
    m: int = 512
    n: int = 1024
    rho: float = 0.1
    sigma_x2: float = 1.0
    snr_db: float = 40.0
    kappa: float = 1.0
    ensemble: str = "rotinv"
    trials: int = None
    algorithms: list = None
    seed: int = 0
    out_dir: str | None = None
    damp: float = 0.97
    tol: float = 1e-4
    vamp_max_iters: int = 100
    amp_max_iters: int = 1000

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind: expected one of {KINDS}, got {self.kind!r}")
        defaults = _DEFAULTS[self.kind]
        if self.grid is None:
            self.grid = list(defaults["grid"])
        if self.trials is None:
            self.trials = defaults["trials"]
        if self.algorithms is None:
            self.algorithms = list(defaults["algorithms"])
        self.grid = [float(g) for g in self.grid]
        if not self.grid:
            raise ConfigError("grid: must be non-empty")
        if int(self.trials) < 1:
            raise ConfigError(f"trials: must be >= 1, got {self.trials}")
        self.trials = int(self.trials)
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ConfigError(f"algorithms: unknown entries {sorted(unknown)}")
        if self.ensemble not in ("rotinv", "nonzero_mean"):
            raise ConfigError(f"ensemble: expected rotinv or nonzero_mean, got {self.ensemble!r}")
        if self.m > self.n or self.m < 1:
            raise ConfigError(f"m: need 1 <= m <= n, got m={self.m}, n={self.n}")
        try:
            self.prior
        except InvalidInputError as exc:
            raise ConfigError(f"rho/sigma_x2: {exc}") from exc

    @property
    def prior(self):
        return BgPrior(self.rho, self.sigma_x2)

    def point(self, value):
        """``(ensemble, snr_db)`` for one grid value."""
        if self.kind == "cond_sweep":
            return ("rotinv", value), self.snr_db
        if self.kind == "mean_sweep":
            return ("nonzero_mean", value), self.snr_db
        if self.kind == "snr_table":
            return ("rotinv", self.kappa), value
        return (self.ensemble, value), self.snr_db

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        for key in data:
            if key not in names:
                raise ConfigError(f"{key}: unknown configuration field")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self):
        return asdict(self)


@dataclass
class AlgorithmStats:
    median_nmse: float
    dev_plus: float
    dev_minus: float
    mean_nmse: float
    stderr: float
    divergence_count: int
    trials: int
    dev_plus_db: float = 0.0
    dev_minus_db: float = 0.0
    curve: list | None = None  # per-iteration (median_db, dev_plus_db, dev_minus_db)


@dataclass
class AggregateResult:
    grid_value: float
    stats: dict = field(default_factory=dict)


def nmse(xhat, x0):
    x0 = np.asarray(x0, dtype=float)
    den = float(x0 @ x0)
    if den == 0:
        raise InvalidInputError("NMSE undefined for an all-zero signal")
    diff = np.asarray(xhat, dtype=float) - x0
    return float(diff @ diff) / den


def to_db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(x)


def _one_sided_rms(values, center, side):
    part = values[values > center] if side > 0 else values[values < center]
    return float(np.sqrt(np.mean((part - center) ** 2))) if part.size else 0.0


def aggregate(samples, diverged=None):
    """Summaries of clipped NMSE samples; deviations are one-sided RMS about the median."""
    raw = np.asarray(samples, dtype=float)
    bad = ~np.isfinite(raw) | (raw > 1.0)
    if diverged is not None:
        bad |= np.asarray(diverged, dtype=bool)
    vals = np.where(bad, 1.0, np.minimum(raw, 1.0))
    med = float(np.median(vals))
    dbs = to_db(vals)
    med_db = float(np.median(dbs))
    return AlgorithmStats(
        median_nmse=med,
        dev_plus=_one_sided_rms(vals, med, +1),
        dev_minus=_one_sided_rms(vals, med, -1),
        mean_nmse=float(vals.mean()),
        stderr=float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0,
        divergence_count=int(bad.sum()),
        trials=int(vals.size),
        dev_plus_db=_one_sided_rms(dbs, med_db, +1),
        dev_minus_db=_one_sided_rms(dbs, med_db, -1),
    )


def gaussianity_report(r1, x0, tau_pred):
    """Moments of the effective noise ``r1 - x0`` against a predicted variance."""
    r1, x0 = np.asarray(r1, dtype=float), np.asarray(x0, dtype=float)
    if r1.shape != x0.shape:
        raise InvalidInputError(f"length mismatch: {r1.shape} vs {x0.shape}")
    if r1.size < 1000:
        raise InvalidInputError("need at least 1000 components for moment estimates")
    noise = r1 - x0
    return {"var_ratio": float(np.var(noise) / tau_pred),
            "excess_kurtosis": float(stats.kurtosis(noise, fisher=True)),
            "skewness": float(stats.skew(noise))}


def _pad(curve, length):
    if len(curve) >= length:
        return list(curve[:length])
    return list(curve) + [curve[-1]] * (length - len(curve))


def _run_trial(cfg_dict, grid_index, trial_index):
    cfg = ExperimentConfig(**cfg_dict)
    prior = cfg.prior
    ensemble, snr_db = cfg.point(cfg.grid[grid_index])
    problem = synthesize_problem(ensemble, cfg.m, cfg.n, prior, snr_db,
                                 (cfg.seed, (grid_index, trial_index)), seed=cfg.seed)
    den = BgMmse(prior)
    out = {}
    want_curve = cfg.kind == "iter_trace"
    for alg in cfg.algorithms:
        if alg == "vamp":
            opts = SolverOptions.matched(problem, prior, damp=cfg.damp, tol=cfg.tol,
                                         max_iters=cfg.vamp_max_iters)
            trace = vamp_svd_run(problem, den, opts)
        elif alg == "amp":
            opts = SolverOptions.matched(problem, prior, tol=cfg.tol, max_iters=cfg.amp_max_iters,
                                         gamma_init=SolverOptions.gamma_min)
            trace = amp_run(problem, den, opts, gamma_rule="onsager_recursion")
        elif alg == "ist":
            opts = SolverOptions.matched(problem, prior, tol=cfg.tol, max_iters=cfg.amp_max_iters,
                                         gamma_init=problem.gamma_w0)
            trace = ist_run(problem, den, opts)
        elif alg == "oracle":
            try:
                xhat = support_oracle_mmse(problem, support_indices(problem.x0), prior)
                out[alg] = (nmse(xhat, problem.x0), False, None)
            except NumericalFailure:
                out[alg] = (1.0, True, None)
            continue
        else:
            continue
        curve = [float(v) for v in trace.nmse] if want_curve else None
        final = float(trace.records[-1].nmse) if trace.records else 1.0
        out[alg] = (final, trace.failed, curve)
    return out


def _spectrum_for(cfg, grid_index):
    (kind, param), _ = cfg.point(cfg.grid[grid_index])
    if kind == "rotinv":
        return SpectralDistribution.geometric(cfg.m, cfg.n, param)
    problem = synthesize_problem((kind, param), cfg.m, cfg.n, cfg.prior, 0.0,
                                 (cfg.seed, (grid_index, _SPECTRUM_STREAM)))
    return SpectralDistribution.from_problem(problem)


def deterministic_predictions(cfg, grid_index):
    """SE trajectory and replica NMSE for one grid point."""
    prior = cfg.prior
    _, snr_db = cfg.point(cfg.grid[grid_index])
    gamma_w0 = noise_precision(cfg.m, cfg.n, prior, snr_db)
    spectrum = _spectrum_for(cfg, grid_index)
    preds = {}
    if "se" in cfg.algorithms:
        e0 = prior.second_moment
        try:
            trace = se_run(BgMmse(prior), spectrum, gamma_w0, gamma_w0, e0, cold_start_gamma(e0), cfg.vamp_max_iters)
            preds["se"] = [float(v) for v in trace.nmse]
        except SeInvalidError as exc:
            preds["se"] = [1.0] * max(exc.iteration, 1)
    if "replica" in cfg.algorithms:
        preds["replica"] = [replica_solve(prior, spectrum, gamma_w0).nmse]
    return preds


def _curve_stats(curves):
    length = max(len(c) for c in curves)
    mat = np.array([_pad(c, length) for c in curves])
    mat = np.where(np.isfinite(mat), np.minimum(mat, 1.0), 1.0)
    dbs = to_db(mat)
    rows = []
    for col in dbs.T:
        med = float(np.median(col))
        rows.append((med, _one_sided_rms(col, med, +1), _one_sided_rms(col, med, -1)))
    return rows


def run_experiment(config, workers=1):
    """Run every grid point and trial, aggregate, and (if ``out_dir`` is set) write CSVs.

    Results are identical for any ``workers`` count: trials draw from
    substreams keyed by ``(grid index, trial index)`` and are collected in order.
    """
    if isinstance(config, dict):
        config = ExperimentConfig.from_dict(config)
    started = time.time()
    cfg_dict = config.to_dict()
    tasks = [(gi, ti) for gi in range(len(config.grid)) for ti in range(config.trials)]
    sampled = [a for a in config.algorithms if a not in _DETERMINISTIC]
    if sampled:
        if workers and workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(_run_trial, [cfg_dict] * len(tasks),
                                         [t[0] for t in tasks], [t[1] for t in tasks],
                                         chunksize=max(1, len(tasks) // (4 * workers))))
        else:
            outcomes = [_run_trial(cfg_dict, gi, ti) for gi, ti in tasks]
    else:
        outcomes = [{} for _ in tasks]

    results = []
    for gi, value in enumerate(config.grid):
        per_trial = outcomes[gi * config.trials:(gi + 1) * config.trials]
        agg = AggregateResult(grid_value=value)
        for alg in sampled:
            finals = [o[alg][0] for o in per_trial]
            failed = [o[alg][1] for o in per_trial]
            st = aggregate(finals, failed)
            if config.kind == "iter_trace":
                st.curve = _curve_stats([o[alg][2] or [1.0] for o in per_trial])
            agg.stats[alg] = st
        for alg, curve in deterministic_predictions(config, gi).items():
            st = aggregate([curve[-1]])
            if config.kind == "iter_trace":
                st.curve = [(float(to_db(min(v, 1.0))), 0.0, 0.0) for v in curve]
            agg.stats[alg] = st
        results.append(agg)

    if config.out_dir:
        write_outputs(config, results, time.time() - started)
    return results


RESULT_COLUMNS = ("grid_value", "algorithm", "median_nmse_db", "dev_plus_db", "dev_minus_db",
                  "mean_nmse", "stderr", "diverged_count", "trials")
TRACE_COLUMNS = ("grid_value", "algorithm", "iter", "median_nmse_db", "dev_plus_db", "dev_minus_db")


def _fmt(x):
    return repr(float(x))


def write_outputs(config, results, wall_clock=None):
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{config.kind}_results.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for agg in results:
            for alg, st in agg.stats.items():
                writer.writerow([_fmt(agg.grid_value), alg, _fmt(to_db(st.median_nmse)),
                                 _fmt(st.dev_plus_db), _fmt(st.dev_minus_db), _fmt(st.mean_nmse),
                                 _fmt(st.stderr), st.divergence_count, st.trials])
    if config.kind == "iter_trace":
        with open(out / f"{config.kind}_iterations.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            for agg in results:
                for alg, st in agg.stats.items():
                    for k, (med, dp, dm) in enumerate(st.curve or []):
                        writer.writerow([_fmt(agg.grid_value), alg, k, _fmt(med), _fmt(dp), _fmt(dm)])
    manifest = {"config": config.to_dict(), "seed": config.seed, "version": __version__,
                "python": platform.python_version(), "numpy": np.__version__,
                "wall_clock_s": wall_clock}
    (out / f"{config.kind}_manifest.json").write_text(json.dumps(manifest, indent=2))
