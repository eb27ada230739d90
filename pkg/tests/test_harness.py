import csv
import json
import math

import numpy as np
import pytest

from vamp_lab.errors import ConfigError, InvalidInputError
from vamp_lab.harness import (
    RESULT_COLUMNS,
    TRACE_COLUMNS,
    ExperimentConfig,
    aggregate,
    gaussianity_report,
    nmse,
    run_experiment,
    to_db,
)


def _small(**kw):
    base = dict(kind="cond_sweep", grid=[1.0, 100.0], m=64, n=128, trials=4,
                algorithms=["vamp", "amp", "oracle", "replica"], seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


def test_nmse_examples():
    x0 = np.array([1.0, -2.0, 0.0])
    assert nmse(x0, x0) == 0
    assert nmse(np.zeros(3), x0) == 1
    assert nmse(2 * x0, x0) == 1
    with pytest.raises(InvalidInputError):
        nmse(x0, np.zeros(3))


def test_aggregate_arithmetic():
    st = aggregate([0.1, 0.2, 0.9])
    assert st.median_nmse == pytest.approx(0.2)
    assert st.mean_nmse == pytest.approx(0.4)
    assert st.dev_plus == pytest.approx(0.7)
    assert st.dev_minus == pytest.approx(0.1)
    assert st.stderr == pytest.approx(np.std([0.1, 0.2, 0.9], ddof=1) / math.sqrt(3))
    assert st.dev_plus_db == pytest.approx(float(to_db(0.9) - to_db(0.2)))


def test_aggregate_clipping_and_divergence():
    st = aggregate([0.5, 7.0, math.inf, 0.01], diverged=[False, False, False, True])
    assert st.divergence_count == 3
    assert st.mean_nmse == pytest.approx((0.5 + 3) / 4)
    assert st.median_nmse <= 1
    assert st.dev_plus >= 0 and st.dev_minus >= 0


def test_gaussianity_on_gaussian_input():
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal(4096)
    tau = 0.3
    rep = gaussianity_report(x0 + math.sqrt(tau) * rng.standard_normal(4096), x0, tau)
    assert 0.9 <= rep["var_ratio"] <= 1.1
    assert abs(rep["excess_kurtosis"]) < 0.2


def test_gaussianity_on_uniform_input():
    rng = np.random.default_rng(1)
    x0 = np.zeros(4096)
    u = rng.uniform(-1, 1, 4096) * math.sqrt(3)
    rep = gaussianity_report(u, x0, 1.0)
    assert abs(rep["excess_kurtosis"] + 1.2) < 0.1


def test_gaussianity_validation():
    with pytest.raises(InvalidInputError):
        gaussianity_report(np.zeros(2000), np.zeros(1999), 1.0)
    with pytest.raises(InvalidInputError):
        gaussianity_report(np.zeros(10), np.zeros(10), 1.0)


def test_config_defaults():
    cfg = ExperimentConfig(kind="cond_sweep")
    assert (cfg.m, cfg.n, cfg.rho, cfg.snr_db, cfg.trials) == (512, 1024, 0.1, 40.0, 500)
    assert cfg.grid == [10.0**p for p in range(7)]
    assert ExperimentConfig(kind="mean_sweep").trials == 200
    assert ExperimentConfig(kind="mean_sweep").grid[0] == pytest.approx(1e-3)
    assert ExperimentConfig(kind="snr_table").trials == 1000
    assert ExperimentConfig(kind="snr_table").grid == [10.0, 20.0, 30.0]


@pytest.mark.parametrize("bad,field", [({"trials": 0}, "trials"), ({"grid": []}, "grid"),
                                       ({"kind": "x"}, "kind"), ({"algorithms": ["bogus"]}, "algorithms"),
                                       ({"m": 10, "n": 5}, "m"), ({"rho": 2.0}, "rho"), ({"colour": 1}, "colour")])
def test_config_errors_name_field(bad, field):
    with pytest.raises(ConfigError, match=field):
        ExperimentConfig.from_dict(bad)


def test_round_trip_dict():
    cfg = _small()
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_results_reproducible_across_workers(tmp_path):
    a = _small(out_dir=str(tmp_path / "a"))
    b = _small(out_dir=str(tmp_path / "b"))
    run_experiment(a, workers=1)
    run_experiment(b, workers=2)
    for name in ("cond_sweep_results.csv",):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    man = json.loads((tmp_path / "a" / "cond_sweep_manifest.json").read_text())
    assert man["seed"] == 3 and man["config"]["grid"] == [1.0, 100.0]
    assert "version" in man and "wall_clock_s" in man


def test_results_csv_layout(tmp_path):
    res = run_experiment(_small(out_dir=str(tmp_path)))
    rows = list(csv.reader(open(tmp_path / "cond_sweep_results.csv")))
    assert tuple(rows[0]) == RESULT_COLUMNS
    assert len(rows) == 1 + 2 * 4
    for agg in res:
        for st in agg.stats.values():
            assert st.median_nmse <= 1 and st.mean_nmse <= 1


def test_iteration_trace_output(tmp_path):
    cfg = ExperimentConfig(kind="iter_trace", grid=[1.0], m=64, n=128, trials=3, algorithms=["vamp", "se"],
                           out_dir=str(tmp_path), vamp_max_iters=10)
    res = run_experiment(cfg)
    rows = list(csv.reader(open(tmp_path / "iter_trace_iterations.csv")))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert len(res[0].stats["vamp"].curve) == 10
    assert len(res[0].stats["se"].curve) == 10


def test_divergence_recorded_not_raised():
    cfg = _small(grid=[1e4], m=128, n=256, trials=3, algorithms=["amp"], amp_max_iters=400)
    st = run_experiment(cfg)[0].stats["amp"]
    assert st.divergence_count == 3 and st.median_nmse == 1.0


def test_vamp_and_amp_agree_at_kappa_one():
    cfg = ExperimentConfig(kind="cond_sweep", grid=[1.0], trials=8, algorithms=["vamp", "amp"], seed=5)
    st = run_experiment(cfg)[0].stats
    assert abs(to_db(st["vamp"].median_nmse) - to_db(st["amp"].median_nmse)) < 0.5


def test_mean_sweep_uses_representative_spectrum():
    cfg = _small(kind="mean_sweep", grid=[0.5], algorithms=["vamp", "replica"], trials=3)
    res = run_experiment(cfg)
    assert 0 < res[0].stats["replica"].median_nmse < 1
