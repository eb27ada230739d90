"""Command-line entry point: ``vamp-lab {run,se,replica,solve,validate}``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path


from .algorithms import SolverOptions, amp_run, cold_start_gamma, ist_run, vamp_lmmse_run, vamp_svd_run, write_trace_csv
from .denoisers import BgMmse
from .errors import ConfigError, InvalidInputError, NumericalFailure, SeInvalidError
from .harness import ExperimentConfig, _spectrum_for, nmse, run_experiment
from .matgen import BgPrior, load_instance, noise_precision, save_instance, synthesize_problem
from .oracle import support_indices, support_oracle_mmse
from .state_evolution import replica_solve, se_run, se_to_json

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2
SOLVE_ALGOS = ("vamp", "vamp-lmmse", "amp", "ist", "oracle")
SEED_ENV = "VAMP_LAB_SEED"


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 is reserved for numerical failure here
    def error(self, message):
        raise ConfigError(message)


def _db(x):
    return 10 * math.log10(x) if x > 0 else -math.inf


def _lin_db(x):
    return f"{x:.4e} ({_db(x):.2f} dB)"


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with ExperimentConfig fields")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field (dotted paths, e.g. prior.rho=0.05)")
    common.add_argument("--kind", help="cond_sweep, mean_sweep, snr_table or iter_trace")
    common.add_argument("--kappa", type=float, help="condition number of a rotationally invariant A")
    common.add_argument("--mu", type=float, help="mean of the entries of a non-zero-mean A")
    common.add_argument("--snr-db", type=float)
    common.add_argument("--rho", type=float)
    common.add_argument("--sigma-x2", type=float)
    common.add_argument("--m", type=int)
    common.add_argument("--n", type=int)
    common.add_argument("--trials", type=int)
    common.add_argument("--seed", type=int, help=f"defaults to ${SEED_ENV}, then the config, then 0")
    common.add_argument("--algo", help="run: comma-separated list; solve: one of " + ", ".join(SOLVE_ALGOS))
    common.add_argument("--trace", action="store_true", help="solve: write the per-iteration CSV")
    common.add_argument("--out-dir", help="all files are written here")
    common.add_argument("--workers", type=int, default=None)
    common.add_argument("--damp", type=float)
    common.add_argument("--tol", type=float)
    common.add_argument("--max-iters", type=int)

    parser = _Parser(prog="vamp-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("run", parents=[common], help="Monte-Carlo experiment over a grid")
    sub.add_parser("se", parents=[common], help="state-evolution trajectory for one point")
    sub.add_parser("replica", parents=[common], help="replica MMSE prediction for one point")
    solve = sub.add_parser("solve", parents=[common], help="run one algorithm on one instance")
    solve.add_argument("--instance", help="load a saved instance (.json with .bin sidecar)")
    solve.add_argument("--dump-instance", action="store_true", help="save the synthesized instance")
    sub.add_parser("validate", parents=[common], help="oracle and equivalence self-tests")
    return parser


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _flatten(data):
    out = {}
    for key, value in data.items():
        if key == "prior" and isinstance(value, dict):
            out.update(value)
        else:
            out[key] = value
    return out


def _resolve_seed(args, file_seed):
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"seed: {SEED_ENV}={env!r} is not an integer") from None
    return file_seed if file_seed is not None else 0


def load_config(args):
    """Merge file config, ``--set`` overrides and explicit flags (in that order) into a dict."""
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be a JSON object")
        data = _flatten(data)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        data[key.split(".")[-1]] = _parse_value(value)

    flags = {"kind": args.kind, "rho": args.rho, "sigma_x2": args.sigma_x2, "m": args.m, "n": args.n,
             "trials": args.trials, "damp": args.damp, "tol": args.tol, "out_dir": args.out_dir}
    data.update({k: v for k, v in flags.items() if v is not None})
    if args.max_iters is not None:
        data["vamp_max_iters"] = data["amp_max_iters"] = args.max_iters
    if args.algo and args.command == "run":
        data["algorithms"] = [a.strip() for a in args.algo.split(",") if a.strip()]
    data["seed"] = _resolve_seed(args, data.get("seed"))

    kind = data.get("kind", "cond_sweep")
    if args.kappa is not None:
        if kind == "cond_sweep":
            data["grid"] = [args.kappa]
        else:
            data["kappa"] = args.kappa
    if args.mu is not None:
        if kind == "mean_sweep":
            data["grid"] = [args.mu]
        elif kind == "iter_trace":
            data.update(ensemble="nonzero_mean", grid=[args.mu])
        else:
            raise ConfigError(f"mu: not a parameter of kind {kind!r}")
    if args.snr_db is not None:
        if kind == "snr_table":
            data["grid"] = [args.snr_db]
        else:
            data["snr_db"] = args.snr_db
    return data


def _point(args):
    """Single-point setup shared by se/replica/solve: ``(config, ensemble, snr_db)``."""
    data = load_config(args)
    if args.mu is not None:
        data.update(kind="mean_sweep", grid=[args.mu])
    else:
        data.update(kind="cond_sweep", grid=[args.kappa if args.kappa is not None else data.get("kappa", 1.0)])
    data.setdefault("trials", 1)
    cfg = ExperimentConfig.from_dict(data)
    ensemble, snr_db = cfg.point(cfg.grid[0])
    return cfg, ensemble, snr_db


def _write_json(out_dir, name, doc):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(json.dumps(doc, indent=2))


def cmd_run(args):
    cfg = ExperimentConfig.from_dict(load_config(args))
    if cfg.out_dir is None:
        cfg.out_dir = "."
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
    results = run_experiment(cfg, workers=workers)
    print("grid_value  algorithm  median_nmse  mean_nmse  diverged/trials")
    for agg in results:
        for alg, st in agg.stats.items():
            print(f"{agg.grid_value:<11g} {alg:<10} {_lin_db(st.median_nmse)}  {_lin_db(st.mean_nmse)}  "
                  f"{st.divergence_count}/{st.trials}")
    print(f"wrote {cfg.kind}_results.csv and {cfg.kind}_manifest.json to {cfg.out_dir}")
    return EXIT_OK


def cmd_se(args):
    cfg, ensemble, snr_db = _point(args)
    prior = cfg.prior
    gamma_w0 = noise_precision(cfg.m, cfg.n, prior, snr_db)
    spectrum = _spectrum_for(cfg, 0)
    e0 = prior.second_moment
    trace = se_run(BgMmse(prior), spectrum, gamma_w0, gamma_w0, e0, cold_start_gamma(e0), cfg.vamp_max_iters)
    fixed = replica_solve(prior, spectrum, gamma_w0)
    print("iter  gamma1        eta1          nmse")
    for st, v in zip(trace.steps, trace.nmse):
        print(f"{st.k:<5d} {st.gamma1:<13.6e} {st.eta1:<13.6e} {_lin_db(v)}")
    print(f"fixed point: nmse {_lin_db(fixed.nmse)}, gamma1 {fixed.gamma1_star:.6e}, eta {fixed.eta_star:.6e}")
    config = dict(cfg.to_dict(), ensemble=ensemble[0], param=ensemble[1], snr_db=snr_db, gamma_w0=gamma_w0)
    _write_json(cfg.out_dir or ".", "se.json", se_to_json(config, trace, fixed))
    return EXIT_OK


def cmd_replica(args):
    cfg, ensemble, snr_db = _point(args)
    prior = cfg.prior
    gamma_w0 = noise_precision(cfg.m, cfg.n, prior, snr_db)
    sol = replica_solve(prior, _spectrum_for(cfg, 0), gamma_w0)
    print(f"replica nmse {_lin_db(sol.nmse)}  gamma1 {sol.gamma1_star:.6e}  eta {sol.eta_star:.6e}  "
          f"converged {sol.converged}")
    doc = {"config": dict(cfg.to_dict(), ensemble=ensemble[0], param=ensemble[1], snr_db=snr_db),
           "fixed_point": dict(sol.as_dict(), nmse_db=_db(sol.nmse))}
    _write_json(cfg.out_dir or ".", "replica.json", doc)
    return EXIT_OK


def _solve_one(algo, problem, prior, cfg):
    den = BgMmse(prior)
    if algo in ("vamp", "vamp-lmmse"):
        opts = SolverOptions.matched(problem, prior, damp=cfg.damp, tol=cfg.tol, max_iters=cfg.vamp_max_iters)
        run = vamp_svd_run if algo == "vamp" else vamp_lmmse_run
        return run(problem, den, opts)
    if algo == "amp":
        opts = SolverOptions.matched(problem, prior, tol=cfg.tol, max_iters=cfg.amp_max_iters,
                                     gamma_init=SolverOptions.gamma_min)
        return amp_run(problem, den, opts)
    opts = SolverOptions.matched(problem, prior, tol=cfg.tol, max_iters=cfg.amp_max_iters,
                                 gamma_init=problem.gamma_w0)
    return ist_run(problem, den, opts)


def cmd_solve(args):
    algo = args.algo or "vamp"
    if algo not in SOLVE_ALGOS:
        raise ConfigError(f"algo: expected one of {SOLVE_ALGOS}, got {algo!r}")
    cfg, ensemble, snr_db = _point(args)
    prior = cfg.prior
    out_dir = Path(cfg.out_dir or ".")
    if args.instance:
        try:
            problem = load_instance(args.instance)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"instance: cannot load {args.instance}: {exc}") from exc
        if "rho" in problem.meta and args.rho is None and args.sigma_x2 is None:
            prior = BgPrior(problem.meta["rho"], problem.meta["sigma_x2"])
    else:
        problem = synthesize_problem(ensemble, cfg.m, cfg.n, prior, snr_db, (cfg.seed, (0, 0)), seed=cfg.seed)
    if args.dump_instance:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_instance(problem, out_dir / "instance.json")
    if algo == "oracle":
        if problem.x0 is None:
            raise ConfigError("instance: the oracle needs the true signal x0")
        xhat = support_oracle_mmse(problem, support_indices(problem.x0), prior)
        print(f"oracle nmse {_lin_db(nmse(xhat, problem.x0))}")
        return EXIT_OK
    trace = _solve_one(algo, problem, prior, cfg)
    if args.trace:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_trace_csv(trace, out_dir / f"trace_{algo}.csv")
    term = trace.termination
    final = trace.records[-1].nmse if trace.records else math.nan
    print(f"{algo}: {term.kind} after {len(trace.records)} iterations, final nmse {_lin_db(final)}")
    if trace.failed:
        print(f"numerical failure: {term.detail}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_validate(args):
    from .selftest import run_all

    results = run_all()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_NUMERICAL


COMMANDS = {"run": cmd_run, "se": cmd_se, "replica": cmd_replica, "solve": cmd_solve, "validate": cmd_validate}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidInputError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, SeInvalidError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
