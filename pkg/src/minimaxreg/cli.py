"""Command-line front end.

Exit codes: 0 success and all pass flags true, 2 usage or configuration
error, 3 one or more acceptance flags failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .complexity import complexity_profile, get_profile
from .design import TargetSpec
from .geometry import LocalizedSet, gaussian_mean_width
from .harness import (CellConfig, ExperimentConfig, FixedDesignConfig, RipRefusal,
                      check_isomorphy, check_multiplier, config_hash, decompose,
                      fixed_design_experiment, rate_experiment, small_ball_demo)
from .solvers import (Dataset, GridConfig, SolverOptions, constrained_erm, lasso,
                      lasso_default_lambda, rerm)
from .complexity import psi as psi_value
from . import rng

TRIALS_HEADER = "cell_id,trial,estimator,l2_error_sq,pred_error_sq,l1_norm_hat,wall_time"


class ConfigError(ValueError):
    pass


def _check_keys(obj: dict, allowed: set, where: str):
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _target_from_dict(obj: dict) -> TargetSpec:
    _check_keys(obj, {"kind", "s", "amplitude", "l1_norm"}, "target")
    kind = obj.get("kind")
    if kind == "sparse":
        return TargetSpec.sparse(int(obj["s"]), float(obj["amplitude"]))
    if kind == "dense":
        return TargetSpec.dense(float(obj["l1_norm"]))
    if kind == "spike":
        return TargetSpec.spike(float(obj["l1_norm"]))
    if kind == "zero":
        return TargetSpec.zero()
    raise ConfigError(f"unknown target kind {kind!r}")


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"malformed JSON in {path}: line {exc.lineno}, column {exc.colno}: {exc.msg}")


def _np_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_report(out_dir: str, report: dict, records) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = dict(report)
    report["version"] = __version__
    with (out / "report.json").open("w") as fh:
        json.dump(report, fh, indent=2, default=_np_default)
        fh.write("\n")
    with (out / "trials.csv").open("w") as fh:
        fh.write(f"# minimaxreg {__version__} config_hash={report.get('config_hash', '')}\n")
        fh.write(TRIALS_HEADER + "\n")
        for r in records:
            fh.write(f"{r.cell_id},{r.trial},{r.estimator_name},{float(r.l2_error_sq)!r},"
                     f"{float(r.pred_error_sq)!r},{float(r.l1_norm_hat)!r},"
                     f"{float(r.wall_time)!r}\n")


def cmd_width(args) -> int:
    localized = LocalizedSet.l1_l2(args.rho, args.r, args.d)
    est = gaussian_mean_width(localized, args.samples, args.seed)
    payload = {"value": est.value, "stderr": est.stderr, "samples": est.samples}
    text = json.dumps(payload)
    print(text)
    if args.out:
        meta = {"version": __version__,
                "config_hash": config_hash({"d": args.d, "rho": args.rho, "r": args.r,
                                            "samples": args.samples, "seed": args.seed}),
                **payload}
        Path(args.out).write_text(json.dumps(meta, indent=2) + "\n")
    return 0


def cmd_profile(args) -> int:
    if args.rho_min <= 0 or args.rho_max <= args.rho_min or args.points < 2:
        print("error: need 0 < rho-min < rho-max and points >= 2", file=sys.stderr)
        return 2
    constants = get_profile(args.profile)
    grid = np.geomspace(args.rho_min, args.rho_max, args.points)
    prof = complexity_profile(args.N, args.d, args.sigma, grid, constants,
                              method=args.method, seed=args.seed)
    cfg = {"N": args.N, "d": args.d, "sigma": args.sigma, "rho_min": args.rho_min,
           "rho_max": args.rho_max, "points": args.points, "method": args.method,
           "profile": args.profile, "seed": args.seed}
    lines = [f"# minimaxreg {__version__} config_hash={config_hash(cfg)}",
             "rho,r_M,r_Q,r,psi,method"]
    for i in range(len(grid)):
        lines.append(f"{float(prof.rho_grid[i])!r},{float(prof.r_M[i])!r},"
                     f"{float(prof.r_Q[i])!r},{float(prof.r[i])!r},"
                     f"{float(prof.psi[i])!r},{prof.method}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _read_dataset(path: str, sigma: float | None) -> Dataset:
    try:
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except OSError:
        raise ConfigError(f"dataset file not found: {path}")
    except ValueError as exc:
        raise ConfigError(f"could not parse dataset {path}: {exc}")
    if raw.shape[1] < 2:
        raise ConfigError("dataset needs a response column plus at least one feature")
    return Dataset(raw[:, 1:], raw[:, 0], sigma_known=sigma)


def cmd_estimate(args) -> int:
    data = _read_dataset(args.data, args.sigma)
    opts = SolverOptions(max_iters=args.max_iters, tol=args.tol)
    if args.estimator == "lasso":
        lam = args.lam
        if lam is None:
            if args.sigma is None:
                raise ConfigError("lasso needs --lambda or --sigma")
            lam = lasso_default_lambda(args.sigma, data.n, data.d)
        res = lasso(data, lam, opts)
    elif args.estimator == "erm":
        if args.rho is None:
            raise ConfigError("erm needs --rho")
        res = constrained_erm(data, args.rho, opts)
    elif args.estimator == "rerm":
        if args.sigma is None:
            raise ConfigError("rerm needs --sigma to build the penalty")
        constants = get_profile(args.profile)

        def psi_fn(rho):
            return psi_value(rho, args.sigma, data.n, data.d, constants,
                             mode=args.psi_mode, seed=args.seed)

        res = rerm(data, psi_fn, GridConfig(points=args.points), opts)
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown estimator {args.estimator!r}")
    flags = {"data": args.data, "estimator": args.estimator, "lambda": args.lam,
             "rho": args.rho, "sigma": args.sigma, "profile": args.profile,
             "psi_mode": args.psi_mode, "points": args.points, "seed": args.seed}
    payload = {"version": __version__, "config_hash": config_hash(flags),
               "estimator": args.estimator,
               "t_hat": [float(v) for v in res.t_hat],
               "l1_norm": res.l1_norm, "objective": res.objective,
               "converged": res.converged, "iterations": res.iterations,
               "diagnostics": {k: (float(v) if np.isscalar(v) else v)
                               for k, v in res.diagnostics.items()}}
    text = json.dumps(payload, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


_EXPERIMENT_KEYS = {"cells", "estimators", "trials", "seed", "profile", "psi_mode",
                    "sweep", "bands", "grid_points", "solver_max_iters", "solver_tol"}


def _experiment_config(obj: dict, seed_override: int | None,
                       defaults: dict | None = None) -> ExperimentConfig:
    _check_keys(obj, _EXPERIMENT_KEYS, "config")
    defaults = defaults or {}
    cells = []
    for cell in obj.get("cells", []):
        _check_keys(cell, {"N", "d", "sigma", "target"}, "cell")
        cells.append(CellConfig(int(cell["N"]), int(cell["d"]), float(cell["sigma"]),
                                _target_from_dict(cell["target"])))
    if not cells:
        raise ConfigError("config needs at least one cell")
    kwargs = {}
    for key in ("profile", "psi_mode", "sweep", "bands", "grid_points",
                "solver_max_iters", "solver_tol"):
        if key in obj:
            kwargs[key] = obj[key]
        elif key in defaults:
            kwargs[key] = defaults[key]
    try:
        return ExperimentConfig(
            cells=cells,
            estimators=list(obj.get("estimators", defaults.get("estimators", ["oracle_erm", "rerm"]))),
            trials=int(obj.get("trials", 1)),
            seed=int(seed_override if seed_override is not None else obj.get("seed", 0)),
            **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))


def _run_experiment(args, defaults=None) -> int:
    obj = _load_config(args.config)
    cfg = _experiment_config(obj, args.seed, defaults)
    report = rate_experiment(cfg, threads=args.threads)
    _write_report(args.out, report.to_json_dict(), report.records)
    return 0 if report.passed() else 3


def cmd_simulate(args) -> int:
    return _run_experiment(args)


def cmd_compare(args) -> int:
    return _run_experiment(args, defaults={
        "estimators": ["oracle_erm", "rerm"],
        "bands": {"pair_band": {"a": "rerm", "b": "oracle_erm", "band": 8.0}},
    })


_FIXED_KEYS = {"N", "d", "sigma", "target", "trials", "seed", "rip_budget",
               "rip_override", "profile", "grid_points", "solver_max_iters",
               "solver_tol", "pred_band", "pred_freq", "pn_freq"}


def cmd_fixed_design(args) -> int:
    obj = _load_config(args.config)
    _check_keys(obj, _FIXED_KEYS, "config")
    try:
        cfg = FixedDesignConfig(
            n=int(obj["N"]), d=int(obj["d"]), sigma=float(obj["sigma"]),
            target=_target_from_dict(obj["target"]),
            **{k: obj[k] for k in _FIXED_KEYS - {"N", "d", "sigma", "target", "trials", "seed"}
               if k in obj})
    except KeyError as exc:
        raise ConfigError(f"missing key in config: {exc}")
    seed = int(args.seed if args.seed is not None else obj.get("seed", 0))
    try:
        report, records = fixed_design_experiment(cfg, int(obj.get("trials", 1)), seed,
                                                  threads=args.threads)
    except RipRefusal as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return 3
    _write_report(args.out, report, records)
    return 0 if all(report["flags"].values()) else 3


_EVENTS_KEYS = {"seed", "profile", "isomorphy", "multiplier", "decomposition",
                "small_ball", "flags"}


def cmd_check_events(args) -> int:
    obj = _load_config(args.config)
    _check_keys(obj, _EVENTS_KEYS, "config")
    seed = int(args.seed if args.seed is not None else obj.get("seed", 0))
    constants = get_profile(obj.get("profile", "paper-faithful"))
    thresholds = obj.get("flags", {})
    report: dict = {"config": obj, "config_hash": config_hash(obj), "seed": seed}
    flags = {}

    if "isomorphy" in obj:
        sec = obj["isomorphy"]
        _check_keys(sec, {"N", "d", "rho", "r_q", "trials"}, "isomorphy")
        X = rng.gaussian_rows(seed, (rng.DESIGN, 1), int(sec["N"]), int(sec["d"]))
        iso = check_isomorphy(X, float(sec["rho"]), float(sec.get("r_q", 0.0)),
                              int(sec["trials"]), seed)
        report["isomorphy"] = {"frequency": iso.frequency, "trials": iso.trials,
                               "resample_exhausted": iso.resample_exhausted,
                               "inconclusive": iso.inconclusive}
        if "isomorphy_freq" in thresholds:
            flags["isomorphy"] = (not iso.inconclusive
                                  and iso.frequency >= float(thresholds["isomorphy_freq"]))

    if "multiplier" in obj:
        sec = obj["multiplier"]
        _check_keys(sec, {"N", "d", "sigma", "rho", "trials"}, "multiplier")
        n, d = int(sec["N"]), int(sec["d"])
        sigma, rho = float(sec["sigma"]), float(sec["rho"])
        from .complexity import fixed_point_rM
        fp = fixed_point_rM(rho, sigma, n, d, constants, seed)
        holds = 0
        trials = int(sec["trials"])
        for trial in range(trials):
            X = rng.gaussian_rows(seed, (rng.DESIGN, 2, trial), n, d)
            xi = sigma * rng.stream(seed, rng.NOISE, trial).standard_normal(n)
            holds += check_multiplier(X, xi, rho, fp.r, constants).holds
        freq = holds / trials
        report["multiplier"] = {"r_M": fp.r, "frequency": freq, "trials": trials}
        if "multiplier_freq" in thresholds:
            flags["multiplier"] = freq >= float(thresholds["multiplier_freq"])

    if "decomposition" in obj:
        sec = obj["decomposition"]
        _check_keys(sec, {"N", "d", "instances"}, "decomposition")
        n, d = int(sec["N"]), int(sec["d"])
        worst = 0.0
        for i in range(int(sec["instances"])):
            g = rng.stream(seed, rng.EXPERIMENT, i)
            X = g.standard_normal((n, d))
            t_star = g.standard_normal(d)
            Y = X @ t_star + g.standard_normal(n)
            t = g.standard_normal(d)
            dec = decompose(X, Y, t, t_star, lambda r: 0.5 * r * r)
            gap = abs(dec.total - (dec.quadratic + dec.multiplier + dec.reg_diff))
            worst = max(worst, gap / max(abs(dec.total), 1.0))
        report["decomposition"] = {"worst_relative_gap": worst,
                                   "instances": int(sec["instances"])}
        flags["decomposition"] = worst <= 1e-10

    if "small_ball" in obj:
        sec = obj["small_ball"]
        _check_keys(sec, {"N", "d", "sigma", "rho_values", "trials"}, "small_ball")
        report["small_ball"] = small_ball_demo(
            int(sec["N"]), int(sec["d"]), float(sec["sigma"]),
            [float(v) for v in sec["rho_values"]], int(sec["trials"]), seed,
            constants, threads=args.threads)
        # report-only: no flag by design

    report["flags"] = flags
    _write_report(args.out, report, [])
    return 0 if all(flags.values()) else 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="minimaxreg",
        description="Minimax regularization for l1-penalized least squares")
    p.add_argument("--version", action="version", version=f"minimaxreg {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    w = sub.add_parser("width", help="Monte Carlo Gaussian mean width of rho*B1 ^ r*B2")
    w.add_argument("--d", type=int, required=True)
    w.add_argument("--rho", type=float, required=True)
    w.add_argument("--r", type=float, required=True)
    w.add_argument("--samples", type=int, required=True)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--out", default=None)
    w.set_defaults(func=cmd_width)

    pr = sub.add_parser("profile", help="tabulate r_M, r_Q, r, psi over a rho grid (CSV)")
    pr.add_argument("--N", type=int, required=True)
    pr.add_argument("--d", type=int, required=True)
    pr.add_argument("--sigma", type=float, required=True)
    pr.add_argument("--rho-min", type=float, required=True)
    pr.add_argument("--rho-max", type=float, required=True)
    pr.add_argument("--points", type=int, default=32)
    pr.add_argument("--method", choices=["mc", "closed"], default="closed")
    pr.add_argument("--profile", default="calibrated")
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--out", default=None)
    pr.set_defaults(func=cmd_profile)

    es = sub.add_parser("estimate", help="fit an estimator to a CSV dataset")
    es.add_argument("--data", required=True,
                    help="CSV with header; column 1 = y, columns 2..d+1 = features")
    es.add_argument("--estimator", choices=["lasso", "erm", "rerm"], required=True)
    es.add_argument("--lambda", dest="lam", type=float, default=None)
    es.add_argument("--rho", type=float, default=None)
    es.add_argument("--sigma", type=float, default=None)
    es.add_argument("--profile", default="calibrated")
    es.add_argument("--psi-mode", choices=["mc", "closed"], default="closed")
    es.add_argument("--points", type=int, default=64)
    es.add_argument("--max-iters", type=int, default=5000)
    es.add_argument("--tol", type=float, default=1e-8)
    es.add_argument("--seed", type=int, default=0)
    es.add_argument("--out", default=None)
    es.set_defaults(func=cmd_estimate)

    for name, fn, hlp in (
            ("simulate", cmd_simulate, "rate experiment over a cell grid"),
            ("compare", cmd_compare, "RERM vs oracle ERM on shared data"),
            ("fixed-design", cmd_fixed_design, "fixed-design experiment under RIP"),
            ("check-events", cmd_check_events, "verify isomorphy/multiplier events")):
        sp = sub.add_parser(name, help=hlp)
        sp.add_argument("config", help="JSON configuration file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--seed", type=int, default=None)
        sp.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
