"""Empirical verification harness: the quadratic/multiplier/regularization
decomposition, the isomorphy and multiplier events, paired-seed rate
experiments, localization frequencies, the small-ball report, and the
fixed-design experiment."""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import rng
from .complexity import (ConstantsProfile, get_profile, closed_rM, closed_rQ,
                         minimax_rate, rate_branch, rbar_X, matrix_rank, psi as psi_value)
from .design import (ProblemConfig, TargetSpec, gen_design, gen_response, gen_target,
                     normalize_columns, rip_check)
from .geometry import support_l1l2, support_image_l1l2
from .solvers import (Dataset, EstimationResult, GridConfig, SolverError, SolverOptions,
                      constrained_erm, lasso, lasso_default_lambda, rerm)


class RipRefusal(RuntimeError):
    """Fixed-design experiment refused: the design failed the restricted
    isometry check and no override was given."""


@dataclass
class LossDecomposition:
    quadratic: float
    multiplier: float
    reg_diff: float
    total: float


def decompose(X, Y, t, t_star, psi_fn) -> LossDecomposition:
    """Split the excess regularized empirical risk at t (relative to t*) into
    quadratic process + multiplier process + regularization difference; the
    total is evaluated directly so the identity can be asserted."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    t = np.asarray(t, dtype=float)
    t_star = np.asarray(t_star, dtype=float)
    n = X.shape[0]
    delta = X @ (t - t_star)
    xi = Y - X @ t_star
    quadratic = float(delta @ delta) / n
    multiplier = -2.0 * float(xi @ delta) / n
    reg_diff = float(psi_fn(np.abs(t).sum()) - psi_fn(np.abs(t_star).sum()))
    total = (float((Y - X @ t) @ (Y - X @ t)) / n + psi_fn(np.abs(t).sum())) \
        - (float(xi @ xi) / n + psi_fn(np.abs(t_star).sum()))
    return LossDecomposition(quadratic, multiplier, reg_diff, float(total))


@dataclass
class IsomorphyReport:
    frequency: float
    trials: int
    resample_exhausted: int
    inconclusive: bool


def check_isomorphy(X, rho: float, r_q: float, trials: int, seed: int,
                    max_resample_rounds: int = 50) -> IsomorphyReport:
    """Frequency with which (1/2)||u||^2 <= ||Xu||^2/N <= (3/2)||u||^2 over
    random directions u with ||u||_2 = max(r_q, floor), kept inside rho*B1
    (violating directions are resampled)."""
    X = np.asarray(X, dtype=float)
    if trials < 1:
        raise ValueError("trials must be positive")
    n, d = X.shape
    radius = max(r_q, 1e-8 * max(1.0, rho))
    U = rng.gaussian_rows(seed, (rng.DIRECTION,), trials, d)
    norms = np.linalg.norm(U, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    U = U * (radius / norms)
    exhausted = 0
    bad = np.abs(U).sum(axis=1) > rho
    round_ = 0
    while np.any(bad) and round_ < max_resample_rounds:
        round_ += 1
        R = rng.gaussian_rows(seed, (rng.DIRECTION, round_), int(bad.sum()), d)
        rn = np.linalg.norm(R, axis=1, keepdims=True)
        rn[rn == 0] = 1.0
        U[bad] = R * (radius / rn)
        bad = np.abs(U).sum(axis=1) > rho
    exhausted = int(bad.sum())
    keep = ~bad
    if not np.any(keep):
        return IsomorphyReport(0.0, 0, exhausted, True)
    V = U[keep]
    ratios = np.linalg.norm(X @ V.T, axis=0) ** 2 / n / (radius * radius)
    freq = float(np.mean((ratios >= 0.5) & (ratios <= 1.5)))
    return IsomorphyReport(freq, int(keep.sum()), exhausted,
                           exhausted > 0.5 * trials)


@dataclass
class MultiplierCheck:
    sup_value: float
    bound: float
    holds: bool
    outside_ball_implied: bool = True


def check_multiplier(X, xi, rho: float, r: float,
                     constants: ConstantsProfile) -> MultiplierCheck:
    """Exact supremum of |P_N M| over {||u||_1 <= rho, ||u||_2 <= r}: the
    multiplier process is linear in u, so the supremum is the support function
    of the localized set at X^T xi (times 2/N).  Compared against r^2/4; the
    extension outside the l2 ball follows from homogeneity."""
    X = np.asarray(X, dtype=float)
    xi = np.asarray(xi, dtype=float)
    n = X.shape[0]
    sup = (2.0 / n) * support_l1l2(X.T @ xi, rho, r)
    bound = 0.25 * r * r
    return MultiplierCheck(float(sup), float(bound), bool(sup <= bound))


@dataclass
class TrialRecord:
    cell_id: int
    trial: int
    trial_seed: int
    estimator_name: str
    l2_error_sq: float
    pred_error_sq: float
    l1_norm_hat: float
    wall_time: float


@dataclass
class CellConfig:
    n: int
    d: int
    sigma: float
    target: TargetSpec


@dataclass
class ExperimentConfig:
    cells: list
    estimators: list
    trials: int
    seed: int
    profile: str = "calibrated"
    psi_mode: str = "closed"
    sweep: str | None = None          # "N" or "rho": variable for slope fits
    bands: dict = field(default_factory=dict)
    grid_points: int = 48
    solver_max_iters: int = 3000
    solver_tol: float = 1e-7

    def constants(self) -> ConstantsProfile:
        return get_profile(self.profile)


@dataclass
class ExperimentReport:
    config: dict
    config_hash: str
    cells: list
    slopes: dict
    flags: dict
    records: list          # TrialRecords; serialized to trials.csv, not json

    def passed(self) -> bool:
        return all(self.flags.values())

    def to_json_dict(self) -> dict:
        return {"config": self.config, "config_hash": self.config_hash,
                "cells": self.cells, "slopes": self.slopes, "flags": self.flags}


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _target_dict(t: TargetSpec) -> dict:
    return {k: v for k, v in asdict(t).items() if v is not None}


def _zero_result(d):
    return EstimationResult(np.zeros(d), 0.0, 0.0, True, 0)


def _make_fitter(name, cell: CellConfig, constants: ConstantsProfile, cfg: ExperimentConfig):
    opts = SolverOptions(max_iters=cfg.solver_max_iters, tol=cfg.solver_tol)
    grid = GridConfig(points=cfg.grid_points)
    if name == "zero":
        return lambda data: _zero_result(cell.d)
    if name == "oracle_erm":
        return lambda data: constrained_erm(data, float(np.abs(data.t_star).sum()), opts)
    if name == "lasso":
        lam = lasso_default_lambda(cell.sigma, cell.n, cell.d)
        return lambda data: lasso(data, lam, opts)
    if name == "rerm":
        cache: dict[float, float] = {}

        def psi_fn(rho, _cell=cell):
            if rho not in cache:
                cache[rho] = psi_value(rho, _cell.sigma, _cell.n, _cell.d, constants,
                                       mode=cfg.psi_mode, seed=cfg.seed)
            return cache[rho]

        return lambda data: rerm(data, psi_fn, grid, opts)
    raise ValueError(f"unknown estimator {name!r}")


def _map_indexed(fn, items, threads):
    if threads <= 1:
        return [fn(it) for it in items]
    out = [None] * len(items)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = {pool.submit(fn, it): i for i, it in enumerate(items)}
        for fut in futures:
            out[futures[fut]] = fut.result()
    return out


def rate_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """Paired simulations over a grid of cells: every estimator of a trial
    sees the same (X, Y); per-cell medians/quartiles, log-log slope fits
    along the swept variable, and ratios to the theoretical rate."""
    if cfg.trials < 1 or not cfg.cells:
        raise ValueError("need a nonempty grid and at least one trial")
    constants = cfg.constants()

    def run_trial(item):
        ci, trial = item
        cell = cfg.cells[ci]
        trial_seed = rng.subseed(cfg.seed, rng.EXPERIMENT, ci, trial)
        pc = ProblemConfig(cell.n, cell.d, cell.sigma, cell.target, trial_seed)
        X = gen_design(pc)
        t_star = gen_target(cell.target, cell.d, trial_seed)
        Y = gen_response(X, t_star, cell.sigma, trial_seed)
        data = Dataset(X, Y, sigma_known=cell.sigma, t_star=t_star)
        recs, fails = [], []
        for name in cfg.estimators:
            fit = _make_fitter(name, cell, constants, cfg)
            start = time.perf_counter()
            try:
                res = fit(data)
            except (SolverError, np.linalg.LinAlgError):
                fails.append((ci, name))
                continue
            wall = time.perf_counter() - start
            delta = res.t_hat - t_star
            recs.append(TrialRecord(ci, trial, trial_seed, name,
                                    float(delta @ delta),
                                    float(np.linalg.norm(X @ delta) ** 2 / cell.n),
                                    res.l1_norm, wall))
        return recs, fails

    items = [(ci, t) for ci in range(len(cfg.cells)) for t in range(cfg.trials)]
    results = _map_indexed(run_trial, items, threads)
    records = [r for recs, _ in results for r in recs]
    failures: dict[tuple, int] = {}
    for _, fails in results:
        for key in fails:
            failures[key] = failures.get(key, 0) + 1

    cells_out = []
    medians: dict[tuple, float] = {}
    for ci, cell in enumerate(cfg.cells):
        rho_star = cell.target.requested_l1()
        rate = minimax_rate(rho_star, cell.sigma, cell.n, cell.d, constants)
        branch = rate_branch(rho_star, cell.sigma, cell.n, cell.d, constants)
        ests = {}
        for name in cfg.estimators:
            errs = [r.l2_error_sq for r in records
                    if r.cell_id == ci and r.estimator_name == name]
            nfail = failures.get((ci, name), 0)
            entry = {"trials": len(errs), "failures": nfail,
                     "flagged": nfail > 0.2 * cfg.trials}
            if errs:
                q25, q50, q75 = (float(np.percentile(errs, q)) for q in (25, 50, 75))
                preds = [r.pred_error_sq for r in records
                         if r.cell_id == ci and r.estimator_name == name]
                l1s = [r.l1_norm_hat for r in records
                       if r.cell_id == ci and r.estimator_name == name]
                entry.update({"median_l2": q50, "q25_l2": q25, "q75_l2": q75,
                              "median_pred": float(np.median(preds)),
                              "median_l1_hat": float(np.median(l1s)),
                              "ratio_to_theory": (q50 / rate) if rate > 0 else None})
                medians[(ci, name)] = q50
            ests[name] = entry
        cells_out.append({"cell_id": ci, "N": cell.n, "d": cell.d, "sigma": cell.sigma,
                          "target": _target_dict(cell.target), "rho_star": rho_star,
                          "minimax_rate": rate, "branch": branch, "estimators": ests})

    slopes = {}
    if cfg.sweep:
        xs_all = [c["N"] if cfg.sweep == "N" else c["rho_star"] for c in cells_out]
        branches = [c["branch"] for c in cells_out]
        modal = max(set(branches), key=branches.count)
        use = [i for i, b in enumerate(branches) if b == modal]
        for name in cfg.estimators:
            pts = [(xs_all[i], medians.get((i, name))) for i in use
                   if medians.get((i, name)) not in (None, 0.0)]
            if len(pts) >= 3:
                lx = np.log([p[0] for p in pts])
                ly = np.log([p[1] for p in pts])
                A = np.stack([lx, np.ones_like(lx)], axis=1)
                coef, res_, *_ = np.linalg.lstsq(A, ly, rcond=None)
                dof = len(pts) - 2
                if dof > 0 and res_.size:
                    se = float(np.sqrt(res_[0] / dof / np.sum((lx - lx.mean()) ** 2)))
                else:
                    se = 0.0
                slopes[name] = {"slope": float(coef[0]), "stderr": se,
                                "cells_used": len(pts), "branch": modal}

    flags = _experiment_flags(cfg, cells_out, slopes, medians)
    cfg_dict = _config_dict(cfg)
    return ExperimentReport(cfg_dict, config_hash(cfg_dict), cells_out, slopes,
                            flags, records)


def _config_dict(cfg: ExperimentConfig) -> dict:
    return {
        "cells": [{"N": c.n, "d": c.d, "sigma": c.sigma, "target": _target_dict(c.target)}
                  for c in cfg.cells],
        "estimators": list(cfg.estimators), "trials": cfg.trials, "seed": cfg.seed,
        "profile": cfg.profile, "psi_mode": cfg.psi_mode, "sweep": cfg.sweep,
        "bands": cfg.bands, "grid_points": cfg.grid_points,
        "solver_max_iters": cfg.solver_max_iters, "solver_tol": cfg.solver_tol,
    }


def _experiment_flags(cfg, cells_out, slopes, medians) -> dict:
    flags = {}
    bands = cfg.bands or {}
    if "slope_range" in bands:
        lo, hi = bands["slope_range"]
        for name, s in slopes.items():
            flags[f"slope_{name}"] = bool(lo <= s["slope"] <= hi)
    if "theory_band" in bands:
        B = float(bands["theory_band"])
        for name in cfg.estimators:
            ratios = [c["estimators"][name].get("ratio_to_theory") for c in cells_out]
            ratios = [r for r in ratios if r is not None]
            if ratios:
                flags[f"theory_band_{name}"] = bool(all(1.0 / B <= r <= B for r in ratios))
    if "pair_band" in bands:
        spec = bands["pair_band"]
        a, b, B = spec["a"], spec["b"], float(spec["band"])
        oks = []
        for ci in range(len(cells_out)):
            ma, mb = medians.get((ci, a)), medians.get((ci, b))
            if ma is None or mb is None or mb == 0.0:
                continue
            oks.append(1.0 / B <= ma / mb <= B)
        if oks:
            flags[f"pair_band_{a}_vs_{b}"] = bool(all(oks))
    for c in cells_out:
        for name, entry in c["estimators"].items():
            if entry["flagged"]:
                flags[f"failures_cell{c['cell_id']}_{name}"] = False
    return flags


def localization_check(records, cells, constants: ConstantsProfile,
                       l1_factor: float | None = None, err_factor: float = 8.0,
                       estimator: str = "rerm") -> list:
    """Per-cell frequency of ||t_hat||_1 <= factor * ||t*||_1 (default factor
    from the profile's rho* construction) and of the localized error bound
    ||t_hat - t*||_2^2 <= err_factor * c0 * r^2(||t*||_1)."""
    if l1_factor is None:
        l1_factor = max(10.0, 8.0 / constants.eta + 1.0)
    out = []
    for ci, cell in enumerate(cells):
        rho_star = cell.target.requested_l1()
        r = max(closed_rM(rho_star, cell.sigma, cell.n, cell.d, constants),
                closed_rQ(rho_star, cell.n, cell.d, constants))
        bound = err_factor * constants.c0 * r * r
        l1s = [rec.l1_norm_hat for rec in records
               if rec.cell_id == ci and rec.estimator_name == estimator]
        errs = [rec.l2_error_sq for rec in records
                if rec.cell_id == ci and rec.estimator_name == estimator]
        if not l1s:
            continue
        out.append({"cell_id": ci, "l1_factor": l1_factor,
                    "freq_l1": float(np.mean([v <= l1_factor * rho_star for v in l1s])),
                    "err_bound": bound,
                    "freq_err": float(np.mean([e <= bound for e in errs])),
                    "trials": len(l1s)})
    return out


def small_ball_demo(n: int, d: int, sigma: float, rho_values, trials: int, seed: int,
                    constants: ConstantsProfile, psi_mode: str = "closed",
                    threads: int = 1) -> dict:
    """RERM behavior at tiny l1 radii, around the adaptation threshold
    sigma*sqrt(log(ed)/N).  Report only: the underlying statement is an
    impossibility result about all estimators, so there is no pass flag."""
    rows = []
    for rho in rho_values:
        for label, target in (("zero", TargetSpec.zero()), ("spike", TargetSpec.spike(rho))):
            cfg = ExperimentConfig(cells=[CellConfig(n, d, sigma, target)],
                                   estimators=["rerm"], trials=trials, seed=seed,
                                   psi_mode=psi_mode)
            rep = rate_experiment(cfg, threads=threads)
            entry = rep.cells[0]["estimators"]["rerm"]
            rows.append({"rho": float(rho), "target": label,
                         "median_l2": entry.get("median_l2"),
                         "rho_sq": float(rho) ** 2,
                         "minimax_rate": minimax_rate(rho, sigma, n, d, constants)})
    return {"N": n, "d": d, "sigma": sigma,
            "threshold": sigma * sigma * math.log(math.e * d) / n,
            "rows": rows}


@dataclass
class FixedDesignConfig:
    n: int
    d: int
    sigma: float
    target: TargetSpec
    rip_budget: int = 64
    rip_override: bool = False
    profile: str = "calibrated"
    grid_points: int = 48
    solver_max_iters: int = 3000
    solver_tol: float = 1e-7
    pred_band: float = 8.0
    pred_freq: float = 0.75
    pn_freq: float = 0.95


def fixed_design_experiment(cfg: FixedDesignConfig, trials: int, seed: int,
                            threads: int = 1) -> dict:
    """Column-normalized fixed design, fresh noise per trial, RERM with the
    closed-form penalty c0' * rbar_X^2.

    The restricted isometry check runs on the model-scale matrix (entries
    O(1) variance); the width machinery and the penalty use the
    column-normalized copy, whose plain l2 geometry matches the model-scale
    L2(N) geometry."""
    constants = get_profile(cfg.profile)
    G = rng.gaussian_rows(seed, (rng.DESIGN,), cfg.n, cfg.d)
    rip = rip_check(G, cfg.rip_budget, seed)
    if not rip.passed and not cfg.rip_override:
        raise RipRefusal(
            f"design failed RIP(s={rip.s}): ratios [{rip.min_ratio:.3f}, "
            f"{rip.max_ratio:.3f}] outside [0.5, 1.5]; set rip_override to proceed")
    X, _ = normalize_columns(G / math.sqrt(cfg.n))
    rank = matrix_rank(X)
    t_star = gen_target(cfg.target, cfg.d, seed)
    rho_check = float(np.abs(t_star).sum())
    r_check = rbar_X(rho_check, X, cfg.sigma, constants, rank=rank)

    def psi_fn(rho):
        rb = rbar_X(rho, X, cfg.sigma, constants, rank=rank)
        return constants.c0_prime * rb * rb

    opts = SolverOptions(max_iters=cfg.solver_max_iters, tol=cfg.solver_tol)
    grid = GridConfig(points=cfg.grid_points)
    Xt_star = X @ t_star

    def run_trial(trial):
        start = time.perf_counter()
        xi = cfg.sigma * rng.stream(seed, rng.NOISE, trial).standard_normal(cfg.n)
        data = Dataset(X, Xt_star + xi, sigma_known=cfg.sigma, t_star=t_star)
        res = rerm(data, psi_fn, grid, opts)
        delta = res.t_hat - t_star
        pred = float(np.linalg.norm(X @ delta) ** 2 / cfg.n)
        sup = (2.0 / cfg.n) * support_image_l1l2(
            xi, X, rho_check, r_check * math.sqrt(cfg.n)).value
        pn_holds = sup <= 0.5 * r_check * r_check
        rec = TrialRecord(0, trial, seed, "rerm", float(delta @ delta), pred,
                          float(np.abs(res.t_hat).sum()), time.perf_counter() - start)
        return pred, rec.l1_norm_hat, sup, bool(pn_holds), rec

    rows = _map_indexed(run_trial, list(range(trials)), threads)
    preds = [r[0] for r in rows]
    l1s = [r[1] for r in rows]
    sups = [r[2] for r in rows]
    pn = [r[3] for r in rows]
    records = [r[4] for r in rows]
    rb2 = r_check * r_check
    freq_pred = float(np.mean([p <= cfg.pred_band * rb2 for p in preds]))
    freq_pn = float(np.mean(pn))
    cfg_dict = {"N": cfg.n, "d": cfg.d, "sigma": cfg.sigma,
                "target": _target_dict(cfg.target), "rip_budget": cfg.rip_budget,
                "rip_override": cfg.rip_override, "profile": cfg.profile,
                "trials": trials, "seed": seed, "pred_band": cfg.pred_band,
                "pred_freq": cfg.pred_freq, "pn_freq": cfg.pn_freq}
    return {
        "config": cfg_dict,
        "config_hash": config_hash(cfg_dict),
        "rip": {"s": rip.s, "supports_checked": rip.supports_checked,
                "exhaustive": rip.exhaustive, "min_ratio": rip.min_ratio,
                "max_ratio": rip.max_ratio, "passed": rip.passed,
                "overridden": bool(cfg.rip_override and not rip.passed)},
        "rank": rank, "rho_star": rho_check, "rbar_sq": rb2,
        "median_pred": float(np.median(preds)),
        "median_l1_hat": float(np.median(l1s)),
        "median_pn_sup": float(np.median(sups)),
        "pn_bound": 0.5 * rb2,
        "freq_pred_band": freq_pred,
        "freq_bound_on_pn": freq_pn,
        "flags": {"pred_band": freq_pred >= cfg.pred_freq,
                  "bound_on_pn": freq_pn >= cfg.pn_freq},
    }, records
