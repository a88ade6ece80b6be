"""Optimization routines: l1-ball projection, constrained ERM, LASSO, and the
regularized ERM reduced to a one-dimensional search over the l1 radius."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FIXED_LIPSCHITZ = "fixed_lipschitz"
BACKTRACKING = "backtracking"


class SolverError(RuntimeError):
    pass


@dataclass
class SolverOptions:
    max_iters: int = 5000
    tol: float = 1e-8          # relative objective decrease
    step_rule: str = FIXED_LIPSCHITZ

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.step_rule not in (FIXED_LIPSCHITZ, BACKTRACKING):
            raise ValueError(f"unknown step rule {self.step_rule!r}")


@dataclass
class Dataset:
    design: np.ndarray          # N x d
    responses: np.ndarray       # N
    sigma_known: float | None = None
    t_star: np.ndarray | None = None   # simulation only

    def __post_init__(self):
        self.design = np.asarray(self.design, dtype=float)
        self.responses = np.asarray(self.responses, dtype=float)
        if self.design.ndim != 2:
            raise ValueError("design must be a 2-d array")
        if self.responses.shape != (self.design.shape[0],):
            raise ValueError("responses must have one entry per design row")
        if not (np.all(np.isfinite(self.design)) and np.all(np.isfinite(self.responses))):
            raise ValueError("design and responses must be finite")

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def d(self) -> int:
        return self.design.shape[1]


@dataclass
class EstimationResult:
    t_hat: np.ndarray
    l1_norm: float
    objective: float
    converged: bool
    iterations: int
    rho_trace: np.ndarray | None = None   # rows (rho, risk, psi, total)
    diagnostics: dict = field(default_factory=dict)


def project_l1_rows(V: np.ndarray, rho: float) -> np.ndarray:
    """Euclidean projection of each row of V onto the l1 ball of radius rho."""
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    V = np.atleast_2d(np.asarray(V, dtype=float))
    out = V.copy()
    if rho == 0:
        out[:] = 0.0
        return out
    norms = np.abs(V).sum(axis=1)
    over = norms > rho
    if not np.any(over):
        return out
    A = np.abs(V[over])
    # Duchi et al. sort-based threshold, vectorized over rows.
    a = np.sort(A, axis=1)[:, ::-1]
    cssum = np.cumsum(a, axis=1) - rho
    ks = np.arange(1, A.shape[1] + 1)
    cond = a - cssum / ks > 0
    k_star = cond.shape[1] - np.argmax(cond[:, ::-1], axis=1) - 1
    theta = cssum[np.arange(A.shape[0]), k_star] / (k_star + 1)
    shrunk = np.sign(V[over]) * np.maximum(A - theta[:, None], 0.0)
    out[over] = shrunk
    return out


def project_l1(v: np.ndarray, rho: float) -> np.ndarray:
    """Euclidean projection onto the l1 ball of radius rho, O(d log d)."""
    v = np.asarray(v, dtype=float)
    return project_l1_rows(v[None, :], rho)[0]


def power_lipschitz(X: np.ndarray, iters: int = 100) -> float:
    """2 * lambda_max(X^T X) / N, the gradient Lipschitz constant of the
    (1/N)-normalized least-squares risk, by power iteration."""
    n, d = X.shape
    v = np.ones(d) + 1e-3 * np.cos(np.arange(d))   # deterministic, generic start
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = X.T @ (X @ v)
        lam = np.linalg.norm(w)
        if lam == 0.0:
            return 0.0
        v = w / lam
    return 2.0 * lam / n


def _risk(X, y, t):
    r = y - X @ t
    return float(r @ r) / X.shape[0]


def _fista(X, y, prox, t0, opts, lipschitz):
    """FISTA with adaptive restart on the (1/N) least-squares risk plus a
    prox-handled penalty. Returns (t, objective, converged, iterations).

    ``prox(v, step)`` must return argmin_u pen(u) + ||u - v||^2 / (2 step),
    and objective(t) = risk(t) + pen(t) is evaluated through ``pen``.
    """
    prox_op, pen = prox
    n = X.shape[0]
    L = lipschitz if lipschitz is not None else power_lipschitz(X)
    if L <= 0:
        L = 1.0
    t = np.array(t0, dtype=float)
    z = t.copy()
    Xt = X @ t
    Xz = Xt.copy()
    obj = _risk(X, y, t) + pen(t)
    theta = 1.0
    step = 1.0 / L
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        grad = (2.0 / n) * (X.T @ (Xz - y))
        if opts.step_rule == BACKTRACKING:
            s = step
            fz = float((Xz - y) @ (Xz - y)) / n
            while True:
                cand = prox_op(z - s * grad, s)
                Xc = X @ cand
                fc = float((Xc - y) @ (Xc - y)) / n
                dz = cand - z
                if fc <= fz + grad @ dz + (dz @ dz) / (2 * s) + 1e-15:
                    break
                s *= 0.5
                if s < 1e2 * np.finfo(float).tiny:
                    break
            step = s
            t_new, Xt_new = cand, Xc
        else:
            t_new = prox_op(z - step * grad, step)
            Xt_new = X @ t_new
        obj_new = float((Xt_new - y) @ (Xt_new - y)) / n + pen(t_new)
        if not np.isfinite(obj_new):
            raise SolverError("non-finite objective in FISTA")
        if obj_new > obj:
            # adaptive restart: drop momentum, re-take the step from t
            z = t.copy()
            Xz = Xt.copy()
            theta = 1.0
            grad = (2.0 / n) * (X.T @ (Xz - y))
            t_new = prox_op(z - step * grad, step)
            Xt_new = X @ t_new
            obj_new = float((Xt_new - y) @ (Xt_new - y)) / n + pen(t_new)
        decrease = obj - obj_new
        theta_new = 0.5 * (1 + np.sqrt(1 + 4 * theta * theta))
        beta = (theta - 1) / theta_new
        z = t_new + beta * (t_new - t)
        Xz = Xt_new + beta * (Xt_new - Xt)
        t, Xt, obj = t_new, Xt_new, obj_new
        theta = theta_new
        if 0 <= decrease < opts.tol * max(abs(obj), 1e-12):
            converged = True
            break
    return t, obj, converged, it


def constrained_erm(data: Dataset, rho: float, opts: SolverOptions | None = None,
                    t0: np.ndarray | None = None,
                    lipschitz: float | None = None) -> EstimationResult:
    """Minimize (1/N)||Y - Xt||_2^2 over the l1 ball of radius rho.

    Accelerated projected gradient with step 1/L, L estimated by power
    iteration (or supplied, e.g. shared across a rho grid).
    """
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    opts = opts or SolverOptions()
    X, y = data.design, data.responses
    if rho == 0:
        t = np.zeros(data.d)
        return EstimationResult(t, 0.0, _risk(X, y, t), True, 0)
    start = np.zeros(data.d) if t0 is None else project_l1(t0, rho)
    prox = (lambda v, s: project_l1(v, rho), lambda t: 0.0)
    t, obj, converged, it = _fista(X, y, prox, start, opts, lipschitz)
    return EstimationResult(t, float(np.abs(t).sum()), obj, converged, it)


def soft_threshold(v: np.ndarray, thr: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - thr, 0.0)


def _lasso_residual(X, y, t, lam):
    """max_j dist(-grad risk_j, lam * subdifferential |t_j|)."""
    g = (2.0 / X.shape[0]) * (X.T @ (X @ t - y))
    on = t != 0
    res = np.maximum(np.abs(g) - lam, 0.0)          # off-support condition
    res[on] = np.abs(g[on] + lam * np.sign(t[on]))  # on-support stationarity
    return float(res.max()) if res.size else 0.0


def _lasso_polish(X, y, t, lam):
    """Solve the KKT system on the detected support; keep it only if the
    objective does not get worse."""
    support = np.flatnonzero(t)
    if support.size == 0 or support.size > X.shape[0]:
        return t
    Xs = X[:, support]
    s = np.sign(t[support])
    rhs = Xs.T @ y - 0.5 * X.shape[0] * lam * s
    try:
        ts = np.linalg.lstsq(Xs.T @ Xs, rhs, rcond=None)[0]
    except np.linalg.LinAlgError:
        return t
    if np.any(np.sign(ts) * s < 0):
        return t
    cand = np.zeros_like(t)
    cand[support] = ts
    return cand


def lasso(data: Dataset, lam: float, opts: SolverOptions | None = None,
          t0: np.ndarray | None = None,
          lipschitz: float | None = None) -> EstimationResult:
    """Minimize (1/N)||Y - Xt||_2^2 + lam * ||t||_1 by accelerated proximal
    gradient; reports the subgradient optimality residual in diagnostics."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    opts = opts or SolverOptions()
    X, y = data.design, data.responses
    start = np.zeros(data.d) if t0 is None else np.asarray(t0, dtype=float)
    prox = (lambda v, s: soft_threshold(v, lam * s),
            lambda t: lam * float(np.abs(t).sum()))
    t, obj, converged, it = _fista(X, y, prox, start, opts, lipschitz)
    cand = _lasso_polish(X, y, t, lam)
    if cand is not t:
        cand_obj = _risk(X, y, cand) + lam * float(np.abs(cand).sum())
        if cand_obj <= obj:
            t, obj = cand, cand_obj
    return EstimationResult(t, float(np.abs(t).sum()), obj, converged, it,
                            diagnostics={"subgradient_residual": _lasso_residual(X, y, t, lam)})


def lasso_default_lambda(sigma: float, n: int, d: int) -> float:
    """Penalty slope sigma * sqrt(log(ed)/N): the un-localized upper bound on
    the multiplier complexity, i.e. the classical LASSO level."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    return sigma * np.sqrt(np.log(np.e * d) / n)


@dataclass
class GridConfig:
    points: int = 64
    rho_min: float | None = None
    rho_max: float | None = None
    refine_evals: int = 24
    monotone_slack: float = 0.10   # relative psi decrease treated as an input error

    def __post_init__(self):
        if self.points < 2:
            raise ValueError("need at least 2 grid points")


def _default_grid(data: Dataset, cfg: GridConfig) -> np.ndarray:
    rho_max = cfg.rho_max
    if rho_max is None:
        ls = np.linalg.lstsq(data.design, data.responses, rcond=None)[0]
        rho_max = 4.0 * float(np.abs(ls).sum())
        if rho_max <= 0:
            rho_max = 1.0
    rho_min = cfg.rho_min
    if rho_min is None:
        if data.sigma_known is not None and data.sigma_known > 0:
            rho_min = lasso_default_lambda(data.sigma_known, data.n, data.d) / 10.0
        else:
            rho_min = 1e-4 * rho_max
    rho_min = min(rho_min, rho_max / 2)
    return np.concatenate([[0.0], np.geomspace(rho_min, rho_max, cfg.points)])


def rerm(data: Dataset, psi_fn, grid_cfg: GridConfig | None = None,
         opts: SolverOptions | None = None) -> EstimationResult:
    """Regularized ERM  min_t (1/N)||Y - Xt||^2 + psi(||t||_1).

    The penalty depends on t only through ||t||_1, so the problem reduces
    exactly to  min_rho v(rho) + psi(rho)  with v(rho) the <=-constrained ERM
    value: any t with ||t||_1 = rho has risk >= v(rho), and the v(rho)
    minimizer has l1 norm rho' <= rho with psi(rho') <= psi(rho) since psi is
    nondecreasing.  v is scanned on a log grid (warm-started, ascending) and
    the winning bracket is refined by golden section.
    """
    grid_cfg = grid_cfg or GridConfig()
    opts = opts or SolverOptions()
    X = data.design
    grid = _default_grid(data, grid_cfg)

    psi_grid = np.array([float(psi_fn(r)) for r in grid])
    if not np.all(np.isfinite(psi_grid)):
        raise ValueError("psi_fn produced non-finite values on the grid")
    running = np.maximum.accumulate(psi_grid)
    drop = running - psi_grid
    scale = max(running[-1], 1e-300)
    if np.any(drop > grid_cfg.monotone_slack * scale):
        raise ValueError("psi_fn must be nondecreasing on the evaluation grid")
    psi_grid = running   # kill residual Monte Carlo non-monotonicity

    lipschitz = power_lipschitz(X)
    solves: dict[float, EstimationResult] = {}
    risks = np.full(grid.shape, np.nan)
    warm = None
    failures = 0
    for i, rho in enumerate(grid):
        try:
            res = constrained_erm(data, rho, opts, t0=warm, lipschitz=lipschitz)
            solves[rho] = res
            risks[i] = res.objective
            warm = res.t_hat
        except SolverError:
            failures += 1
    if failures > 0.2 * len(grid):
        raise SolverError(f"inner solver failed at {failures}/{len(grid)} grid points")

    ok = np.isfinite(risks)
    totals = risks + psi_grid
    best = int(np.nanargmin(np.where(ok, totals, np.inf)))

    trace = [(grid[i], risks[i], psi_grid[i], totals[i]) for i in range(len(grid)) if ok[i]]
    best_rho, best_total = grid[best], totals[best]

    def evaluate(rho):
        nonlocal best_rho, best_total
        res = constrained_erm(data, rho, opts, t0=solves[best_rho].t_hat, lipschitz=lipschitz)
        solves[rho] = res
        total = res.objective + float(psi_fn(rho))
        trace.append((rho, res.objective, total - res.objective, total))
        if total < best_total:
            best_rho, best_total = rho, total
        return total

    lo = grid[best - 1] if best > 0 else grid[best]
    hi = grid[best + 1] if best + 1 < len(grid) else grid[best]
    if hi > lo:
        invphi = (np.sqrt(5.0) - 1) / 2
        a, b = lo, hi
        c = b - invphi * (b - a)
        e = a + invphi * (b - a)
        fc, fe = evaluate(c), evaluate(e)
        for _ in range(max(grid_cfg.refine_evals - 2, 0)):
            if fc <= fe:
                b, e, fe = e, c, fc
                c = b - invphi * (b - a)
                fc = evaluate(c)
            else:
                a, c, fc = c, e, fe
                e = a + invphi * (b - a)
                fe = evaluate(e)

    winner = solves[best_rho]
    trace.sort(key=lambda row: row[0])
    l1 = float(np.abs(winner.t_hat).sum())
    # report the objective at t_hat itself; with slack in the l1 constraint
    # psi(||t_hat||_1) can sit below psi(rho_hat)
    objective = _risk(X, data.responses, winner.t_hat) + float(psi_fn(l1))
    return EstimationResult(
        winner.t_hat, l1, min(objective, best_total),
        winner.converged, winner.iterations,
        rho_trace=np.array(trace),
        diagnostics={"rho_hat": best_rho, "grid_failures": failures},
    )
