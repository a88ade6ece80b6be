"""Fixed-point complexity functions r_M, r_Q, r_X, their closed forms, the
regularization function psi = c0 * r^2, the minimax rate table, and derived
radii (r0, rho0, rho*, K0)."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import rng
from .geometry import support_image_l1l2, support_l1l2_rows
from .solvers import SolverOptions

MC = "mc"
CLOSED_FORM = "closed"


@dataclass(frozen=True)
class ConstantsProfile:
    Q: float
    eta: float
    c0: float
    eta_prime: float
    c0_prime: float
    C_M: float
    C_Q: float
    zeta: float
    zeta_prime: float
    mc_samples: int = 1024
    bisect_rel_tol: float = 1e-3

    def __post_init__(self):
        if not (0 < self.Q <= 1):
            raise ValueError("Q must lie in (0, 1]")
        if not (0 < self.eta < 1 and 0 < self.eta_prime < 1):
            raise ValueError("eta and eta_prime must lie in (0, 1)")
        if min(self.c0, self.c0_prime, self.C_M, self.C_Q) <= 0:
            raise ValueError("c0, c0_prime, C_M, C_Q must be positive")
        if not (0 < self.zeta < 1 < self.zeta_prime):
            raise ValueError("need zeta < 1 < zeta_prime")
        if self.mc_samples < 2:
            raise ValueError("mc_samples must be at least 2")
        if self.bisect_rel_tol <= 0:
            raise ValueError("bisect_rel_tol must be positive")


def paper_faithful() -> ConstantsProfile:
    """Constants as pinned by the proofs (eta = 1/(16 sqrt 2), c0 > 13, ...)."""
    return ConstantsProfile(Q=0.4, eta=1.0 / (16.0 * math.sqrt(2.0)), c0=14.0,
                            eta_prime=0.125, c0_prime=2.0, C_M=1.0, C_Q=1.0,
                            zeta=0.5, zeta_prime=2.0)


def calibrated() -> ConstantsProfile:
    """Same shape, friendlier scale: eta = 0.5, c0 = 2 (the proofs are loose
    by design, so simulations use constants of practical magnitude)."""
    return replace(paper_faithful(), eta=0.5, c0=2.0)


PROFILES = {"paper-faithful": paper_faithful, "calibrated": calibrated,
            "paper": paper_faithful}


def get_profile(name: str) -> ConstantsProfile:
    try:
        return PROFILES[name]()
    except KeyError:
        raise ValueError(f"unknown constants profile {name!r}") from None


@dataclass
class FixedPointResult:
    rho: float
    r: float
    method: str
    bracket: tuple[float, float]
    evaluations: int
    width_at_r: float | None = None
    converged: bool = True


def _validate(rho, sigma, n, d):
    if rho < 0 or sigma < 0:
        raise ValueError("rho and sigma must be nonnegative")
    if n < 1 or d < 1:
        raise ValueError("N and d must be positive")


def _bisect(feasible, hi0, rel_tol, max_expand=50):
    """inf{r > 0 : feasible(r)} for a condition that is infeasible on (0, r*)
    and feasible beyond; returns (lo, hi, evals) with hi on the feasible side."""
    hi = hi0
    evals = 1
    while not feasible(hi):
        hi *= 2.0
        evals += 1
        if evals > max_expand:
            raise RuntimeError(
                f"bisection bracket failure: condition still violated at r={hi:g}")
    lo = 0.0
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        evals += 1
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return lo, hi, evals


def fixed_point_rM(rho: float, sigma: float, n: int, d: int,
                   constants: ConstantsProfile, seed: int) -> FixedPointResult:
    """Multiplier fixed point inf{r > 0 : sigma * l*(rho B1 ^ r B2) <= eta r^2 sqrt(N)},
    with the width replaced by its Monte Carlo estimate on one frozen Gaussian
    sample set (common random numbers across the whole bisection)."""
    _validate(rho, sigma, n, d)
    if sigma == 0.0 or rho == 0.0:
        return FixedPointResult(rho, 0.0, MC, (0.0, 0.0), 0, 0.0)
    G = rng.gaussian_rows(seed, (rng.FIXED_POINT,), constants.mc_samples, d)
    sqn = math.sqrt(n)

    cache: dict[float, float] = {}

    def width(r):
        if r not in cache:
            cache[r] = float(np.mean(support_l1l2_rows(G, rho, r)))
        return cache[r]

    def feasible(r):
        return sigma * width(r) <= constants.eta * r * r * sqn

    hi0 = 2.0 * sigma * math.sqrt(d) / (constants.eta * sqn)
    lo, hi, evals = _bisect(feasible, hi0, constants.bisect_rel_tol)
    return FixedPointResult(rho, hi, MC, (lo, hi), evals, width(hi))


def fixed_point_rQ(rho: float, n: int, d: int,
                   constants: ConstantsProfile, seed: int) -> FixedPointResult:
    """Quadratic fixed point inf{r > 0 : l*(rho B1 ^ r B2) <= Q r sqrt(N)}.

    As r -> 0 the localized width behaves like r * E||G||_2, so the fixed
    point is 0 exactly when the estimated E||G||_2 <= Q sqrt(N)."""
    _validate(rho, 1.0, n, d)
    if rho == 0.0:
        return FixedPointResult(rho, 0.0, MC, (0.0, 0.0), 0, 0.0)
    G = rng.gaussian_rows(seed, (rng.FIXED_POINT,), constants.mc_samples, d)
    sqn = math.sqrt(n)
    chi_mean = float(np.mean(np.linalg.norm(G, axis=1)))
    if chi_mean <= constants.Q * sqn:
        return FixedPointResult(rho, 0.0, MC, (0.0, 0.0), 1, 0.0)

    cache: dict[float, float] = {}

    def width(r):
        if r not in cache:
            cache[r] = float(np.mean(support_l1l2_rows(G, rho, r)))
        return cache[r]

    def feasible(r):
        return width(r) <= constants.Q * r * sqn

    linf_mean = float(np.mean(np.abs(G).max(axis=1)))
    hi0 = 2.0 * rho * linf_mean / (constants.Q * sqn)
    lo, hi, evals = _bisect(feasible, hi0, constants.bisect_rel_tol)
    return FixedPointResult(rho, hi, MC, (lo, hi), evals, width(hi))


def _log_d(d: int) -> float:
    # d = 1 would put the whole axis in the "small rho" branch; collapse it.
    return 0.0 if d == 1 else math.log(d)


def closed_rM(rho: float, sigma: float, n: int, d: int,
              constants: ConstantsProfile) -> float:
    """Closed-form multiplier fixed point (three regimes in rho)."""
    _validate(rho, sigma, n, d)
    if rho == 0.0 or sigma == 0.0:
        return 0.0
    rr = rho * rho * n
    if rr >= sigma * sigma * d * d:
        sq = sigma * sigma * d / n
    elif rr >= sigma * sigma * _log_d(d):
        sq = rho * sigma * math.sqrt(math.log(math.e * sigma * d / (rho * math.sqrt(n))) / n)
    else:
        sq = rho * sigma * math.sqrt(math.log(math.e * d) / n)
    return math.sqrt(constants.C_M * sq)


LOW_DIM = "low"          # N >= zeta' d: r_Q = 0
HIGH_DIM = "high"        # N <= zeta d: Gelfand regime
EXCLUDED = "excluded"    # zeta d < N < zeta' d: upper bound only


def quadratic_regime(n: int, d: int, constants: ConstantsProfile) -> str:
    if n >= constants.zeta_prime * d:
        return LOW_DIM
    if n <= constants.zeta * d:
        return HIGH_DIM
    return EXCLUDED


def closed_rQ(rho: float, n: int, d: int, constants: ConstantsProfile) -> float:
    """Closed-form quadratic fixed point: 0 in the low-dimensional regime,
    rho * sqrt(C_Q log(ed/N)/N) in the high-dimensional one.  In the excluded
    band zeta d < N < zeta' d the latter formula is returned but is only an
    upper bound (see quadratic_regime)."""
    _validate(rho, 1.0, n, d)
    if rho == 0.0:
        return 0.0
    if quadratic_regime(n, d, constants) == LOW_DIM:
        return 0.0
    return math.sqrt(constants.C_Q * rho * rho * math.log(math.e * d / n) / n)


def psi(rho: float, sigma: float, n: int, d: int, constants: ConstantsProfile,
        mode: str = CLOSED_FORM, seed: int = 0) -> float:
    """Regularization function c0 * max(r_M, r_Q)^2."""
    if mode == CLOSED_FORM:
        r = max(closed_rM(rho, sigma, n, d, constants),
                closed_rQ(rho, n, d, constants))
    elif mode == MC:
        r = max(fixed_point_rM(rho, sigma, n, d, constants, seed).r,
                fixed_point_rQ(rho, n, d, constants, seed).r)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return constants.c0 * r * r


def rate_table_rM2(rho: float, sigma: float, n: int, d: int,
                   constants: ConstantsProfile) -> float:
    """Multiplier complexity (squared) as it enters the minimax rate table.

    Same three regimes as closed_rM but the intermediate branch carries the
    table's logarithm log(e d^2 sigma^2 / (rho^2 N)); the two forms agree up
    to a factor sqrt(2)."""
    _validate(rho, sigma, n, d)
    if rho == 0.0 or sigma == 0.0:
        return 0.0
    rr = rho * rho * n
    if rr >= sigma * sigma * d * d:
        sq = sigma * sigma * d / n
    elif rr >= sigma * sigma * _log_d(d):
        sq = rho * sigma * math.sqrt(math.log(math.e * d * d * sigma * sigma / rr) / n)
    else:
        sq = rho * sigma * math.sqrt(math.log(math.e * d) / n)
    return constants.C_M * sq


def minimax_rate(rho: float, sigma: float, n: int, d: int,
                 constants: ConstantsProfile) -> float:
    """Minimax rate over the l1 ball of radius rho: min(r^2(rho), rho^2) with
    r^2 = max of the table's multiplier complexity and the quadratic one.

    The min with rho^2 reproduces the N <= log d regime (rate rho^2) and the
    small-rho cases of the other regimes."""
    rq = closed_rQ(rho, n, d, constants)
    r2 = max(rate_table_rM2(rho, sigma, n, d, constants), rq * rq)
    return min(r2, rho * rho)


def rate_branch(rho: float, sigma: float, n: int, d: int,
                constants: ConstantsProfile) -> str:
    """Label of the active cell of the rate table, for regime bookkeeping.
    Cells inside the excluded band zeta d < N < zeta' d are tagged: there the
    quadratic complexity is an upper bound only."""
    if n <= _log_d(d):
        return "trivial-diameter"
    rq = closed_rQ(rho, n, d, constants)
    rm2 = rate_table_rM2(rho, sigma, n, d, constants)
    r2 = max(rm2, rq * rq)
    regime = quadratic_regime(n, d, constants)
    suffix = "/upper-bound-only" if regime == EXCLUDED else ""
    if rho * rho <= r2:
        return "small-rho" + suffix
    if rq * rq >= rm2 and regime != LOW_DIM:
        return "gelfand" + suffix
    rr = rho * rho * n
    if rr >= sigma * sigma * d * d:
        return "full-dimension" + suffix
    return "multiplier" + suffix


@dataclass
class DerivedRadii:
    r0: float
    rho0: float
    rho_star: float
    K0: int


def derived_radii(sigma: float, n: int, d: int, t_star_l1: float,
                  constants: ConstantsProfile, c_m_ratio: float = 1.0) -> DerivedRadii:
    """r0 = (sigma/eta) sqrt(d/N) (plateau of r_M), rho0 = r0 sqrt(d) (start of
    the plateau), rho* = max(10, 8 c_m_ratio^2 / eta + 1) ||t*||_1, and K0 the
    first k with 2^k rho* >= 2 rho0."""
    if sigma < 0 or t_star_l1 < 0:
        raise ValueError("sigma and t_star_l1 must be nonnegative")
    _validate(0.0, sigma, n, d)
    r0 = (sigma / constants.eta) * math.sqrt(d / n)
    rho0 = r0 * math.sqrt(d)
    rho_star = max(10.0, 8.0 * c_m_ratio**2 / constants.eta + 1.0) * t_star_l1
    if rho0 == 0.0:
        k0 = 0
    elif rho_star == 0.0:
        raise ValueError("t_star_l1 must be positive when sigma > 0")
    else:
        k0 = max(0, math.ceil(math.log2(2.0 * rho0 / rho_star)))
        while 2**k0 * rho_star < 2.0 * rho0:   # guard the fp edge of ceil
            k0 += 1
    return DerivedRadii(r0, rho0, rho_star, k0)


def matrix_rank(design: np.ndarray) -> int:
    sv = np.linalg.svd(np.asarray(design, dtype=float), compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > max(design.shape) * np.finfo(float).eps * sv[0]))


def _check_columns(design: np.ndarray):
    norms = np.linalg.norm(design, axis=0)
    if np.any(norms > 1.0 + 1e-9):
        raise ValueError(
            "design columns must lie in the unit l2 ball; run normalize_columns first")


def rbar_X(rho: float, design: np.ndarray, sigma: float,
           constants: ConstantsProfile, rank: int | None = None) -> float:
    """Closed-form upper bound on the fixed-design fixed point r_X.

    C * min(sigma^2 rank/N, rho sigma sqrt(log(e sigma d/(rho sqrt N))/N),
    rho sigma sqrt(log(ed)/N)), square-rooted; the middle term only competes
    while its logarithm stays >= 1, i.e. rho <= sigma d / sqrt(N) (its regime
    condition; past it the term decreases again, which would break the
    monotonicity the penalty construction relies on)."""
    design = np.asarray(design, dtype=float)
    _check_columns(design)
    if rho < 0 or sigma < 0:
        raise ValueError("rho and sigma must be nonnegative")
    n, d = design.shape
    if rho == 0.0 or sigma == 0.0:
        return 0.0
    if rank is None:
        rank = matrix_rank(design)
    terms = [sigma * sigma * rank / n,
             rho * sigma * math.sqrt(math.log(math.e * d) / n)]
    arg = math.e * sigma * d / (rho * math.sqrt(n))
    if arg >= math.e:
        terms.append(rho * sigma * math.sqrt(math.log(arg) / n))
    return math.sqrt(constants.C_M * min(terms))


def fixed_point_rX(rho: float, design: np.ndarray, sigma: float,
                   constants: ConstantsProfile, seed: int,
                   opts: SolverOptions | None = None,
                   samples: int = 64) -> FixedPointResult:
    """Fixed-design multiplier fixed point
    inf{r : sigma * l*((rho/sqrt N) X B1 ^ r B2^N) <= eta' r^2 sqrt(N)},
    with the width estimated through support_image_l1l2 on a frozen sample."""
    design = np.asarray(design, dtype=float)
    _check_columns(design)
    _validate(rho, sigma, *design.shape)
    n = design.shape[0]
    if sigma == 0.0 or rho == 0.0:
        return FixedPointResult(rho, 0.0, MC, (0.0, 0.0), 0, 0.0)
    G = rng.gaussian_rows(seed, (rng.FIXED_POINT, 2), samples, n)
    sqn = math.sqrt(n)
    c = rho / sqn
    all_converged = True

    cache: dict[float, float] = {}

    def width(r):
        nonlocal all_converged
        if r not in cache:
            vals = np.empty(samples)
            for i in range(samples):
                res = support_image_l1l2(G[i], design, c, r, opts)
                vals[i] = res.value
                all_converged = all_converged and res.converged
            cache[r] = float(np.mean(vals))
        return cache[r]

    def feasible(r):
        return sigma * width(r) <= constants.eta_prime * r * r * sqn

    rank = matrix_rank(design)
    hi0 = 2.0 * sigma * math.sqrt(max(rank, 1)) / (constants.eta_prime * sqn)
    lo, hi, evals = _bisect(feasible, hi0, constants.bisect_rel_tol)
    return FixedPointResult(rho, hi, MC, (lo, hi), evals, width(hi),
                            converged=all_converged)


def gelfand_theoretical(rho: float, n: int, d: int) -> float:
    """Garnaev-Gluskin order of the Gelfand N-width of rho B1:
    rho * min(1, sqrt(log(ed/N)/N)); the log argument is clamped at e once
    N >= d."""
    _validate(rho, 1.0, n, d)
    arg = max(math.e * d / n, math.e)
    return rho * min(1.0, math.sqrt(math.log(arg) / n))


@dataclass
class ComplexityProfile:
    n: int
    d: int
    sigma: float
    rho_grid: np.ndarray
    r_M: np.ndarray
    r_Q: np.ndarray
    r: np.ndarray
    psi: np.ndarray
    method: str


def complexity_profile(n: int, d: int, sigma: float, rho_grid,
                       constants: ConstantsProfile, method: str = CLOSED_FORM,
                       seed: int = 0) -> ComplexityProfile:
    """Tabulate r_M, r_Q, r = max, psi = c0 r^2 on a rho grid.  In MC mode
    each grid point owns the frozen sample set (seed, index)."""
    rho_grid = np.asarray(rho_grid, dtype=float)
    if rho_grid.ndim != 1 or np.any(np.diff(rho_grid) <= 0) or np.any(rho_grid < 0):
        raise ValueError("rho_grid must be strictly increasing and nonnegative")
    rm = np.empty_like(rho_grid)
    rq = np.empty_like(rho_grid)
    for i, rho in enumerate(rho_grid):
        if method == CLOSED_FORM:
            rm[i] = closed_rM(rho, sigma, n, d, constants)
            rq[i] = closed_rQ(rho, n, d, constants)
        elif method == MC:
            sub = rng.subseed(seed, i)
            rm[i] = fixed_point_rM(rho, sigma, n, d, constants, sub).r
            rq[i] = fixed_point_rQ(rho, n, d, constants, sub).r
        else:
            raise ValueError(f"unknown method {method!r}")
    r = np.maximum(rm, rq)
    return ComplexityProfile(n, d, sigma, rho_grid, rm, rq, r,
                             constants.c0 * r * r, method)
