"""Support functions and Monte Carlo Gaussian mean widths of the localized
sets the fixed-point complexities are built from: rho*B1 with r*B2, the image
of the l1 ball under a design, and kernel sections of the l1 ball."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .solvers import SolverOptions, power_lipschitz, project_l1, project_l1_rows

L1_L2 = "l1_l2"
IMAGE_L1_L2 = "image_l1_l2"
KERNEL_L1 = "kernel_l1"


@dataclass
class LocalizedSet:
    kind: str
    rho: float | None = None
    r: float | None = None
    d: int | None = None
    design: np.ndarray | None = None
    c: float | None = None

    @classmethod
    def l1_l2(cls, rho: float, r: float, d: int) -> "LocalizedSet":
        if rho < 0 or r < 0:
            raise ValueError("radii must be nonnegative")
        if d < 1:
            raise ValueError("d must be positive")
        return cls(L1_L2, rho=float(rho), r=float(r), d=int(d))

    @classmethod
    def image_l1_l2(cls, design: np.ndarray, c: float, r: float) -> "LocalizedSet":
        design = np.asarray(design, dtype=float)
        if design.ndim != 2 or min(design.shape) < 1:
            raise ValueError("design must be a nonempty matrix")
        if c < 0 or r < 0:
            raise ValueError("radii must be nonnegative")
        return cls(IMAGE_L1_L2, design=design, c=float(c), r=float(r))

    @classmethod
    def kernel_l1(cls, design: np.ndarray, rho: float) -> "LocalizedSet":
        design = np.asarray(design, dtype=float)
        if design.ndim != 2 or min(design.shape) < 1:
            raise ValueError("design must be a nonempty matrix")
        if rho < 0:
            raise ValueError("rho must be nonnegative")
        return cls(KERNEL_L1, design=design, rho=float(rho))

    def describe(self) -> str:
        if self.kind == L1_L2:
            return f"l1_l2(rho={self.rho}, r={self.r}, d={self.d})"
        n, d = self.design.shape
        if self.kind == IMAGE_L1_L2:
            return f"image_l1_l2(N={n}, d={d}, c={self.c}, r={self.r})"
        return f"kernel_l1(N={n}, d={d}, rho={self.rho})"


@dataclass
class WidthEstimate:
    value: float
    stderr: float
    samples: int
    set: str


def support_l1l2_rows(G: np.ndarray, rho: float, r: float) -> np.ndarray:
    """sup{<g,t> : ||t||_1 <= rho, ||t||_2 <= r} for each row g of G.

    Uses the dual representation h(g) = min_{lam >= 0} rho*lam +
    r*||soft(g, lam)||_2 (exact by strong duality) and enumerates the
    breakpoints of the piecewise-quadratic soft-threshold norm, so the
    minimizer is found in closed form interval by interval.
    """
    if rho < 0 or r < 0:
        raise ValueError("radii must be nonnegative")
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if not np.all(np.isfinite(G)):
        raise ValueError("g must be finite")
    m, d = G.shape
    if rho == 0.0 or r == 0.0:
        return np.zeros(m)
    if r >= rho:
        # localization lemma: the l1 constraint alone is active
        return rho * np.abs(G).max(axis=1)

    out = np.empty(m)
    chunk = max(1, int(4e6) // max(d, 1))
    for lo in range(0, m, chunk):
        out[lo:lo + chunk] = _support_chunk(G[lo:lo + chunk], rho, r)
    return out


def _support_chunk(G: np.ndarray, rho: float, r: float) -> np.ndarray:
    m, d = G.shape
    a = np.sort(np.abs(G), axis=1)[:, ::-1]            # a_1 >= ... >= a_d
    a1 = a[:, :1]
    # Work with entries shifted by the row maximum: the quadratics below only
    # ever cancel when the active entries all tie near a_1, and in the shifted
    # frame that configuration is computed at its own scale instead of being
    # swamped by rounding of O(||g||^2) aggregates.
    at = a - a1                                        # <= 0
    Bt = np.cumsum(at, axis=1)
    At = np.cumsum(at * at, axis=1)
    k = np.arange(1, d + 1, dtype=float)

    # Candidate 1: breakpoints lam = a_m (active set = first m-1 entries)
    Bt0 = np.concatenate([np.zeros((m, 1)), Bt[:, :-1]], axis=1)
    At0 = np.concatenate([np.zeros((m, 1)), At[:, :-1]], axis=1)
    k0 = k - 1.0
    s2 = np.maximum(At0 - 2 * Bt0 * at + k0 * at * at, 0.0)
    vals_bp = rho * a + r * np.sqrt(s2)
    lam_bp_best = a[np.arange(m), np.argmin(vals_bp, axis=1)]

    # Candidate 2: interior stationary points, one per breakpoint interval.
    # On [a_{k+1}, a_k] the dual is rho*lam + r*s(lam) with s^2 quadratic in
    # lam; the stationary point solves r(B_k - k lam) = rho * s(lam).
    u = r * r * k - rho * rho
    with np.errstate(invalid="ignore", divide="ignore", under="ignore"):
        disc = (k * At - Bt * Bt) / u
        lam_t = (Bt - rho * np.sqrt(np.maximum(disc, 0.0))) / k
    lower_t = np.concatenate([at[:, 1:], -a1], axis=1)
    lam_t = np.clip(lam_t, lower_t, at)
    lam_t[~np.isfinite(lam_t)] = 0.0
    bad = (u <= 0) | (disc < 0)
    s2i = np.maximum(At - 2 * Bt * lam_t + k * lam_t * lam_t, 0.0)
    vals_int = rho * (a1 + lam_t) + r * np.sqrt(s2i)
    vals_int[bad] = np.inf
    rows = np.arange(m)
    lam_int_best = (a1[:, 0] + lam_t[rows, np.argmin(vals_int, axis=1)])

    # Re-evaluate each family's winner through the soft-threshold tails
    # (cancellation-free) and keep the best; every candidate is a true dual
    # value, so the result can only improve.
    best = np.full(m, np.inf)
    for lam_c in (lam_bp_best, lam_int_best, np.zeros(m)):
        tails = np.maximum(np.abs(G) - lam_c[:, None], 0.0)
        vals = rho * lam_c + r * np.sqrt(np.einsum("ij,ij->i", tails, tails))
        best = np.minimum(best, vals)
    return best


def support_l1l2(g: np.ndarray, rho: float, r: float) -> float:
    """sup{<g,t> : ||t||_1 <= rho, ||t||_2 <= r}."""
    g = np.asarray(g, dtype=float)
    if g.ndim != 1:
        raise ValueError("g must be a vector")
    return float(support_l1l2_rows(g[None, :], rho, r)[0])


def gaussian_mean_width(localized: LocalizedSet, samples: int, seed: int) -> WidthEstimate:
    """Monte Carlo mean and standard error of the support function over
    standard Gaussian draws; sample i comes from the substream (seed, i)."""
    if localized.kind != L1_L2:
        raise ValueError("gaussian_mean_width expects an l1_l2 set")
    if samples < 2:
        raise ValueError("samples must be at least 2")
    G = rng.gaussian_rows(seed, (rng.WIDTH,), samples, localized.d)
    vals = support_l1l2_rows(G, localized.rho, localized.r)
    value = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / np.sqrt(samples))
    return WidthEstimate(value, stderr, samples, localized.describe())


@dataclass
class ImageSupport:
    value: float
    converged: bool
    gap: float
    evaluations: int


def _max_linear_l1(b: np.ndarray, c: float) -> np.ndarray:
    t = np.zeros_like(b)
    j = int(np.argmax(np.abs(b)))
    t[j] = c * np.sign(b[j])
    return t


def support_image_l1l2(g: np.ndarray, design: np.ndarray, c: float, r: float,
                       opts: SolverOptions | None = None) -> ImageSupport:
    """sup{<g, Xt> : ||t||_1 <= c, ||Xt||_2 <= r} by Lagrangian duality.

    Outer 1-d minimization over the multiplier lam of the quadratic
    constraint; the inner concave-quadratic maximization over the l1 ball is
    solved by projected gradient ascent.  The returned value is the best
    primal-feasible evaluation found (iterates violating the l2 constraint
    are rescaled onto it), with the duality gap as certificate.
    """
    opts = opts or SolverOptions(max_iters=1000, tol=1e-9)
    X = np.asarray(design, dtype=float)
    g = np.asarray(g, dtype=float)
    if g.shape != (X.shape[0],):
        raise ValueError("g must match the number of design rows")
    if c < 0 or r < 0:
        raise ValueError("radii must be nonnegative")
    if c == 0.0 or r == 0.0:
        return ImageSupport(0.0, True, 0.0, 0)
    b = X.T @ g
    if not np.any(b):
        return ImageSupport(0.0, True, 0.0, 0)

    lam_max_XtX = power_lipschitz(X) * X.shape[0] / 2.0
    evaluations = 0
    best_primal = 0.0

    def feas_value(t):
        nonlocal best_primal
        nrm = np.linalg.norm(X @ t)
        if nrm > r and nrm > 0:
            t = t * (r / nrm)
        best_primal = max(best_primal, float(b @ t))

    def dual(lam, warm):
        # max_{||t||_1 <= c} <b,t> - lam (||Xt||^2 - r^2)
        nonlocal evaluations
        evaluations += 1
        if lam == 0.0:
            t = _max_linear_l1(b, c)
            feas_value(t)
            return float(b @ t), t
        L = 2.0 * lam * lam_max_XtX
        step = 1.0 / max(L, 1e-300)
        t = project_l1(warm, c)
        z = t.copy()
        theta = 1.0
        val = -np.inf
        for _ in range(opts.max_iters):
            grad = b - 2.0 * lam * (X.T @ (X @ z))
            t_new = project_l1(z + step * grad, c)
            v_new = float(b @ t_new - lam * np.linalg.norm(X @ t_new) ** 2)
            if v_new < val:
                z = t.copy()
                theta = 1.0
                grad = b - 2.0 * lam * (X.T @ (X @ z))
                t_new = project_l1(z + step * grad, c)
                v_new = float(b @ t_new - lam * np.linalg.norm(X @ t_new) ** 2)
            theta_new = 0.5 * (1 + np.sqrt(1 + 4 * theta * theta))
            z = t_new + ((theta - 1) / theta_new) * (t_new - t)
            done = 0 <= v_new - val < opts.tol * max(abs(v_new), 1e-12)
            t, val, theta = t_new, v_new, theta_new
            if done:
                break
        feas_value(t)
        return val + lam * r * r, t

    # unconstrained (lam = 0) maximizer already feasible => exact optimum
    t0 = _max_linear_l1(b, c)
    if np.linalg.norm(X @ t0) <= r:
        return ImageSupport(float(b @ t0), True, 0.0, 1)

    lam_hi = max(float(np.abs(b).max()) * c, 1e-12) / (r * r)
    d_hi, t_hi = dual(lam_hi, t0)
    for _ in range(60):
        d_2hi, t_2hi = dual(2 * lam_hi, t_hi)
        if d_2hi > d_hi:
            break
        lam_hi, d_hi, t_hi = 2 * lam_hi, d_2hi, t_2hi

    invphi = (np.sqrt(5.0) - 1) / 2
    a_, b_ = 0.0, 2 * lam_hi
    warm = t_hi
    c_ = b_ - invphi * (b_ - a_)
    e_ = a_ + invphi * (b_ - a_)
    fc, warm = dual(c_, warm)
    fe, warm = dual(e_, warm)
    dual_best = min(d_hi, fc, fe)
    for _ in range(48):
        if fc <= fe:
            b_, e_, fe = e_, c_, fc
            c_ = b_ - invphi * (b_ - a_)
            fc, warm = dual(c_, warm)
        else:
            a_, c_, fc = c_, e_, fe
            e_ = a_ + invphi * (b_ - a_)
            fe, warm = dual(e_, warm)
        dual_best = min(dual_best, fc, fe)

    gap = max(dual_best - best_primal, 0.0)
    converged = gap <= 1e3 * opts.tol * max(1.0, abs(dual_best))
    return ImageSupport(best_primal, converged, gap, evaluations)


@dataclass
class KernelSectionWidth:
    width: WidthEstimate
    diameter_proxy: float


def _dykstra_kernel_l1(Z: np.ndarray, P: np.ndarray, rho: float,
                       max_iters: int = 500, tol: float = 1e-8) -> np.ndarray:
    """Project each row of Z onto (ker X) \\cap rho*B1: Dykstra alternating
    projections between the kernel subspace (projector P) and the l1 ball.
    Rows that stop moving are frozen so stragglers do not dominate the cost."""
    out = Z.copy()
    x = Z.copy()
    p = np.zeros_like(Z)
    q = np.zeros_like(Z)
    active = np.arange(Z.shape[0])
    thresh = tol * max(rho, 1e-300)
    for _ in range(max_iters):
        y = (x + p) @ P
        p = x + p - y
        x_new = project_l1_rows(y + q, rho)
        q = y + q - x_new
        moved = np.max(np.abs(x_new - x), axis=1) > thresh
        done = ~moved
        if np.any(done):
            out[active[done]] = x_new[done]
            x, p, q, active = x_new[moved], p[moved], q[moved], active[moved]
        else:
            x = x_new
        if active.size == 0:
            return out
    out[active] = x
    return out


def kernel_section_width(design: np.ndarray, rho: float, samples: int, seed: int,
                         opts: SolverOptions | None = None) -> KernelSectionWidth:
    """Estimate the Gaussian mean width of ker(X) intersected with rho*B1.

    Per Gaussian sample, the linear objective is maximized by projected
    gradient, projecting onto the intersection with Dykstra.  Also reports
    2 * max ||h*||_2 over samples as a diameter proxy (the diameter itself is
    a non-convex maximization, so this is only a proxy).
    """
    opts = opts or SolverOptions(max_iters=48, tol=1e-8)
    X = np.asarray(design, dtype=float)
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if samples < 2:
        raise ValueError("samples must be at least 2")
    d = X.shape[1]
    sv = np.linalg.svd(X, compute_uv=False)
    tol_rank = max(X.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    rank = int(np.sum(sv > tol_rank))
    if rank >= d:
        raise ValueError("kernel is trivial: rank(X) = d")
    localized = LocalizedSet.kernel_l1(X, rho)
    if rho == 0.0:
        return KernelSectionWidth(WidthEstimate(0.0, 0.0, samples, localized.describe()), 0.0)

    _, _, vh = np.linalg.svd(X, full_matrices=True)
    basis = vh[rank:].T                      # d x (d - rank), orthonormal
    P = basis @ basis.T

    G = rng.gaussian_rows(seed, (rng.KERNEL,), samples, d)
    H = np.zeros_like(G)
    gnorm = np.linalg.norm(G, axis=1, keepdims=True)
    gnorm[gnorm == 0] = 1.0
    best = np.full(samples, -np.inf)
    for it in range(opts.max_iters):
        step = rho / (gnorm * np.sqrt(it + 1.0))
        H = _dykstra_kernel_l1(H + step * G, P, rho, tol=opts.tol)
        vals = np.einsum("ij,ij->i", G, H)
        gain = np.max(vals - best)
        best = np.maximum(best, vals)
        if it >= 8 and gain <= 1e-3 * max(float(np.max(np.abs(best))), 1e-300):
            break
    vals = np.einsum("ij,ij->i", G, H)
    value = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / np.sqrt(samples))
    diameter = 2.0 * float(np.max(np.linalg.norm(H, axis=1)))
    return KernelSectionWidth(WidthEstimate(value, stderr, samples, localized.describe()), diameter)
