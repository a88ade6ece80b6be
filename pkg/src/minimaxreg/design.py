"""Data generation for the random- and fixed-design setups, plus verification
of the design assumptions (isotropy by construction, RIP for fixed design)."""

from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng

GAUSSIAN_RANDOM = "gaussian"
FIXED = "fixed"

SPARSE = "sparse"
DENSE = "dense"
SPIKE = "spike"
ZERO = "zero"

BINARY_MAGIC = b"MMRXDES1"


@dataclass(frozen=True)
class TargetSpec:
    kind: str
    s: int | None = None
    amplitude: float | None = None
    l1_norm: float | None = None

    @classmethod
    def sparse(cls, s: int, amplitude: float) -> "TargetSpec":
        if s < 1:
            raise ValueError("s must be positive")
        return cls(SPARSE, s=s, amplitude=float(amplitude))

    @classmethod
    def dense(cls, l1_norm: float) -> "TargetSpec":
        if l1_norm < 0:
            raise ValueError("l1_norm must be nonnegative")
        return cls(DENSE, l1_norm=float(l1_norm))

    @classmethod
    def spike(cls, l1_norm: float) -> "TargetSpec":
        if l1_norm < 0:
            raise ValueError("l1_norm must be nonnegative")
        return cls(SPIKE, l1_norm=float(l1_norm))

    @classmethod
    def zero(cls) -> "TargetSpec":
        return cls(ZERO)

    def requested_l1(self) -> float:
        if self.kind == SPARSE:
            return self.s * abs(self.amplitude)
        if self.kind in (DENSE, SPIKE):
            return self.l1_norm
        return 0.0


@dataclass
class ProblemConfig:
    n: int
    d: int
    sigma: float
    target: TargetSpec
    seed: int
    design_kind: str = GAUSSIAN_RANDOM
    fixed_source: "str | Path | np.ndarray | None" = None

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ValueError("N and d must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.design_kind not in (GAUSSIAN_RANDOM, FIXED):
            raise ValueError(f"unknown design kind {self.design_kind!r}")
        if self.design_kind == FIXED and self.fixed_source is None:
            raise ValueError("FIXED design requires a source")


def gen_target(spec: TargetSpec, d: int, seed: int) -> np.ndarray:
    g = rng.stream(seed, rng.TARGET)
    t = np.zeros(d)
    if spec.kind == ZERO:
        return t
    if spec.kind == SPARSE:
        if spec.s > d:
            raise ValueError("s must not exceed d")
        support = g.choice(d, size=spec.s, replace=False)
        signs = g.integers(0, 2, size=spec.s) * 2 - 1
        t[support] = spec.amplitude * signs
        return t
    if spec.kind == SPIKE:
        j = int(g.integers(0, d))
        t[j] = spec.l1_norm * (1 if g.integers(0, 2) else -1)
        return t
    if spec.kind == DENSE:
        v = g.standard_normal(d)
        l1 = np.abs(v).sum()
        if l1 == 0:
            v = np.ones(d)
            l1 = float(d)
        return v * (spec.l1_norm / l1)
    raise ValueError(f"unknown target kind {spec.kind!r}")


def load_fixed_design(source) -> np.ndarray:
    if isinstance(source, np.ndarray):
        X = np.asarray(source, dtype=float)
    else:
        path = Path(source)
        if not path.exists():
            raise FileNotFoundError(path)
        head = path.open("rb").read(len(BINARY_MAGIC))
        if head == BINARY_MAGIC:
            X = read_design_binary(path)
        else:
            X = np.loadtxt(path, delimiter=",", ndmin=2)
    if X.ndim != 2 or min(X.shape) < 1:
        raise ValueError("fixed design must be a nonempty matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("fixed design must be finite")
    return X


def read_design_binary(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != BINARY_MAGIC:
        raise ValueError("not a design binary (bad magic)")
    n, d = struct.unpack("<II", raw[8:16])
    body = np.frombuffer(raw[16:], dtype="<f8")
    if body.size != n * d:
        raise ValueError(f"design binary payload has {body.size} values, expected {n * d}")
    return body.reshape(n, d).astype(float)


def write_design_binary(path, X: np.ndarray):
    X = np.asarray(X, dtype=float)
    with Path(path).open("wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<II", X.shape[0], X.shape[1]))
        fh.write(X.astype("<f8").tobytes())


def gen_design(cfg: ProblemConfig) -> np.ndarray:
    """i.i.d. standard normal design from the counter-based stream, or a
    validated fixed matrix."""
    if cfg.design_kind == GAUSSIAN_RANDOM:
        return rng.gaussian_rows(cfg.seed, (rng.DESIGN,), cfg.n, cfg.d)
    X = load_fixed_design(cfg.fixed_source)
    if X.shape != (cfg.n, cfg.d):
        raise ValueError(f"fixed design has shape {X.shape}, expected {(cfg.n, cfg.d)}")
    return X


def gen_response(X: np.ndarray, t_star: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Y = X t* + sigma * xi with xi drawn from the noise lane, independent of
    the design stream."""
    X = np.asarray(X, dtype=float)
    t_star = np.asarray(t_star, dtype=float)
    if t_star.shape != (X.shape[1],):
        raise ValueError("t_star must match the number of design columns")
    xi = rng.stream(seed, rng.NOISE).standard_normal(X.shape[0])
    return X @ t_star + sigma * xi


@dataclass
class NormalizationReport:
    norms_before: np.ndarray
    scaled: np.ndarray           # boolean mask of rescaled columns
    n_scaled: int


def normalize_columns(X: np.ndarray) -> tuple[np.ndarray, NormalizationReport]:
    """Scale columns with l2 norm above 1 down to exactly 1; columns already
    inside the unit ball are left alone."""
    X = np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=0)
    if np.any(norms == 0.0):
        raise ValueError("zero column cannot be normalized")
    mask = norms > 1.0
    out = X.copy()
    out[:, mask] = X[:, mask] / norms[mask]
    return out, NormalizationReport(norms, mask, int(mask.sum()))


@dataclass
class RipReport:
    s: int
    supports_checked: int
    exhaustive: bool
    min_ratio: float
    max_ratio: float

    @property
    def passed(self) -> bool:
        return self.min_ratio >= 0.5 and self.max_ratio <= 1.5


def rip_sparsity(n: int, d: int) -> int:
    """Sparsity level of the restricted isometry assumption:
    s = N / log(ed/N) when N < d (requiring it to be at least 1), s = d when
    N >= d."""
    if n >= d:
        return d
    s = math.floor(n / math.log(math.e * d / n))
    if s < 1:
        raise ValueError(
            "N / log(ed/N) < 1: ultra-high dimensional regime is out of scope")
    return s


def rip_check(X: np.ndarray, budget: int, seed: int) -> RipReport:
    """Extreme singular values of X_S / sqrt(N) over supports S of size s.

    All supports are enumerated when there are at most `budget` of them,
    otherwise `budget` supports are sampled uniformly; the [1/2, 3/2] bounds
    must hold on every checked support."""
    X = np.asarray(X, dtype=float)
    if budget < 1:
        raise ValueError("budget must be positive")
    n, d = X.shape
    s = rip_sparsity(n, d)
    total = math.comb(d, s)
    exhaustive = total <= budget
    if exhaustive:
        supports = itertools.combinations(range(d), s)
        count = total
    else:
        g = rng.stream(seed, rng.RIP)
        supports = (g.choice(d, size=s, replace=False) for _ in range(budget))
        count = budget
    lo, hi = np.inf, 0.0
    scale = math.sqrt(n)
    for sup in supports:
        sv = np.linalg.svd(X[:, list(sup)] / scale, compute_uv=False)
        lo = min(lo, sv[-1])
        hi = max(hi, sv[0])
    return RipReport(s, count, exhaustive, float(lo), float(hi))
