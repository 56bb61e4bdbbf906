"""Two-sample distance estimators over feedback values and bootstrap envelopes.

All estimators are unbiased U-statistics where applicable, so values may be
negative; reports carry the raw value with no flooring at zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import wasserstein_distance

from .errors import EmptySampleError, PoolTooSmallError, TooFewSamplesError

BANDWIDTH_FLOOR = 1e-6


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "gaussian"  # "gaussian" | "linear"
    bandwidth: float | str = "median"  # positive float, or "median" heuristic

    def __post_init__(self):
        if self.kind not in ("gaussian", "linear"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if isinstance(self.bandwidth, str) and self.bandwidth != "median":
            raise ValueError(f"unknown bandwidth rule {self.bandwidth!r}")
        if isinstance(self.bandwidth, (int, float)) and self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")


@dataclass(frozen=True)
class MetricReport:
    d_hat: str  # "mmd" | "ed" | "emd"
    value: float
    n_world: int
    n_real: int
    bootstrap_mean: float | None = None
    bootstrap_q5: float | None = None
    bootstrap_q95: float | None = None


def _as_2d(xs) -> np.ndarray:
    a = np.asarray(xs, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError("samples must be scalars or vectors")
    return a


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def median_bandwidth(xs, ys) -> float:
    """Median pairwise Euclidean distance over the pooled samples."""
    pooled = np.concatenate([_as_2d(xs), _as_2d(ys)], axis=0)
    n = len(pooled)
    if n < 2:
        return BANDWIDTH_FLOOR
    d2 = _sq_dists(pooled, pooled)
    iu = np.triu_indices(n, k=1)
    med = float(np.median(np.sqrt(d2[iu])))
    return med if med > 0 else BANDWIDTH_FLOOR


def resolve_bandwidth(xs, ys, kernel: KernelSpec) -> float:
    if kernel.bandwidth == "median":
        return median_bandwidth(xs, ys)
    return float(kernel.bandwidth)


def _kernel_matrix(a: np.ndarray, b: np.ndarray, kernel: KernelSpec, sigma: float) -> np.ndarray:
    if kernel.kind == "linear":
        return a @ b.T
    return np.exp(-_sq_dists(a, b) / (2.0 * sigma * sigma))


def mmd_u(xs, ys, kernel: KernelSpec = KernelSpec()) -> float:
    """Unbiased MMD U-statistic: within-set terms skip the diagonal.

    The Gaussian kernel is exp(-||x-y||^2 / (2 sigma^2)).
    """
    a, b = _as_2d(xs), _as_2d(ys)
    n, m = len(a), len(b)
    if n < 2 or m < 2:
        raise TooFewSamplesError("mmd_u needs at least 2 samples per side")
    sigma = resolve_bandwidth(xs, ys, kernel)
    kxx = _kernel_matrix(a, a, kernel, sigma)
    kyy = _kernel_matrix(b, b, kernel, sigma)
    kxy = _kernel_matrix(a, b, kernel, sigma)
    term_x = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    term_y = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    term_xy = 2.0 * kxy.sum() / (n * m)
    return float(term_x - term_xy + term_y)


def energy_distance(xs, ys) -> float:
    """Squared-distance U-statistic; identical in shape to the MMD expression.

    Equals -2 * mmd_u with the linear kernel, which the tests cross-check.
    """
    a, b = _as_2d(xs), _as_2d(ys)
    n, m = len(a), len(b)
    if n < 2 or m < 2:
        raise TooFewSamplesError("energy_distance needs at least 2 samples per side")
    dxx = _sq_dists(a, a)
    dyy = _sq_dists(b, b)
    dxy = _sq_dists(a, b)
    term_x = (dxx.sum() - np.trace(dxx)) / (n * (n - 1))
    term_y = (dyy.sum() - np.trace(dyy)) / (m * (m - 1))
    term_xy = 2.0 * dxy.sum() / (n * m)
    return float(term_x - term_xy + term_y)


def emd_1d(xs, ys) -> float:
    """First Wasserstein distance between two scalar sample sets."""
    a = np.asarray(xs, dtype=float).ravel()
    b = np.asarray(ys, dtype=float).ravel()
    if len(a) == 0 or len(b) == 0:
        raise EmptySampleError("emd_1d needs nonempty sample sets")
    return float(wasserstein_distance(a, b))


_ESTIMATORS = {
    "mmd": lambda xs, ys, kernel: mmd_u(xs, ys, kernel),
    "ed": lambda xs, ys, kernel: energy_distance(xs, ys),
    "emd": lambda xs, ys, kernel: emd_1d(xs, ys),
}


def d_metric(
    world_feedbacks,
    real_feedbacks,
    d_hat: str = "mmd",
    kernel: KernelSpec = KernelSpec(),
) -> MetricReport:
    """Distance between the world-side and real-side feedback sample sets."""
    if d_hat not in _ESTIMATORS:
        raise ValueError(f"unknown estimator {d_hat!r}")
    world = np.asarray(world_feedbacks, dtype=float)
    real = np.asarray(real_feedbacks, dtype=float)
    if world.size == 0 or real.size == 0:
        raise EmptySampleError("both feedback sets must be nonempty")
    value = _ESTIMATORS[d_hat](world, real, kernel)
    return MetricReport(d_hat=d_hat, value=value, n_world=len(world), n_real=len(real))


DEFAULT_ENVELOPE_NS = (2, 3, 5, 7, 10, 20, 30, 40, 50)


@dataclass(frozen=True)
class EnvelopeRow:
    n: int
    mean: float
    q5: float
    q95: float


def bootstrap_envelope(
    pool_a,
    pool_b,
    ns=DEFAULT_ENVELOPE_NS,
    reps: int = 50,
    d_hat: str = "mmd",
    kernel: KernelSpec = KernelSpec(),
    seed: int = 0,
) -> list[EnvelopeRow]:
    """Subsample ``n`` from each pool without replacement, ``reps`` times per
    ``n``, and summarize the resulting distance values as mean and 5%/95%
    quantiles."""
    a = np.asarray(pool_a, dtype=float)
    b = np.asarray(pool_b, dtype=float)
    ns = sorted(set(int(n) for n in ns))
    if max(ns) > min(len(a), len(b)):
        raise PoolTooSmallError(
            f"pools of sizes {len(a)}/{len(b)} cannot supply subsamples of {max(ns)}"
        )
    rng = np.random.default_rng(seed)
    rows = []
    for n in ns:
        values = np.empty(reps)
        for r in range(reps):
            sub_a = a[rng.choice(len(a), size=n, replace=False)]
            sub_b = b[rng.choice(len(b), size=n, replace=False)]
            values[r] = _ESTIMATORS[d_hat](sub_a, sub_b, kernel)
        rows.append(
            EnvelopeRow(
                n=n,
                mean=float(values.mean()),
                q5=float(np.quantile(values, 0.05)),
                q95=float(np.quantile(values, 0.95)),
            )
        )
    return rows
