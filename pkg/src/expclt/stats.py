"""Goodness-of-fit and rate-estimation statistics for the Monte Carlo suites.

The distributional claim under test is always one-dimensional: a scalar
projection of the normalized product against the centered normal with the
quadrature variance.  Accordingly this module provides exactly a normal CDF,
a one-sample Kolmogorov-Smirnov distance with the asymptotic critical value,
numerically stable sample moments, and log-log slope fits for the O(n^-a)
rate claims.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "normal_cdf",
    "ks_test",
    "KS_CRITICAL_01",
    "SampleStatistics",
    "summarize",
    "SlopeFit",
    "fit_slope",
]

# Asymptotic one-sample KS critical value at alpha = 0.01: c(alpha)/sqrt(N).
KS_CRITICAL_01 = 1.628

_CHUNK = 65536


def normal_cdf(z: float) -> float:
    """Standard normal CDF via the complementary error function."""
    return 0.5 * math.erfc(-float(z) / math.sqrt(2.0))


_erfc_vec = np.frompyfunc(math.erfc, 1, 1)


def _normal_cdf_array(z: np.ndarray) -> np.ndarray:
    return 0.5 * _erfc_vec(-z / math.sqrt(2.0)).astype(float)


def ks_test(samples, sigma2: float) -> tuple:
    """One-sample KS distance against N(0, sigma2), with the 1% threshold.

    Returns (distance, threshold) where threshold = 1.628/sqrt(N) is the
    asymptotic alpha = 0.01 critical value (the suites use N >= 5000, where
    the asymptotic regime error is negligible). sigma2 must be positive;
    the degenerate sigma2 = 0 case is a caller-side policy.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("ks_test needs at least one sample")
    if not sigma2 > 0.0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    n = x.size
    f = _normal_cdf_array(np.sort(x) / math.sqrt(sigma2))
    i = np.arange(1, n + 1, dtype=float)
    distance = max(float(np.max(i / n - f)), float(np.max(f - (i - 1.0) / n)))
    return distance, KS_CRITICAL_01 / math.sqrt(n)


@dataclass(frozen=True)
class SampleStatistics:
    """Empirical summary of one scalar Monte Carlo sample."""

    count: int
    mean: float
    variance: float  # unbiased
    skewness: float
    excess_kurtosis: float
    ks_distance: float  # vs N(0, sigma2_ref); NaN when sigma2_ref = 0
    min: float
    max: float


def _merge_moments(a, b):
    """Combine two (count, mean, M2, M3, M4) central-sum states."""
    na, ma, m2a, m3a, m4a = a
    nb, mb, m2b, m3b, m4b = b
    if na == 0:
        return b
    n = na + nb
    d = mb - ma
    d2 = d * d
    mean = ma + d * nb / n
    m2 = m2a + m2b + d2 * na * nb / n
    m3 = (
        m3a + m3b
        + d * d2 * na * nb * (na - nb) / (n * n)
        + 3.0 * d * (na * m2b - nb * m2a) / n
    )
    m4 = (
        m4a + m4b
        + d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
        + 6.0 * d2 * (na * na * m2b + nb * nb * m2a) / (n * n)
        + 4.0 * d * (na * m3b - nb * m3a) / n
    )
    return (n, mean, m2, m3, m4)


def summarize(samples, sigma2_ref: float) -> SampleStatistics:
    """Stable one-pass moments plus the KS distance against N(0, sigma2_ref).

    Chunks are reduced to central-moment sums and merged pairwise-stably;
    the reference variance is the exact quadrature value, so the KS distance
    tests the claimed limit law rather than the sampler against itself.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("summarize needs at least two samples")
    if sigma2_ref < 0.0:
        raise ValueError(f"sigma2_ref must be >= 0, got {sigma2_ref}")
    state = (0, 0.0, 0.0, 0.0, 0.0)
    for lo in range(0, x.size, _CHUNK):
        c = x[lo : lo + _CHUNK]
        m = float(np.mean(c))
        d = c - m
        d2 = d * d
        state = _merge_moments(
            state,
            (c.size, m, float(np.sum(d2)), float(np.sum(d2 * d)), float(np.sum(d2 * d2))),
        )
    n, mean, m2, m3, m4 = state
    variance = m2 / (n - 1)
    if m2 > 0.0:
        skew = math.sqrt(float(n)) * m3 / m2**1.5
        kurt = n * m4 / (m2 * m2) - 3.0
    else:
        skew = 0.0
        kurt = 0.0
    ks = ks_test(x, sigma2_ref)[0] if sigma2_ref > 0.0 else float("nan")
    return SampleStatistics(
        count=int(n),
        mean=mean,
        variance=variance,
        skewness=skew,
        excess_kurtosis=kurt,
        ks_distance=ks,
        min=float(np.min(x)),
        max=float(np.max(x)),
    )


@dataclass(frozen=True)
class SlopeFit:
    """OLS fit of log(value) against log(n) for a rate measurement."""

    slope: float
    intercept: float
    r_squared: float
    points: tuple  # the (log n, log value) pairs actually fitted
    excluded: int  # points dropped because value <= 0


def fit_slope(points) -> SlopeFit:
    """Least-squares slope on log-log axes over the positive-valued points.

    Zero or negative values cannot be logged; they are excluded and counted
    (an all-zero curve is the caller's exact-zero case, not a rate).
    """
    pts = list(points)
    kept = [(float(n), float(v)) for n, v in pts if v > 0.0]
    excluded = len(pts) - len(kept)
    if len(kept) < 3:
        raise ValueError(f"fit_slope needs >= 3 positive points, got {len(kept)}")
    lx = np.log([n for n, _ in kept])
    ly = np.log([v for _, v in kept])
    mx, my = np.mean(lx), np.mean(ly)
    sxx = float(np.sum((lx - mx) ** 2))
    sxy = float(np.sum((lx - mx) * (ly - my)))
    slope = sxy / sxx
    intercept = float(my - slope * mx)
    resid = ly - (slope * lx + intercept)
    syy = float(np.sum((ly - my) ** 2))
    r2 = 1.0 if syy == 0.0 else max(0.0, 1.0 - float(np.sum(resid**2)) / syy)
    return SlopeFit(
        slope=float(slope),
        intercept=intercept,
        r_squared=r2,
        points=tuple(zip(lx.tolist(), ly.tolist())),
        excluded=excluded,
    )
