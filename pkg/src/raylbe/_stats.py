"""Small statistical helpers shared by the estimators."""

import math

import numpy as np
from scipy import stats


def wilson_interval(k: int, n: int, conf: float = 0.95):
    if n == 0:
        return (0.0, 1.0)
    z = stats.norm.ppf(0.5 + conf / 2)
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return (float(max(0.0, mid - half)), float(min(1.0, mid + half)))


def jackknife_mean(x, blocks: int = 20):
    """Mean and blocked-jackknife standard error of the rows of x."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    mean = x.mean(axis=0)
    if n < 2:
        return mean, np.full_like(mean, np.nan)
    b = min(blocks, n)
    parts = np.array_split(np.arange(n), b)
    sums = np.array([x[idx].sum(axis=0) for idx in parts])
    sizes = np.array([len(idx) for idx in parts], dtype=float)
    total = sums.sum(axis=0)
    loo = (total - sums) / (n - sizes).reshape((-1,) + (1,) * (x.ndim - 1))
    se = np.sqrt((b - 1) / b * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return mean, se


def slope_ci(t, y, conf: float = 0.95):
    """Least-squares slope of y on t with a t-distribution confidence interval."""
    res = stats.linregress(t, y)
    q = stats.t.ppf(0.5 + conf / 2, len(t) - 2)
    return res.slope, (res.slope - q * res.stderr, res.slope + q * res.stderr)
