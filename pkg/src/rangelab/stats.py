"""Small estimation utilities used by every lab."""
from __future__ import annotations

import math

import numpy as np
from scipy import stats as sps


def wilson_interval(hits: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    """Binomial proportion interval that stays sane at zero or full counts."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    if not 0 <= hits <= trials:
        raise ValueError("hits outside [0, trials]")
    p = hits / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials))
    lo = 0.0 if hits == 0 else max(0.0, center - half)
    hi = 1.0 if hits == trials else min(1.0, center + half)
    return lo, hi


def moments_of(values: np.ndarray) -> tuple[int, float, float]:
    """(count, mean, sum of squared deviations) of a sample block."""
    values = np.asarray(values, dtype=np.float64)
    n = int(values.size)
    if n == 0:
        return 0, 0.0, 0.0
    mean = float(values.mean())
    m2 = float(np.sum((values - mean) ** 2))
    return n, mean, m2


def merge_moments(a: tuple[int, float, float], b: tuple[int, float, float]) -> tuple[int, float, float]:
    """Chan et al. pairwise merge; order-independent up to float association."""
    na, ma, sa = a
    nb, mb, sb = b
    if na == 0:
        return b
    if nb == 0:
        return a
    n = na + nb
    delta = mb - ma
    mean = ma + delta * (nb / n)
    m2 = sa + sb + delta * delta * (na * nb / n)
    return n, mean, m2


def stderr_of_moments(m: tuple[int, float, float]) -> float:
    n, _, m2 = m
    if n < 2:
        return 0.0
    return math.sqrt(m2 / (n - 1) / n)


def t_interval(values: np.ndarray, level: float = 0.95) -> tuple[float, float, float]:
    """(mean, lo, hi) Student-t interval over independent replications."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    mean = float(values.mean())
    if n < 2:
        return mean, mean, mean
    half = float(sps.t.ppf(0.5 + level / 2, n - 1) * values.std(ddof=1) / math.sqrt(n))
    return mean, mean - half, mean + half


def sample_skewness(values: np.ndarray) -> float:
    return float(sps.skew(np.asarray(values, dtype=np.float64)))
