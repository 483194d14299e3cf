"""Post-hoc pairwise comparisons between stages."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, special

from .errors import ZeroErrorVariance
from .omnibus import RepeatedMeasures, _is_zero, anova_table, midranks, tie_sizes

_NODES = 64


@dataclass(frozen=True)
class PairwiseComparison:
    pair: tuple  # (earlier label, later label)
    delta: float  # later minus earlier
    statistic: float
    p_raw: float
    p_adjusted: float
    significant: bool
    method: str = ""
    flagged: bool = False


def stage_pairs(k: int) -> list[tuple[int, int]]:
    """Index pairs, adjacent ones first: for k=3 that is (0,1), (1,2), (0,2)."""
    return sorted(((i, j) for i in range(k) for j in range(i + 1, k)), key=lambda p: (p[1] - p[0], p[0]))


@lru_cache(maxsize=1)
def _legendre():
    return np.polynomial.legendre.leggauss(_NODES)


def _gauss(lo: float, hi: float):
    x, w = _legendre()
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), half * w


def _log_s_density(s: np.ndarray, df: float) -> np.ndarray:
    """Log density of s = sqrt(chi2_df / df)."""
    return (
        math.log(2.0)
        + (df / 2.0) * math.log(df / 2.0)
        - special.gammaln(df / 2.0)
        + (df - 1.0) * np.log(s)
        - df * s * s / 2.0
    )


def _s_range(df: float, drop: float = 40.0) -> tuple[float, float]:
    """Interval outside which the s density is below exp(-drop) times its peak."""
    mode = math.sqrt((df - 1.0) / df) if df > 1 else 1e-12

    def excess(s):
        return float(_log_s_density(np.array([s]), df)[0] - peak + drop)

    peak = float(_log_s_density(np.array([mode]), df)[0])
    lo = optimize.brentq(excess, 1e-300, mode) if df > 1 and excess(1e-300) < 0 else 0.0
    hi = 2.0 * max(mode, 1.0)
    while excess(hi) > 0:
        hi *= 2.0
    return lo, optimize.brentq(excess, mode, hi)


def _range_sf_given_scale(w: np.ndarray, k: int) -> np.ndarray:
    """P(range of k iid N(0,1) > w) for each w, by Gauss-Legendre over z."""
    z, wz = _gauss(-8.5, 8.5)
    phi = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    big = special.ndtr(z)
    shifted = special.ndtr(z[None, :] - w[:, None])
    inner = big[None, :] ** (k - 1) - np.clip(big[None, :] - shifted, 0.0, None) ** (k - 1)
    return k * (inner * (phi * wz)[None, :]).sum(axis=1)


def studentized_range_sf(q: float, k: int, df: float) -> float:
    """Upper tail of the studentized range distribution with k means and df error df."""
    if q <= 0:
        return 1.0
    if k < 2 or df <= 0:
        raise ValueError("need k >= 2 and df > 0")
    lo, hi = _s_range(float(df))
    s, ws = _gauss(lo, hi)
    dens = np.exp(_log_s_density(s, float(df)))
    tail = _range_sf_given_scale(q * s, k)
    return float(min(1.0, max(0.0, np.sum(ws * dens * tail))))


def studentized_range_isf(p: float, k: int, df: float) -> float:
    """Critical value q with upper-tail probability p."""
    hi = 2.0
    while studentized_range_sf(hi, k, df) > p:
        hi *= 2.0
    return optimize.brentq(lambda q: studentized_range_sf(q, k, df) - p, 1e-9, hi, xtol=1e-10)


def tukey_hsd(data: RepeatedMeasures, alpha: float = 0.05) -> list[PairwiseComparison]:
    table = anova_table(data)
    means = data.values.mean(axis=0)
    k, n = data.k, data.n
    error_zero = _is_zero(table.ss_error, table.ss_total)
    se = math.sqrt(table.ms_error / n) if not error_zero else 0.0
    out = []
    for i, j in stage_pairs(k):
        delta = float(means[j] - means[i])
        if _is_zero(delta * delta, max(table.ss_total, 1e-300)) or delta == 0.0:
            q, p = 0.0, 1.0
        elif error_zero:
            raise ZeroErrorVariance("error mean square is zero; studentized range undefined")
        else:
            q = abs(delta) / se
            p = studentized_range_sf(q, k, table.df_error)
        labels = (data.condition_labels[i], data.condition_labels[j])
        out.append(PairwiseComparison(labels, delta, q, p, p, p < alpha, "tukey_hsd"))
    return out


def _exact_signed_rank_counts(doubled_ranks: Sequence[int]) -> np.ndarray:
    """counts[s] = number of sign assignments whose doubled positive-rank sum is s."""
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled_ranks:
        counts[r:] = counts[r:] + counts[: total + 1 - r].copy()
    return counts


def wilcoxon_signed_rank(
    x: Sequence[float],
    y: Sequence[float],
    exact_threshold: int = 25,
    alpha: float = 0.05,
    labels: tuple = ("x", "y"),
) -> PairwiseComparison:
    """Two-sided signed-rank test on y - x.

    ``delta`` is the signed standardized statistic (W+ - mean) / sd, so a
    positive value means y tends to exceed x.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d and of equal length")
    d = y - x
    d = d[d != 0]
    m = d.size
    if m == 0:
        return PairwiseComparison(labels, 0.0, 0.0, 1.0, 1.0, False, "wilcoxon", flagged=True)

    ranks = midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    mean = m * (m + 1) / 4.0
    ties = tie_sizes(np.abs(d))
    var = m * (m + 1) * (2 * m + 1) / 24.0 - float(np.sum(ties**3 - ties)) / 48.0
    sd = math.sqrt(var)
    z = (w_plus - mean) / sd

    if m <= exact_threshold:
        doubled = [int(round(2 * r)) for r in ranks]
        counts = _exact_signed_rank_counts(doubled)
        target = int(round(2 * w_plus))
        total = counts.sum()
        lower = counts[: target + 1].sum() / total
        upper = counts[target:].sum() / total
        p = min(1.0, 2.0 * min(lower, upper))
        method = "wilcoxon_exact"
    else:
        zc = max(0.0, abs(w_plus - mean) - 0.5) / sd
        p = min(1.0, float(special.erfc(zc / math.sqrt(2.0))))
        method = "wilcoxon_normal"
    return PairwiseComparison(labels, z, w_plus, p, p, p < alpha, method)


def bonferroni_adjust(p_values: Sequence[float], m: Optional[int] = None) -> list[float]:
    m = len(p_values) if m is None else m
    out = []
    for p in p_values:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p-value {p} outside [0, 1]")
        out.append(min(1.0, m * p))
    return out


def wilcoxon_pairs(data: RepeatedMeasures, alpha: float = 0.05, exact_threshold: int = 25) -> list[PairwiseComparison]:
    raw = []
    for i, j in stage_pairs(data.k):
        labels = (data.condition_labels[i], data.condition_labels[j])
        raw.append(
            wilcoxon_signed_rank(data.values[:, i], data.values[:, j], exact_threshold, alpha, labels)
        )
    adjusted = bonferroni_adjust([c.p_raw for c in raw])
    return [
        PairwiseComparison(c.pair, c.delta, c.statistic, c.p_raw, pa, pa < alpha, c.method, c.flagged)
        for c, pa in zip(raw, adjusted)
    ]
