"""Omnibus repeated-measures tests: one-way RM-ANOVA and Friedman."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .errors import InsufficientData, ZeroErrorVariance

# relative threshold below which a sum of squares counts as zero
_ZERO_SS = 1e-12


@dataclass(frozen=True)
class RepeatedMeasures:
    subject_ids: tuple
    values: np.ndarray  # n_subjects x k_conditions
    condition_labels: tuple

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("values must be a 2-d matrix")
        n, k = values.shape
        if n < 3:
            raise InsufficientData(f"need at least 3 complete subjects, got {n}")
        if k < 2:
            raise ValueError("need at least 2 conditions")
        if len(self.subject_ids) != n or len(self.condition_labels) != k:
            raise ValueError("subject_ids/condition_labels do not match the value matrix")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite (drop incomplete subjects first)")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "subject_ids", tuple(self.subject_ids))
        object.__setattr__(self, "condition_labels", tuple(self.condition_labels))

    @classmethod
    def from_matrix(cls, rows: Sequence[Sequence[float]], labels: Sequence = (12, 24, 36)) -> "RepeatedMeasures":
        values = np.asarray(rows, dtype=float)
        return cls(tuple(range(values.shape[0])), values, tuple(labels)[: values.shape[1]])

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class OmnibusResult:
    family: str  # "rm_anova" or "friedman"
    statistic: float
    effect: float
    df: tuple
    p_value: float


@dataclass(frozen=True)
class AnovaTable:
    ss_conditions: float
    ss_subjects: float
    ss_error: float
    ss_total: float
    df_conditions: int
    df_error: int

    @property
    def ms_error(self) -> float:
        return self.ss_error / self.df_error


def f_sf(x: float, d1: float, d2: float) -> float:
    """Upper tail of the F distribution via the regularized incomplete beta."""
    if x <= 0:
        return 1.0
    return float(special.betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x)))


def chi2_sf(x: float, df: float) -> float:
    if x <= 0:
        return 1.0
    return float(special.gammaincc(df / 2.0, x / 2.0))


def _values(data) -> np.ndarray:
    return data.values if isinstance(data, RepeatedMeasures) else np.asarray(data, dtype=float)


def anova_table(data) -> AnovaTable:
    """Sums of squares for a RepeatedMeasures or a plain subjects x conditions matrix."""
    x = _values(data)
    n, k = x.shape
    grand = x.mean()
    rows = x.mean(axis=1, keepdims=True)
    cols = x.mean(axis=0, keepdims=True)
    ss_cond = float(n * np.sum((cols - grand) ** 2))
    ss_subj = float(k * np.sum((rows - grand) ** 2))
    ss_err = float(np.sum((x - rows - cols + grand) ** 2))
    ss_tot = float(np.sum((x - grand) ** 2))
    return AnovaTable(ss_cond, ss_subj, ss_err, ss_tot, k - 1, (k - 1) * (n - 1))


def _is_zero(ss: float, ss_total: float) -> bool:
    return ss <= _ZERO_SS * max(ss_total, 1e-300)


def rm_anova(data) -> OmnibusResult:
    t = anova_table(data)
    df = (t.df_conditions, t.df_error)
    if _is_zero(t.ss_conditions, t.ss_total):
        return OmnibusResult("rm_anova", 0.0, 0.0, df, 1.0)
    if _is_zero(t.ss_error, t.ss_total):
        raise ZeroErrorVariance("error sum of squares is zero (perfectly additive data)")
    f = (t.ss_conditions / t.df_conditions) / (t.ss_error / t.df_error)
    eta = t.ss_conditions / (t.ss_conditions + t.ss_error)
    return OmnibusResult("rm_anova", f, eta, df, f_sf(f, *df))


def row_ranks(values: np.ndarray) -> np.ndarray:
    """Midranks within each row (1-based)."""
    values = np.asarray(values, dtype=float)
    ranks = np.empty_like(values)
    for i, row in enumerate(values):
        ranks[i] = midranks(row)
    return ranks


def midranks(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    order = np.argsort(a, kind="mergesort")
    sorted_a = a[order]
    ranks = np.empty(a.size)
    start = 0
    while start < a.size:
        stop = start
        while stop + 1 < a.size and sorted_a[stop + 1] == sorted_a[start]:
            stop += 1
        ranks[order[start: stop + 1]] = (start + stop) / 2.0 + 1.0
        start = stop + 1
    return ranks


def tie_sizes(a) -> np.ndarray:
    _, counts = np.unique(np.asarray(a, dtype=float), return_counts=True)
    return counts


def friedman(data: RepeatedMeasures) -> OmnibusResult:
    n, k = data.n, data.k
    ranks = row_ranks(data.values)
    rank_sums = ranks.sum(axis=0)
    chi2 = 12.0 / (n * k * (k + 1)) * float(np.sum(rank_sums**2)) - 3.0 * n * (k + 1)
    ties = sum(float(np.sum(t**3 - t)) for t in map(tie_sizes, data.values))
    correction = 1.0 - ties / (n * (k**3 - k))
    df = (k - 1,)
    if correction <= 0:
        # every subject tied across all conditions
        return OmnibusResult("friedman", 0.0, 0.0, df, 1.0)
    chi2 = max(0.0, chi2 / correction)
    kendall_w = min(1.0, chi2 / (n * (k - 1)))
    return OmnibusResult("friedman", chi2, kendall_w, df, chi2_sf(chi2, k - 1))
