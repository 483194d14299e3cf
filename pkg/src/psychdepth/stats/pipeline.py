"""Per-factor analysis: normality gate, omnibus test, post-hoc pairs, trend."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InsufficientData, ZeroErrorVariance, ZeroVariance
from .normality import NormalityResult, shapiro_wilk
from .omnibus import OmnibusResult, RepeatedMeasures, friedman, rm_anova
from .posthoc import PairwiseComparison, stage_pairs, tukey_hsd, wilcoxon_pairs

TRENDS = ("stay", "up", "down", "random")
STAGE_LABELS = (12, 24, 36)


@dataclass(frozen=True)
class FactorAnalysis:
    factor_id: str
    questionnaire_id: str
    normality: Optional[NormalityResult]
    omnibus: OmnibusResult
    pairwise: tuple[PairwiseComparison, ...]
    trend: str
    alpha: float = 0.05
    n_subjects: int = 0
    stage_means: tuple = ()
    note: str = ""
    model_id: str = ""


def stars(p: Optional[float]) -> str:
    if p is None:
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def classify_trend(omnibus: OmnibusResult, pairwise: Sequence[PairwiseComparison], alpha: float = 0.05) -> str:
    if omnibus.p_value >= alpha:
        return "stay"
    significant = [c for c in pairwise if c.p_adjusted < alpha]
    if not significant:
        return "stay"
    if all(c.delta > 0 for c in significant):
        return "up"
    if all(c.delta < 0 for c in significant):
        return "down"
    return "random"


def repeated_measures(samples: Iterable, stages: Sequence[int] = (1, 2, 3)) -> RepeatedMeasures:
    """Stage-by-subject matrix; a subject is one (participant, repetition).

    Subjects missing any stage are dropped.
    """
    cells: dict = defaultdict(dict)
    for s in samples:
        cells[(s.participant_id, s.repetition)][s.stage] = s.value
    subjects = sorted(key for key, row in cells.items() if all(st in row for st in stages))
    if len(subjects) < 3:
        raise InsufficientData(f"only {len(subjects)} subjects have all stages; need at least 3")
    values = np.array([[cells[key][st] for st in stages] for key in subjects], dtype=float)
    labels = tuple(STAGE_LABELS[st - 1] if 1 <= st <= 3 else st for st in stages)
    return RepeatedMeasures(tuple(subjects), values, labels)


def _flat_pairs(data: RepeatedMeasures, alpha: float) -> tuple[PairwiseComparison, ...]:
    return tuple(
        PairwiseComparison((data.condition_labels[i], data.condition_labels[j]), 0.0, 0.0, 1.0, 1.0, False, "none")
        for i, j in stage_pairs(data.k)
    )


def analyze_matrix(
    data: RepeatedMeasures, alpha: float = 0.05, factor_id: str = "", questionnaire_id: str = ""
) -> FactorAnalysis:
    means = tuple(float(m) for m in data.values.mean(axis=0))
    common = dict(
        factor_id=factor_id, questionnaire_id=questionnaire_id, alpha=alpha, n_subjects=data.n, stage_means=means
    )
    pooled = data.values.ravel()
    try:
        normality = shapiro_wilk(pooled) if pooled.size <= 5000 else None
    except ZeroVariance:
        omnibus = OmnibusResult("friedman", 0.0, 0.0, (data.k - 1,), 1.0)
        return FactorAnalysis(
            normality=None, omnibus=omnibus, pairwise=_flat_pairs(data, alpha), trend="stay",
            note="zero variance", **common,
        )

    note = ""
    if normality is not None and normality.p_value >= alpha:
        try:
            omnibus = rm_anova(data)
            pairwise = tuple(tukey_hsd(data, alpha))
            trend = classify_trend(omnibus, pairwise, alpha)
            return FactorAnalysis(normality=normality, omnibus=omnibus, pairwise=pairwise, trend=trend, **common)
        except ZeroErrorVariance:
            note = "zero error variance; used rank-based tests"
    omnibus = friedman(data)
    pairwise = tuple(wilcoxon_pairs(data, alpha))
    trend = classify_trend(omnibus, pairwise, alpha)
    return FactorAnalysis(normality=normality, omnibus=omnibus, pairwise=pairwise, trend=trend, note=note, **common)


def analyze_factor(samples: Iterable, alpha: float = 0.05) -> FactorAnalysis:
    samples = list(samples)
    if not samples:
        raise InsufficientData("no samples")
    ids = {(s.questionnaire_id, s.factor_id) for s in samples}
    if len(ids) != 1:
        raise ValueError(f"samples mix several factors: {sorted(ids)}")
    questionnaire_id, factor_id = ids.pop()
    data = repeated_measures(samples)
    return analyze_matrix(data, alpha, factor_id, questionnaire_id)
