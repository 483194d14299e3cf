"""Repeated-measures analysis of factor scores across the three stages."""
from .errors import (
    AllZeroDifferences,
    InsufficientData,
    SampleSizeOutOfRange,
    StatsError,
    ZeroErrorVariance,
    ZeroVariance,
)
from .normality import NormalityResult, shapiro_wilk
from .omnibus import OmnibusResult, RepeatedMeasures, friedman, rm_anova
from .pipeline import TRENDS, FactorAnalysis, analyze_factor, analyze_matrix, classify_trend, repeated_measures, stars
from .posthoc import (
    PairwiseComparison,
    bonferroni_adjust,
    studentized_range_isf,
    studentized_range_sf,
    tukey_hsd,
    wilcoxon_pairs,
    wilcoxon_signed_rank,
)

__all__ = [
    "AllZeroDifferences", "InsufficientData", "SampleSizeOutOfRange", "StatsError", "ZeroErrorVariance",
    "ZeroVariance", "NormalityResult", "shapiro_wilk", "OmnibusResult", "RepeatedMeasures", "friedman",
    "rm_anova", "TRENDS", "FactorAnalysis", "analyze_factor", "analyze_matrix", "classify_trend",
    "repeated_measures", "stars", "PairwiseComparison", "bonferroni_adjust", "studentized_range_isf",
    "studentized_range_sf", "tukey_hsd", "wilcoxon_pairs", "wilcoxon_signed_rank",
]
