"""Evaluation metrics: correlations, error rates, classification, PCA, search."""

from .classify import (
    ClassificationReport,
    classification_report,
    confusion_matrix,
    micro_roc,
    slide_vote,
)
from .correlation import (
    GeneEvalRow,
    gene_correlation_table,
    pearson,
    rankdata_average,
    spearman,
)
from .multitest import adjust_pvalues, benjamini_hochberg, holm_sidak
from .pca import PCAProjection, mean_projection_per_slide, pca_project
from .regression import ErrorReport, prediction_errors
from .search import (
    SearchSubset,
    average_precision_at_k,
    build_search_subsets,
    pearson_distance_matrix,
    precision_at_k,
    search_eval,
)
from .special import betainc_reg, student_t_two_sided_p

__all__ = [
    "ClassificationReport",
    "ErrorReport",
    "GeneEvalRow",
    "PCAProjection",
    "SearchSubset",
    "adjust_pvalues",
    "average_precision_at_k",
    "benjamini_hochberg",
    "betainc_reg",
    "build_search_subsets",
    "classification_report",
    "confusion_matrix",
    "gene_correlation_table",
    "holm_sidak",
    "mean_projection_per_slide",
    "micro_roc",
    "pca_project",
    "pearson",
    "pearson_distance_matrix",
    "precision_at_k",
    "prediction_errors",
    "rankdata_average",
    "search_eval",
    "slide_vote",
    "spearman",
    "student_t_two_sided_p",
]
