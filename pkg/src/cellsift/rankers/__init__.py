"""Feature-importance models and threshold-based selection.

Three rankers produce per-feature importance scores from pooled features:
multinomial logistic regression (|coefficients|), a random forest
(impurity decrease), and one-vs-rest gradient boosting (split gain). Each
has its own threshold rule; an all-selection passthrough keeps every
feature for comparison runs.
"""

from .selection import (
    SelectionMethod,
    SelectionRule,
    ImportanceRanking,
    average_importance_across_classes,
    apply_selection,
    project_features,
    write_ranking_csv,
    score_distribution,
)
from .logreg import LogisticRegressionModel, train_logreg
from .forest import RandomForestModel, train_random_forest
from .boosting import GradientBoostingModel, train_gradient_boosting

import numpy as np

from ..tensors import Dataset

__all__ = [
    "SelectionMethod",
    "SelectionRule",
    "ImportanceRanking",
    "average_importance_across_classes",
    "apply_selection",
    "project_features",
    "write_ranking_csv",
    "score_distribution",
    "LogisticRegressionModel",
    "train_logreg",
    "RandomForestModel",
    "train_random_forest",
    "GradientBoostingModel",
    "train_gradient_boosting",
    "rank_features",
]


def rank_features(data: Dataset, method: SelectionMethod, seed: int = 0) -> np.ndarray:
    """Train the requested ranker and return its importance scores."""
    method = SelectionMethod(method)
    if method == SelectionMethod.LOGREG:
        model = train_logreg(data)
        return average_importance_across_classes(model.coef)
    if method == SelectionMethod.FOREST:
        return train_random_forest(data, seed=seed).importances
    if method == SelectionMethod.BOOSTING:
        return train_gradient_boosting(data).importances
    # All selection: no model, uniform scores, nothing filtered.
    return np.ones(data.features.embed_dim)
