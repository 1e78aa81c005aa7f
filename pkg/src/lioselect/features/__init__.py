from .descriptors import (DESCRIPTOR_DIM, DESCRIPTOR_NAMES, Descriptors, compute_descriptors,
                          descriptors_from_neighbors)
from .labels import (UniqueLabels, budget_count, constraint_vectors, label_salient,
                     label_unique, salient_window)
from .scorer import (FeatureScores, LabeledScan, ScorerModel, TrainConfig, TrainResult,
                     init_model, scorer_forward, scorer_gradient, scorer_logits, scorer_train)
from .selection import (loam_baseline, loam_budget_select, loam_smoothness, random_baseline,
                        select_points)

__all__ = [
    "DESCRIPTOR_DIM", "DESCRIPTOR_NAMES", "Descriptors", "compute_descriptors",
    "descriptors_from_neighbors", "UniqueLabels", "budget_count", "constraint_vectors",
    "label_salient", "label_unique", "salient_window", "FeatureScores", "LabeledScan",
    "ScorerModel", "TrainConfig", "TrainResult", "init_model", "scorer_forward",
    "scorer_gradient", "scorer_logits", "scorer_train", "loam_baseline", "loam_budget_select",
    "loam_smoothness", "random_baseline", "select_points",
]
