"""Evaluation metrics and data-centric explanation scores."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .models import EmptySubsetError, LabeledDataset, ModelState, penultimate_features, predict_confidence

_ENTROPY_CLAMP = 1e-12


class MissingSensitiveFeatureError(ValueError):
    """The model input carries no sensitive feature to toggle."""


def error_rate(state: ModelState, dataset: LabeledDataset) -> float:
    """Fraction misclassified at the 0.5 confidence threshold."""
    if len(dataset) == 0:
        raise EmptySubsetError("error rate over an empty set")
    preds = predict_confidence(state, dataset.features) >= 0.5
    return float(np.mean(preds != (dataset.labels >= 0.5)))


def robust_accuracy(state: ModelState, corrupted_sets: Sequence[LabeledDataset]) -> float:
    """Mean accuracy across the corrupted test sets."""
    if not corrupted_sets:
        raise EmptySubsetError("no corrupted test sets")
    return float(np.mean([1.0 - error_rate(state, ds) for ds in corrupted_sets]))


def _confidence_on_label(state: ModelState, features: np.ndarray, label: float) -> float:
    p = float(predict_confidence(state, np.atleast_2d(features))[0])
    return p if label >= 0.5 else 1.0 - p


def cf_gap(
    state: ModelState, features: np.ndarray, label: float, sensitive_index: int | None
) -> float:
    """Confidence change on the true label when the sensitive input feature is toggled."""
    if sensitive_index is None:
        raise MissingSensitiveFeatureError("dataset exposes no sensitive input feature")
    features = np.asarray(features, dtype=float)
    toggled = features.copy()
    toggled[sensitive_index] = 1.0 - toggled[sensitive_index]
    return abs(
        _confidence_on_label(state, features, label)
        - _confidence_on_label(state, toggled, label)
    )


def cf_gaps(state: ModelState, dataset: LabeledDataset) -> np.ndarray:
    return np.array(
        [
            cf_gap(state, dataset.features[i], dataset.labels[i], dataset.sensitive_index)
            for i in range(len(dataset))
        ]
    )


def uncertainty(state: ModelState, features: np.ndarray, label: float) -> float:
    """Predictive entropy -f ln f of the confidence on the target label."""
    f = max(_confidence_on_label(state, features, label), _ENTROPY_CLAMP)
    return float(-f * np.log(f))


def distinctiveness(
    point_features: np.ndarray,
    subset_features: np.ndarray,
    extractor: Callable[[np.ndarray], np.ndarray] | None = None,
) -> float:
    """Mean Euclidean distance from the point to each subset element in feature space."""
    subset_features = np.atleast_2d(subset_features)
    if len(subset_features) == 0:
        raise EmptySubsetError("distinctiveness against an empty subset")
    if extractor is not None:
        point_features = extractor(np.atleast_2d(point_features))[0]
        subset_features = extractor(subset_features)
    return float(np.mean(np.linalg.norm(subset_features - np.asarray(point_features), axis=1)))


def model_feature_extractor(state: ModelState) -> Callable[[np.ndarray], np.ndarray]:
    """Penultimate-layer features for the MLP, raw inputs otherwise."""
    return lambda x: penultimate_features(state, x)


@dataclass(frozen=True)
class ParetoPoint:
    lam: float
    metric_x: float
    metric_y: float


def pareto_frontier(points: Sequence[ParetoPoint]) -> list[ParetoPoint]:
    """Non-dominated subset under (min metric_x, min metric_y), sorted by metric_x."""
    kept = []
    for p in points:
        dominated = any(
            q.metric_x <= p.metric_x
            and q.metric_y <= p.metric_y
            and (q.metric_x < p.metric_x or q.metric_y < p.metric_y)
            for q in points
        )
        if not dominated:
            kept.append(p)
    return sorted(kept, key=lambda p: (p.metric_x, p.metric_y))


@dataclass
class MetricReport:
    """Named scalar metrics with run identifiers."""

    metrics: dict[str, float]
    dataset_id: str = ""
    model_id: str = ""
    seed: int = 0

    UNBOUNDED = ("entropy", "distinctiveness")

    def validate(self) -> None:
        for name, value in self.metrics.items():
            if value is None:
                continue
            if any(name.startswith(pref) for pref in self.UNBOUNDED):
                if value < 0:
                    raise ValueError(f"{name} must be >= 0")
            elif not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "metrics": dict(self.metrics),
            "dataset_id": self.dataset_id,
            "model_id": self.model_id,
            "seed": self.seed,
        }
