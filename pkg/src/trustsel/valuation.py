"""Per-step incremental values, gradient-product feature columns and composite targets.

A selection run approximates a cumulative per-epoch target vector by a
weighted subset of per-step feature columns. The target coordinates are
grouped into labeled blocks (accuracy / fairness / robustness) so that two
value families can be blended with a single tradeoff weight.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .models import (
    EmptyGroupError,
    EmptySubsetError,
    GradientBundle,
    LabeledDataset,
    ModelState,
    group_loss,
    per_point_losses,
    predict_confidence,
)

ACCURACY = "accuracy"
FAIRNESS = "fairness"
ROBUSTNESS = "robustness"

# valid orderings of the two active block families
PAIRINGS = {
    "af": (ACCURACY, FAIRNESS),
    "ar": (ACCURACY, ROBUSTNESS),
    "rf": (ROBUSTNESS, FAIRNESS),
}

Layout = tuple[tuple[str, int], ...]


class LayoutMismatchError(ValueError):
    """Raised when vectors with incompatible block layouts are combined."""


def _check_layout(values: np.ndarray, layout: Layout) -> None:
    total = sum(size for _, size in layout)
    if total != len(values):
        raise LayoutMismatchError(
            f"layout covers {total} coordinates but vector has {len(values)}"
        )


@dataclass(frozen=True)
class ValueTarget:
    """Cumulative composite target vector with labeled coordinate blocks."""

    values: np.ndarray
    layout: Layout
    lam: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        _check_layout(self.values, self.layout)
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")

    @classmethod
    def plain(cls, values: np.ndarray) -> "ValueTarget":
        """Single accuracy block covering the whole vector; handy for solver-only use."""
        values = np.asarray(values, dtype=float)
        return cls(values, ((ACCURACY, len(values)),), 1.0)

    @property
    def dim(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class IncrementalValue:
    """One SGD step's contribution to the target, with the same block layout."""

    values: np.ndarray
    layout: Layout
    source: tuple[int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        _check_layout(self.values, self.layout)


def incremental_value_exact(
    state_before: ModelState, state_after: ModelState, valset: LabeledDataset
) -> np.ndarray:
    """Per-validation-point loss decrease across one update (positive = improvement)."""
    if len(valset) == 0:
        raise EmptySubsetError("empty validation set")
    before = per_point_losses(state_before, valset.features, valset.labels)
    after = per_point_losses(state_after, valset.features, valset.labels)
    return before - after


def taylor_feature(bundle: GradientBundle, step_size: float | None = None) -> np.ndarray:
    """Gradient-product feature column over the validation points.

    Coordinate j is a + a**2/2 with a the inner product of the training
    gradient and validation gradient j. With ``step_size`` given, the
    quadratic term is scaled by it, making step_size * column a
    second-order-accurate estimate of the per-point loss decrease.
    """
    if bundle.val_gradients is None:
        raise ValueError("bundle carries no validation gradients")
    a = bundle.val_gradients @ bundle.train_gradient
    if step_size is None:
        return a + 0.5 * a**2
    return a + 0.5 * step_size * a**2


def eo_disparity(state: ModelState, valset: LabeledDataset) -> float:
    """Max absolute mean-loss gap between sensitive groups, conditioned on the label."""
    gaps = []
    for yv in (0, 1):
        l0 = group_loss(state, valset, yv, 0)
        l1 = group_loss(state, valset, yv, 1)
        gaps.append(abs(l0 - l1))
    return float(max(gaps))


def dp_disparity(state: ModelState, valset: LabeledDataset) -> float:
    """Absolute gap in positive-prediction rates between the sensitive groups."""
    if valset.sensitive is None:
        raise EmptyGroupError(None, 0)
    rates = []
    for zv in (0, 1):
        mask = valset.sensitive == zv
        if not mask.any():
            raise EmptyGroupError(None, zv)
        preds = predict_confidence(state, valset.features[mask]) >= 0.5
        rates.append(float(np.mean(preds)))
    return abs(rates[0] - rates[1])


def fairness_increment(
    state_before: ModelState, state_after: ModelState, valset: LabeledDataset
) -> np.ndarray:
    """Single-coordinate disparity decrease across one update (positive = fairer)."""
    return np.array([eo_disparity(state_before, valset) - eo_disparity(state_after, valset)])


def robustness_increment(
    state_before: ModelState, state_after: ModelState, aug_valset: LabeledDataset
) -> np.ndarray:
    """Per-augmented-point loss decrease, same convention as the accuracy block."""
    return incremental_value_exact(state_before, state_after, aug_valset)


def compose_target(
    blocks: Sequence[tuple[str, np.ndarray]],
    lam: float,
    source: tuple[int, int] | None = None,
) -> IncrementalValue:
    """Blend exactly two labeled blocks: the first scaled by lam, the second by 1-lam."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    if len(blocks) != 2:
        raise ValueError("exactly two block families must be active")
    kinds = (blocks[0][0], blocks[1][0])
    if kinds not in PAIRINGS.values():
        raise ValueError(f"unsupported block pairing {kinds}")
    first = np.asarray(blocks[0][1], dtype=float)
    second = np.asarray(blocks[1][1], dtype=float)
    layout = ((kinds[0], len(first)), (kinds[1], len(second)))
    values = np.concatenate([lam * first, (1.0 - lam) * second])
    return IncrementalValue(values, layout, source)


def cumulative_target(increments: Iterable[IncrementalValue], lam: float = 1.0) -> ValueTarget:
    """Coordinate-wise running sum of layout-compatible increments."""
    total = None
    layout: Layout | None = None
    for inc in increments:
        if total is None:
            total = inc.values.copy()
            layout = inc.layout
        else:
            if inc.layout != layout:
                raise LayoutMismatchError("increment layouts differ")
            total += inc.values
    if total is None:
        raise EmptySubsetError("no increments to accumulate")
    return ValueTarget(total, layout, lam)
