"""Corruption operators, label flipping, the robust-accuracy matrix and sampled augmentation.

Tabular corruption kinds (additive noise, masking, scaling, label flips)
stand in for image corruption suites. The sampling loop allocates
augmentation fractions from how much each corruption benefits from
self-trained augmentation, then iterates train/evaluate rounds until the
mean robust accuracy stops improving.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .models import LabeledDataset, ModelSpec, ModelState, SGDConfig, concat_datasets, train_on_subset
from .metrics import error_rate

GAUSSIAN_NOISE = "gaussian_noise"
FEATURE_MASK = "feature_mask"
FEATURE_SCALE = "feature_scale"
LABEL_FLIP = "label_flip"
CORRUPTION_NAMES = (GAUSSIAN_NOISE, FEATURE_MASK, FEATURE_SCALE, LABEL_FLIP)


class ZeroDiagonalError(ValueError):
    """A self-trained accuracy of zero makes the sampling ratio undefined."""


class AllZeroSamplingError(ValueError):
    """No augmentation carries positive sampling weight; the loop should stop."""


@dataclass(frozen=True)
class CorruptionKind:
    name: str
    severity: float

    def __post_init__(self):
        if self.name not in CORRUPTION_NAMES:
            raise ValueError(f"unknown corruption {self.name!r}")
        if self.severity < 0:
            raise ValueError("severity must be >= 0")


def apply_corruption(
    features: np.ndarray, label: float, kind: CorruptionKind, rng: np.random.Generator
) -> tuple[np.ndarray, float]:
    """Corrupt a single point. Feature kinds leave the label alone; label_flip toggles it."""
    features = np.asarray(features, dtype=float)
    if kind.name == LABEL_FLIP:
        return features.copy(), 1.0 - label
    if kind.name == GAUSSIAN_NOISE:
        return features + kind.severity * rng.standard_normal(features.shape), label
    if kind.name == FEATURE_MASK:
        keep = rng.random(features.shape) >= kind.severity
        return features * keep, label
    # feature_scale: multiplicative jitter in [1 - severity, 1 + severity]
    jitter = 1.0 + kind.severity * (2.0 * rng.random(features.shape) - 1.0)
    return features * jitter, label


def corrupt_dataset(
    dataset: LabeledDataset, kind: CorruptionKind, rng: np.random.Generator, tag: int = -1
) -> LabeledDataset:
    """Corrupt every row; for label_flip, severity is the flipped fraction."""
    if kind.name == LABEL_FLIP:
        flipped = label_flip_dataset(dataset, min(kind.severity, 1.0), rng)
        return LabeledDataset(
            flipped.features,
            flipped.labels,
            sensitive=flipped.sensitive,
            aug_tags=np.full(len(flipped), tag, dtype=int),
            sensitive_index=dataset.sensitive_index,
            feature_names=dataset.feature_names,
            label_name=dataset.label_name,
        )
    if kind.name == GAUSSIAN_NOISE:
        feats = dataset.features + kind.severity * rng.standard_normal(dataset.features.shape)
    elif kind.name == FEATURE_MASK:
        feats = dataset.features * (rng.random(dataset.features.shape) >= kind.severity)
    else:
        jitter = 1.0 + kind.severity * (2.0 * rng.random(dataset.features.shape) - 1.0)
        feats = dataset.features * jitter
    return LabeledDataset(
        feats,
        dataset.labels.copy(),
        sensitive=None if dataset.sensitive is None else dataset.sensitive.copy(),
        aug_tags=np.full(len(dataset), tag, dtype=int),
        sensitive_index=dataset.sensitive_index,
        feature_names=dataset.feature_names,
        label_name=dataset.label_name,
    )


def label_flip_dataset(
    dataset: LabeledDataset, fraction: float, rng: np.random.Generator
) -> LabeledDataset:
    """Toggle exactly floor(fraction * n) uniformly chosen binary labels."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    n = len(dataset)
    flips = int(np.floor(fraction * n))
    labels = dataset.labels.copy()
    if flips:
        idx = rng.choice(n, size=flips, replace=False)
        labels[idx] = 1.0 - labels[idx]
    return LabeledDataset(
        dataset.features.copy(),
        labels,
        sensitive=None if dataset.sensitive is None else dataset.sensitive.copy(),
        aug_tags=None if dataset.aug_tags is None else dataset.aug_tags.copy(),
        sensitive_index=dataset.sensitive_index,
        feature_names=dataset.feature_names,
        label_name=dataset.label_name,
    )


@dataclass
class CorruptionMatrix:
    """Robust accuracies: rows are models (row 0 clean-trained), columns corrupted test sets."""

    values: np.ndarray
    kinds: tuple[CorruptionKind, ...]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.kinds) + 1, len(self.kinds)):
            raise ValueError("matrix must be (|A|+1) x |A|")
        if ((self.values < 0) | (self.values > 1)).any():
            raise ValueError("accuracies must lie in [0, 1]")

    def self_accuracy(self, j: int) -> float:
        return float(self.values[j + 1, j])


@dataclass
class SamplingState:
    """Per-augmentation sampling numbers plus the round counter and RA history."""

    sampling_numbers: np.ndarray
    kinds: tuple[CorruptionKind, ...]
    round: int = 0
    mean_ra_history: list[float] = field(default_factory=list)


def _accuracy(state: ModelState, dataset: LabeledDataset) -> float:
    return 1.0 - error_rate(state, dataset)


def _corrupted_testsets(
    test: LabeledDataset, kinds: Sequence[CorruptionKind], seed: int
) -> list[LabeledDataset]:
    return [
        corrupt_dataset(test, kind, np.random.default_rng((seed, 7001, j)), tag=j)
        for j, kind in enumerate(kinds)
    ]


def build_corruption_matrix(
    train: LabeledDataset,
    test: LabeledDataset,
    kinds: Sequence[CorruptionKind],
    spec: ModelSpec,
    config: SGDConfig,
    seed: int = 0,
) -> CorruptionMatrix:
    """Train one clean model plus one per augmentation; evaluate all on each corrupted test set."""
    if not kinds:
        raise ValueError("need at least one corruption kind")
    testsets = _corrupted_testsets(test, kinds, seed)
    models = [train_on_subset(train, spec, config)]
    for j, kind in enumerate(kinds):
        extra = corrupt_dataset(train, kind, np.random.default_rng((seed, 7002, j)), tag=j)
        models.append(train_on_subset(concat_datasets([train, extra]), spec, config))
    values = np.array([[_accuracy(m, ts) for ts in testsets] for m in models])
    return CorruptionMatrix(values, tuple(kinds))


def sampling_number_init(mat: CorruptionMatrix) -> SamplingState:
    """Initial sampling numbers: self-trained accuracy margin over the other models, as a ratio."""
    n_aug = len(mat.kinds)
    sn = np.zeros(n_aug)
    for j in range(n_aug):
        diag = mat.self_accuracy(j)
        if diag <= 0.0:
            raise ZeroDiagonalError(f"self-trained accuracy for augmentation {j} is zero")
        others = np.delete(mat.values[:, j], j + 1)
        sn[j] = (diag - others.mean()) / diag
    state = SamplingState(sn, mat.kinds)
    state.mean_ra_history.append(float(mat.values[0].mean()))
    return state


def normalized_fractions(sampling_numbers: np.ndarray) -> np.ndarray:
    """Clamp negatives to zero and normalize to sum one."""
    clamped = np.clip(np.asarray(sampling_numbers, dtype=float), 0.0, None)
    total = clamped.sum()
    if total <= 0.0:
        raise AllZeroSamplingError("every sampling number is <= 0")
    return clamped / total


def sample_augmented_dataset(
    state: SamplingState, dataset: LabeledDataset, rng: np.random.Generator
) -> LabeledDataset:
    """Append per-kind corrupted samples to the clean data, class-uniformly per kind.

    Kind j receives its normalized sampling fraction of n points, split as
    evenly as possible across the label classes.
    """
    fractions = normalized_fractions(state.sampling_numbers)
    n = len(dataset)
    classes = np.unique(dataset.labels)
    parts = [dataset]
    for j, kind in enumerate(state.kinds):
        count = int(round(fractions[j] * n))
        if count == 0:
            continue
        base = count // len(classes)
        quotas = [base + (1 if c < count % len(classes) else 0) for c in range(len(classes))]
        chosen: list[np.ndarray] = []
        for cls, quota in zip(classes, quotas):
            pool = np.flatnonzero(dataset.labels == cls)
            if quota == 0 or len(pool) == 0:
                continue
            take = rng.choice(pool, size=quota, replace=quota > len(pool))
            chosen.append(take)
        if not chosen:
            continue
        idx = np.concatenate(chosen)
        sampled = dataset.subset(idx)
        parts.append(corrupt_dataset(sampled, kind, rng, tag=j))
    return concat_datasets(parts)


@dataclass
class RoundRecord:
    round: int
    mean_robust_accuracy: float
    standard_accuracy: float
    dataset_size: int

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "mean_robust_accuracy": self.mean_robust_accuracy,
            "standard_accuracy": self.standard_accuracy,
            "dataset_size": self.dataset_size,
        }


def saug_loop(
    train: LabeledDataset,
    test: LabeledDataset,
    kinds: Sequence[CorruptionKind],
    spec: ModelSpec,
    config: SGDConfig,
    epsilon: float,
    max_rounds: int = 10,
    seed: int = 0,
) -> tuple[LabeledDataset, list[RoundRecord]]:
    """Iterate sample -> train -> evaluate until mean robust accuracy stops improving.

    Round 0 is the clean-trained model. Each later round samples a fresh
    augmented dataset from the current sampling numbers, retrains, measures
    per-kind robust accuracy and updates the sampling numbers from the
    self-trained margins. Stops when the mean-RA gain drops below epsilon or
    after max_rounds rounds.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    mat = build_corruption_matrix(train, test, kinds, spec, config, seed=seed)
    state = sampling_number_init(mat)
    testsets = _corrupted_testsets(test, kinds, seed)
    clean_model = train_on_subset(train, spec, config)
    history = [
        RoundRecord(0, state.mean_ra_history[0], _accuracy(clean_model, test), len(train))
    ]
    current = train
    self_acc = np.array([mat.self_accuracy(j) for j in range(len(kinds))])
    prev_mean = history[0].mean_robust_accuracy
    for rnd in range(1, max_rounds + 1):
        rng = np.random.default_rng((seed, 7003, rnd))
        try:
            current = sample_augmented_dataset(state, train, rng)
        except AllZeroSamplingError:
            break
        model = train_on_subset(current, spec, config)
        ra = np.array([_accuracy(model, ts) for ts in testsets])
        mean_ra = float(ra.mean())
        history.append(RoundRecord(rnd, mean_ra, _accuracy(model, test), len(current)))
        state.sampling_numbers = self_acc - ra
        state.round = rnd
        state.mean_ra_history.append(mean_ra)
        if mean_ra - prev_mean < epsilon:
            break
        prev_mean = mean_ra
    return current, history
