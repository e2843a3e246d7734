"""Synthetic instance generators and CSV dataset ingestion.

Sparse-recovery instances use coherence-capped random unit columns so the
replacement dynamics of the online solver are exercised nontrivially. The
biased classification generator stands in for real tabular fairness data:
Gaussian class-conditional features plus a sensitive bit correlated with the
label at a chosen strength, exposed to the model as the last feature column.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .models import LabeledDataset

_MAX_REJECTIONS = 10_000


class RejectionExhaustedError(RuntimeError):
    """Coherence-capped column sampling gave up after too many rejections."""


class MissingColumnError(ValueError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"column {column!r} not found in header")


class NonNumericCellError(ValueError):
    def __init__(self, row: int, column: str):
        self.row = row
        self.column = column
        super().__init__(f"non-numeric cell at row {row}, column {column!r}")


class EmptyFileError(ValueError):
    """The CSV file has no header row."""


@dataclass(frozen=True)
class SparseInstance:
    """k-sparse target over N unit columns; columns[i] is the i-th feature vector."""

    columns: np.ndarray
    true_support: tuple[int, ...]
    true_coefficients: np.ndarray
    target: np.ndarray
    noise_sigma: float


def gen_sparse_instance(
    n_columns: int,
    dim: int,
    sparsity: int,
    noise_sigma: float,
    coherence_cap: float,
    seed: int,
) -> SparseInstance:
    """Draw unit columns, rejecting any pair with |inner product| above the cap.

    Support columns are drawn freely and combined with positive coefficients.
    Off-support columns live in the orthogonal complement of the support span
    except for a fixed negative component along the target direction, so in
    any mixed selection their least-squares coefficients stay negative. That
    keeps them inside the replacement rule's eviction regime; sign-symmetric
    off-support columns freeze the greedy state at positive-coefficient
    subsets it can never leave.
    """
    if sparsity > n_columns:
        raise ValueError("sparsity exceeds the number of columns")
    if not 0.0 < coherence_cap < 1.0:
        raise ValueError("coherence_cap must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    rejections = 0

    def draw(previous: np.ndarray, count: int, transform) -> np.ndarray:
        nonlocal rejections
        out = np.zeros((count, dim))
        accepted = 0
        while accepted < count:
            cand = transform(rng.standard_normal(dim))
            pool = np.concatenate([previous, out[:accepted]]) if accepted or len(previous) else out[:0]
            if len(pool) and np.max(np.abs(pool @ cand)) > coherence_cap:
                rejections += 1
                if rejections > _MAX_REJECTIONS:
                    raise RejectionExhaustedError(
                        f"gave up after {_MAX_REJECTIONS} rejections"
                    )
                continue
            out[accepted] = cand
            accepted += 1
        return out

    support = tuple(sorted(int(i) for i in rng.choice(n_columns, size=sparsity, replace=False)))
    support_cols = draw(np.zeros((0, dim)), sparsity, lambda v: v / np.linalg.norm(v))
    coeffs = rng.uniform(1.0, 2.0, sparsity)
    clean = coeffs @ support_cols if sparsity else np.zeros(dim)

    if sparsity:
        basis, _ = np.linalg.qr(support_cols.T)
        basis = basis[:, :sparsity]
        direction = clean / np.linalg.norm(clean)
        tilt = coherence_cap / 2.0

        def off_support(v: np.ndarray) -> np.ndarray:
            u = v - basis @ (basis.T @ v)
            u /= np.linalg.norm(u)
            return np.sqrt(1.0 - tilt**2) * u - tilt * direction

    else:

        def off_support(v: np.ndarray) -> np.ndarray:
            return v / np.linalg.norm(v)

    others = draw(support_cols, n_columns - sparsity, off_support)
    columns = np.zeros((n_columns, dim))
    other_pos = 0
    for j in range(n_columns):
        if j in support:
            columns[j] = support_cols[support.index(j)]
        else:
            columns[j] = others[other_pos]
            other_pos += 1
    target = clean
    if noise_sigma > 0:
        target = target + noise_sigma * rng.standard_normal(dim)
    return SparseInstance(columns, support, coeffs, np.asarray(target, dtype=float), noise_sigma)


@dataclass(frozen=True)
class BiasedClassificationSpec:
    n: int
    input_dim: int
    bias_strength: float
    class_balance: float = 0.5
    seed: int = 0
    class_separation: float = 1.0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.input_dim < 2:
            raise ValueError("input_dim must be >= 2 (one column is the sensitive bit)")
        if self.bias_strength < 0:
            raise ValueError("bias_strength must be >= 0")
        if not 0.0 < self.class_balance < 1.0:
            raise ValueError("class_balance must lie in (0, 1)")


def gen_biased_classification(
    spec: BiasedClassificationSpec,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Generate a labeled dataset and its 80/20 validation split.

    z agrees with the label with probability (1 + bias_strength) / 2, so
    bias 0 makes them independent and bias 1 makes them identical. z is the
    last feature column, so models can exploit the correlation.
    """
    rng = np.random.default_rng(spec.seed)
    y = (rng.random(spec.n) < spec.class_balance).astype(float)
    agree = rng.random(spec.n) < (1.0 + spec.bias_strength) / 2.0
    z = np.where(agree, y, 1.0 - y).astype(int)
    base = rng.standard_normal((spec.n, spec.input_dim - 1))
    base[:, 0] += (2.0 * y - 1.0) * spec.class_separation
    features = np.concatenate([base, z[:, None].astype(float)], axis=1)
    names = tuple(f"f{j}" for j in range(spec.input_dim - 1)) + ("z",)
    perm = rng.permutation(spec.n)
    cut = int(round(0.8 * spec.n))
    train_idx, val_idx = perm[:cut], perm[cut:]
    full = LabeledDataset(
        features,
        y,
        sensitive=z,
        sensitive_index=spec.input_dim - 1,
        feature_names=names,
    )
    return full.subset(train_idx), full.subset(val_idx)


def load_csv(
    path: str | Path, label_column: str, sensitive_column: str | None = None
) -> LabeledDataset:
    """Load a headered numeric CSV; every non-label column becomes a feature.

    The sensitive column, when named, stays among the features and its index
    is recorded so counterfactual toggles reach the model input.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFileError(f"{path} has no header row") from None
        rows = list(reader)
    if label_column not in header:
        raise MissingColumnError(label_column)
    if sensitive_column is not None and sensitive_column not in header:
        raise MissingColumnError(sensitive_column)
    label_pos = header.index(label_column)
    feature_cols = [j for j, name in enumerate(header) if j != label_pos]
    values = np.zeros((len(rows), len(header)))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ValueError(f"row {i} has {len(row)} cells, header has {len(header)}")
        for j, cell in enumerate(row):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise NonNumericCellError(i, header[j]) from None
    features = values[:, feature_cols]
    labels = values[:, label_pos]
    sensitive = None
    sensitive_index = None
    if sensitive_column is not None:
        sensitive_index = [header[j] for j in feature_cols].index(sensitive_column)
        sensitive = features[:, sensitive_index]
        if not np.isin(sensitive, (0.0, 1.0)).all():
            raise ValueError(f"sensitive column {sensitive_column!r} must be binary 0/1")
        sensitive = sensitive.astype(int)
    return LabeledDataset(
        features,
        labels,
        sensitive=sensitive,
        sensitive_index=sensitive_index,
        feature_names=tuple(header[j] for j in feature_cols),
        label_name=label_column,
    )


def save_csv(dataset: LabeledDataset, path: str | Path) -> None:
    """Write features plus label with shortest round-tripping float reprs."""
    path = Path(path)
    names = dataset.feature_names or tuple(f"f{j}" for j in range(dataset.input_dim))
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(names) + [dataset.label_name])
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.features[i]]
            row.append(repr(float(dataset.labels[i])))
            writer.writerow(row)
