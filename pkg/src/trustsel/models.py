"""Small differentiable models with per-point SGD, gradient access and trajectory hooks.

Three model kinds are supported: plain linear regression, logistic
regression, and a one-hidden-layer tanh MLP with sigmoid output. All
gradients are analytic and vectorized; training is strictly sequential
(batch size 1) so that the order of updates is semantics-bearing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

LINEAR = "linear"
LOGISTIC = "logistic"
MLP = "mlp"
MODEL_KINDS = (LINEAR, LOGISTIC, MLP)

HALF_SQUARED = "half_squared"
CROSS_ENTROPY = "cross_entropy"
LOSS_KINDS = (HALF_SQUARED, CROSS_ENTROPY)

_PROB_CLAMP = 1e-12


class EmptySubsetError(ValueError):
    """Raised when an operation requires at least one datapoint."""


class EmptyGroupError(ValueError):
    """Raised when a (label, sensitive) group has no members."""

    def __init__(self, y_value, z_value):
        self.y_value = y_value
        self.z_value = z_value
        y_txt = "*" if y_value is None else str(int(y_value))
        super().__init__(f"empty group (y={y_txt}, z={int(z_value)})")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture and loss of a small differentiable model."""

    kind: str
    input_dim: int
    loss: str = CROSS_ENTROPY
    hidden_width: int | None = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.kind == MLP:
            if self.hidden_width is None or self.hidden_width < 1:
                raise ValueError("mlp requires hidden_width >= 1")
        if self.kind == LINEAR and self.loss == CROSS_ENTROPY:
            raise ValueError("cross_entropy needs a probability output; use logistic or mlp")

    @property
    def param_count(self) -> int:
        if self.kind == MLP:
            h, d = self.hidden_width, self.input_dim
            return h * d + h + h + 1
        return self.input_dim


@dataclass
class ModelState:
    """Flat parameter vector plus its spec. Treated as immutable by convention."""

    params: np.ndarray
    spec: ModelSpec

    def copy(self) -> "ModelState":
        return ModelState(self.params.copy(), self.spec)


@dataclass
class SGDConfig:
    """Per-point SGD settings. learning_rate may be a constant or epoch -> rate."""

    learning_rate: float | Callable[[int], float]
    epochs: int
    seed: int = 0
    shuffle: bool = False

    def rate_for(self, epoch: int) -> float:
        lr = self.learning_rate(epoch) if callable(self.learning_rate) else self.learning_rate
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        return float(lr)


@dataclass
class LabeledDataset:
    """Feature matrix with labels and optional sensitive/augmentation columns.

    ``sensitive_index`` records which feature column (if any) carries the
    sensitive attribute, so counterfactual toggling can reach the model input.
    """

    features: np.ndarray
    labels: np.ndarray
    sensitive: np.ndarray | None = None
    aug_tags: np.ndarray | None = None
    sensitive_index: int | None = None
    feature_names: tuple[str, ...] | None = None
    label_name: str = "label"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        if self.features.ndim != 2:
            raise ValueError("features must be 2-D")
        if len(self.labels) != len(self.features):
            raise ValueError("labels and features disagree on length")
        if self.sensitive is not None:
            self.sensitive = np.asarray(self.sensitive, dtype=int)
            if len(self.sensitive) != len(self.features):
                raise ValueError("sensitive and features disagree on length")
        if self.aug_tags is not None:
            self.aug_tags = np.asarray(self.aug_tags, dtype=int)

    def __len__(self) -> int:
        return len(self.features)

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=int)
        return LabeledDataset(
            features=self.features[idx],
            labels=self.labels[idx],
            sensitive=None if self.sensitive is None else self.sensitive[idx],
            aug_tags=None if self.aug_tags is None else self.aug_tags[idx],
            sensitive_index=self.sensitive_index,
            feature_names=self.feature_names,
            label_name=self.label_name,
        )


def concat_datasets(parts: Sequence[LabeledDataset]) -> LabeledDataset:
    if not parts:
        raise EmptySubsetError("nothing to concatenate")
    first = parts[0]
    has_sens = all(p.sensitive is not None for p in parts)
    tags = []
    for p in parts:
        tags.append(p.aug_tags if p.aug_tags is not None else np.full(len(p), -1, dtype=int))
    return LabeledDataset(
        features=np.concatenate([p.features for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
        sensitive=np.concatenate([p.sensitive for p in parts]) if has_sens else None,
        aug_tags=np.concatenate(tags),
        sensitive_index=first.sensitive_index,
        feature_names=first.feature_names,
        label_name=first.label_name,
    )


# ---------------------------------------------------------------------------
# forward / backward passes
# ---------------------------------------------------------------------------


def _sigmoid(s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    es = np.exp(s[~pos])
    out[~pos] = es / (1.0 + es)
    return out


def _unpack_mlp(spec: ModelSpec, params: np.ndarray):
    h, d = spec.hidden_width, spec.input_dim
    w1 = params[: h * d].reshape(h, d)
    b1 = params[h * d : h * d + h]
    w2 = params[h * d + h : h * d + 2 * h]
    b2 = params[-1]
    return w1, b1, w2, b2


def _raw_scores(state: ModelState, x: np.ndarray) -> np.ndarray:
    spec = state.spec
    if spec.kind in (LINEAR, LOGISTIC):
        return x @ state.params
    w1, b1, w2, b2 = _unpack_mlp(spec, state.params)
    hidden = np.tanh(x @ w1.T + b1)
    return hidden @ w2 + b2


def predict_confidence(state: ModelState, x: np.ndarray) -> np.ndarray:
    """Model output interpreted as P(y=1); raw score clipped to [0,1] for linear."""
    s = _raw_scores(state, np.atleast_2d(x))
    if state.spec.kind == LINEAR:
        return np.clip(s, 0.0, 1.0)
    return _sigmoid(s)


def penultimate_features(state: ModelState, x: np.ndarray) -> np.ndarray:
    """Hidden-layer activations for the MLP; raw inputs otherwise."""
    x = np.atleast_2d(x)
    if state.spec.kind != MLP:
        return x
    w1, b1, _, _ = _unpack_mlp(state.spec, state.params)
    return np.tanh(x @ w1.T + b1)


def per_point_losses(state: ModelState, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    spec = state.spec
    x = np.atleast_2d(x)
    y = np.atleast_1d(y)
    s = _raw_scores(state, x)
    if spec.loss == HALF_SQUARED:
        out = s if spec.kind == LINEAR else _sigmoid(s)
        return 0.5 * (out - y) ** 2
    p = np.clip(_sigmoid(s), _PROB_CLAMP, 1.0 - _PROB_CLAMP)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def loss(state: ModelState, dataset: LabeledDataset) -> float:
    """Mean loss over a dataset."""
    if len(dataset) == 0:
        raise EmptySubsetError("loss over an empty subset")
    return float(np.mean(per_point_losses(state, dataset.features, dataset.labels)))


def per_point_grads(state: ModelState, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Analytic gradient of the loss at each row; shape (m, param_count)."""
    spec = state.spec
    x = np.atleast_2d(x)
    y = np.atleast_1d(y)
    if spec.kind in (LINEAR, LOGISTIC):
        s = x @ state.params
        if spec.kind == LINEAR:
            dl_ds = s - y
        else:
            f = _sigmoid(s)
            dl_ds = (f - y) if spec.loss == CROSS_ENTROPY else (f - y) * f * (1.0 - f)
        return dl_ds[:, None] * x
    w1, b1, w2, _ = _unpack_mlp(spec, state.params)
    a = x @ w1.T + b1
    hidden = np.tanh(a)
    m_out = hidden @ w2 + state.params[-1]
    f = _sigmoid(m_out)
    dl_dm = (f - y) if spec.loss == CROSS_ENTROPY else (f - y) * f * (1.0 - f)
    d_hidden = dl_dm[:, None] * w2[None, :]
    d_a = d_hidden * (1.0 - hidden**2)
    d_w1 = d_a[:, :, None] * x[:, None, :]
    m = x.shape[0]
    return np.concatenate(
        [d_w1.reshape(m, -1), d_a, dl_dm[:, None] * hidden, dl_dm[:, None]], axis=1
    )


def grad(state: ModelState, dataset: LabeledDataset) -> np.ndarray:
    """Gradient of the mean loss over a dataset."""
    if len(dataset) == 0:
        raise EmptySubsetError("grad over an empty subset")
    return per_point_grads(state, dataset.features, dataset.labels).mean(axis=0)


def mean_grad(state: ModelState, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return per_point_grads(state, x, y).mean(axis=0)


def sgd_step(state: ModelState, x: np.ndarray, y: float, rate: float) -> ModelState:
    """One SGD update on a single point; returns a fresh state."""
    g = per_point_grads(state, np.atleast_2d(x), np.atleast_1d(y))[0]
    return ModelState(state.params - rate * g, state.spec)


def group_loss(state: ModelState, dataset: LabeledDataset, y_value: int, z_value: int) -> float:
    """Mean loss restricted to the (y, z) group."""
    if dataset.sensitive is None:
        raise EmptyGroupError(y_value, z_value)
    mask = (dataset.labels == y_value) & (dataset.sensitive == z_value)
    if not mask.any():
        raise EmptyGroupError(y_value, z_value)
    return float(np.mean(per_point_losses(state, dataset.features[mask], dataset.labels[mask])))


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------


@dataclass
class GradientBundle:
    """Gradients evaluated at one pre-update state.

    ``train_gradient`` is the gradient on the training point about to be
    stepped on; ``val_gradients`` has one row per validation point. Group
    gradients are only filled on request.
    """

    train_gradient: np.ndarray
    val_gradients: np.ndarray | None = None
    group_gradients: dict[tuple[int, int], np.ndarray] | None = None


class TrajectoryHook(Protocol):
    def before_step(self, epoch: int, index: int, bundle: GradientBundle, state_before: ModelState) -> None: ...

    def after_step(self, epoch: int, index: int, state_after: ModelState) -> None: ...


def init_state(spec: ModelSpec, seed: int) -> ModelState:
    """Zeros for linear/logistic; seeded uniform(-0.1, 0.1) for the MLP."""
    if spec.kind == MLP:
        rng = np.random.default_rng(seed)
        params = rng.uniform(-0.1, 0.1, spec.param_count)
    else:
        params = np.zeros(spec.param_count)
    return ModelState(params, spec)


def train_full(
    dataset: LabeledDataset,
    valset: LabeledDataset | None,
    spec: ModelSpec,
    config: SGDConfig,
    hook: TrajectoryHook | None = None,
    collect_group_gradients: bool = False,
) -> tuple[ModelState, list[tuple[int, int]]]:
    """Run per-point SGD for config.epochs epochs, invoking the hook around each step.

    Returns the final state and the ordered (epoch, index) emission list;
    every point appears exactly once per epoch.
    """
    if len(dataset) == 0:
        raise EmptySubsetError("cannot train on an empty dataset")
    if dataset.input_dim != spec.input_dim:
        raise ValueError("dataset dimensionality disagrees with the model spec")
    state = init_state(spec, config.seed)
    order_rng = np.random.default_rng(config.seed)
    emissions: list[tuple[int, int]] = []
    n = len(dataset)
    for epoch in range(1, config.epochs + 1):
        rate = config.rate_for(epoch)
        order = order_rng.permutation(n) if config.shuffle else np.arange(n)
        for index in order:
            index = int(index)
            x = dataset.features[index]
            y = dataset.labels[index]
            g = per_point_grads(state, x[None, :], np.array([y]))[0]
            if hook is not None:
                bundle = GradientBundle(train_gradient=g)
                if valset is not None:
                    bundle.val_gradients = per_point_grads(state, valset.features, valset.labels)
                    if collect_group_gradients and valset.sensitive is not None:
                        bundle.group_gradients = {}
                        for yv in (0, 1):
                            for zv in (0, 1):
                                mask = (valset.labels == yv) & (valset.sensitive == zv)
                                if mask.any():
                                    bundle.group_gradients[(yv, zv)] = per_point_grads(
                                        state, valset.features[mask], valset.labels[mask]
                                    ).mean(axis=0)
                hook.before_step(epoch, index, bundle, state)
            state = ModelState(state.params - rate * g, state.spec)
            if hook is not None:
                hook.after_step(epoch, index, state)
            emissions.append((epoch, index))
    return state, emissions


def train_on_subset(subset: LabeledDataset, spec: ModelSpec, config: SGDConfig) -> ModelState:
    """Retrain from a fresh seeded initialization on the given subset only."""
    if len(subset) == 0:
        raise EmptySubsetError("cannot train on an empty subset")
    final, _ = train_full(subset, None, spec, config, hook=None)
    return final
