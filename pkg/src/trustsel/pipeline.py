"""End-to-end orchestration: selection runs, tradeoff sweeps, hyperparameter search,
augmentation rounds and oracle-equivalence suites."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace as dc_replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import augment, datagen, metrics as metrics_mod, models, oracles, reports, solver, valuation
from .augment import CorruptionKind
from .metrics import ParetoPoint, pareto_frontier
from .models import GradientBundle, LabeledDataset, ModelSpec, ModelState, SGDConfig
from .solver import ColumnId, FeatureColumn
from .valuation import ACCURACY, FAIRNESS, ROBUSTNESS, IncrementalValue, ValueTarget

PAIRING_ACCURACY = "accuracy"
PAIRINGS = ("af", "ar", "rf", PAIRING_ACCURACY)
DEFAULT_LAMBDA_GRID = (0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0)
FRACTION_GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))
LAMBDA_RESOLUTION = 1.0 / 64.0

# metrics where smaller is better; the rest are accuracies
_LOWER_BETTER = {"er", "eo_disp", "dp_disp"}
# per pairing: (metric tied to the lam-weighted family, metric tied to the other family)
PAIRING_AXES = {
    "af": ("er", "eo_disp"),
    "ar": ("er", "ra"),
    "rf": ("ra", "eo_disp"),
}


class ConfigError(ValueError):
    """Configuration problem, reported with the offending field."""

    def __init__(self, fieldname: str, message: str):
        self.fieldname = fieldname
        super().__init__(f"{fieldname}: {message}")


class ThresholdUnreachableError(RuntimeError):
    def __init__(self, metric: str, threshold: float, best: float):
        self.metric = metric
        self.threshold = threshold
        self.best = best
        super().__init__(
            f"threshold {threshold} on {metric} unreachable; best observed {best:.6f}"
        )


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    dataset: dict
    model: dict
    sgd: dict
    pairing: str = PAIRING_ACCURACY
    lam: float = 1.0
    fraction: float | None = 0.5
    capacity: int | None = None
    seed: int = 0
    out_dir: str = "runs"
    corruptions: list[dict] = field(default_factory=list)
    val_fraction: float = 0.2
    feature_mode: str = "taylor"
    augment_train: bool = True

    def resolved(self) -> dict:
        return {
            "dataset": dict(self.dataset),
            "model": dict(self.model),
            "sgd": dict(self.sgd),
            "pairing": self.pairing,
            "lam": self.lam,
            "fraction": self.fraction,
            "capacity": self.capacity,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "corruptions": [dict(c) for c in self.corruptions],
            "val_fraction": self.val_fraction,
            "feature_mode": self.feature_mode,
            "augment_train": self.augment_train,
        }

    def run_id(self) -> str:
        canon = dict(self.resolved())
        canon.pop("out_dir")  # where a run lands must not change what it is
        blob = json.dumps(reports.jsonable(canon), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def config_from_dict(raw: dict) -> RunConfig:
    known = {
        "dataset",
        "model",
        "sgd",
        "pairing",
        "lam",
        "fraction",
        "capacity",
        "seed",
        "out_dir",
        "corruptions",
        "val_fraction",
        "feature_mode",
        "augment_train",
    }
    for key in raw:
        if key not in known:
            raise ConfigError(key, "unknown configuration field")
    for required in ("dataset", "model", "sgd"):
        if required not in raw:
            raise ConfigError(required, "missing required section")
    cfg = RunConfig(
        dataset=dict(raw["dataset"]),
        model=dict(raw["model"]),
        sgd=dict(raw["sgd"]),
        pairing=raw.get("pairing", PAIRING_ACCURACY),
        lam=raw.get("lam", 1.0),
        fraction=raw.get("fraction", 0.5),
        capacity=raw.get("capacity"),
        seed=raw.get("seed", 0),
        out_dir=raw.get("out_dir", "runs"),
        corruptions=[dict(c) for c in raw.get("corruptions", [])],
        val_fraction=raw.get("val_fraction", 0.2),
        feature_mode=raw.get("feature_mode", "taylor"),
        augment_train=raw.get("augment_train", True),
    )
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    if cfg.pairing == "accuracy-only":
        cfg.pairing = PAIRING_ACCURACY
    if cfg.pairing not in PAIRINGS:
        raise ConfigError("pairing", f"must be one of {PAIRINGS}")
    if not 0.0 <= cfg.lam <= 1.0:
        raise ConfigError("lam", "must lie in [0, 1]")
    if cfg.fraction is None and cfg.capacity is None:
        raise ConfigError("fraction", "either fraction or capacity must be set")
    if cfg.fraction is not None and not 0.0 < cfg.fraction <= 1.0:
        raise ConfigError("fraction", "must lie in (0, 1]")
    if cfg.capacity is not None and cfg.capacity < 1:
        raise ConfigError("capacity", "must be >= 1")
    if not 0.0 < cfg.val_fraction < 1.0:
        raise ConfigError("val_fraction", "must lie in (0, 1)")
    if cfg.feature_mode not in ("taylor", "exact"):
        raise ConfigError("feature_mode", "must be 'taylor' or 'exact'")
    kind = cfg.dataset.get("kind")
    if kind == "synthetic":
        for fieldname in ("n", "input_dim", "bias_strength"):
            if fieldname not in cfg.dataset:
                raise ConfigError(f"dataset.{fieldname}", "required for synthetic datasets")
    elif kind == "csv":
        for fieldname in ("path", "label_column"):
            if fieldname not in cfg.dataset:
                raise ConfigError(f"dataset.{fieldname}", "required for csv datasets")
    else:
        raise ConfigError("dataset.kind", "must be 'synthetic' or 'csv'")
    if cfg.model.get("kind") not in models.MODEL_KINDS:
        raise ConfigError("model.kind", f"must be one of {models.MODEL_KINDS}")
    if cfg.model.get("loss", models.CROSS_ENTROPY) not in models.LOSS_KINDS:
        raise ConfigError("model.loss", f"must be one of {models.LOSS_KINDS}")
    if "learning_rate" not in cfg.sgd or "epochs" not in cfg.sgd:
        raise ConfigError("sgd", "learning_rate and epochs are required")
    if cfg.sgd["learning_rate"] <= 0:
        raise ConfigError("sgd.learning_rate", "must be positive")
    if cfg.sgd["epochs"] < 0:
        raise ConfigError("sgd.epochs", "must be >= 0")
    if cfg.pairing in ("ar", "rf") and not cfg.corruptions:
        raise ConfigError("corruptions", f"pairing {cfg.pairing!r} needs at least one kind")
    for i, c in enumerate(cfg.corruptions):
        if c.get("name") not in augment.CORRUPTION_NAMES:
            raise ConfigError(f"corruptions[{i}].name", f"must be one of {augment.CORRUPTION_NAMES}")
        if c.get("severity", -1) < 0:
            raise ConfigError(f"corruptions[{i}].severity", "must be >= 0")


def _corruption_kinds(cfg: RunConfig) -> list[CorruptionKind]:
    return [CorruptionKind(c["name"], float(c["severity"])) for c in cfg.corruptions]


def load_datasets(cfg: RunConfig) -> tuple[LabeledDataset, LabeledDataset]:
    ds = cfg.dataset
    if ds["kind"] == "synthetic":
        spec = datagen.BiasedClassificationSpec(
            n=int(ds["n"]),
            input_dim=int(ds["input_dim"]),
            bias_strength=float(ds["bias_strength"]),
            class_balance=float(ds.get("class_balance", 0.5)),
            seed=int(ds.get("seed", cfg.seed)),
            class_separation=float(ds.get("class_separation", 1.0)),
        )
        return datagen.gen_biased_classification(spec)
    full = datagen.load_csv(ds["path"], ds["label_column"], ds.get("sensitive_column"))
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(full))
    cut = int(round((1.0 - cfg.val_fraction) * len(full)))
    return full.subset(perm[:cut]), full.subset(perm[cut:])


def model_spec_from(cfg: RunConfig, input_dim: int) -> ModelSpec:
    m = cfg.model
    if "input_dim" in m and int(m["input_dim"]) != input_dim:
        raise ConfigError("model.input_dim", f"dataset has input_dim {input_dim}")
    return ModelSpec(
        kind=m["kind"],
        input_dim=input_dim,
        loss=m.get("loss", models.CROSS_ENTROPY),
        hidden_width=m.get("hidden_width"),
    )


def sgd_config_from(cfg: RunConfig) -> SGDConfig:
    return SGDConfig(
        learning_rate=float(cfg.sgd["learning_rate"]),
        epochs=int(cfg.sgd["epochs"]),
        seed=cfg.seed,
        shuffle=bool(cfg.sgd.get("shuffle", False)),
    )


# ---------------------------------------------------------------------------
# feature streaming
# ---------------------------------------------------------------------------


class FeatureCollector:
    """Trajectory hook turning SGD steps into feature columns and target increments.

    Accuracy and robustness coordinates use the gradient-product form (or the
    exact loss decrease in exact mode); the fairness coordinate is always the
    exactly computed disparity decrease. Loss caches roll forward because the
    hook sees states strictly in trajectory order.
    """

    def __init__(
        self,
        pairing: str,
        lam: float,
        valset: LabeledDataset,
        aug_valset: LabeledDataset | None = None,
        feature_mode: str = "taylor",
    ):
        if pairing not in PAIRINGS:
            raise ValueError(f"unknown pairing {pairing!r}")
        self.pairing = pairing
        self.lam = lam
        self.valset = valset
        self.aug_valset = aug_valset
        self.taylor = feature_mode == "taylor"
        if pairing in ("ar", "rf") and aug_valset is None:
            raise ValueError("robustness pairing needs an augmented validation set")
        self.columns: list[FeatureColumn] = []
        self.increments: list[IncrementalValue] = []
        self._val_losses: np.ndarray | None = None
        self._aug_losses: np.ndarray | None = None
        self._ed: float | None = None
        self._pending: tuple[int, int, GradientBundle, np.ndarray | None] | None = None

    @property
    def needs_fairness(self) -> bool:
        return self.pairing in ("af", "rf")

    @property
    def needs_robustness(self) -> bool:
        return self.pairing in ("ar", "rf")

    def before_step(self, epoch, index, bundle, state_before) -> None:
        if self._val_losses is None:
            self._val_losses = models.per_point_losses(
                state_before, self.valset.features, self.valset.labels
            )
        if self.needs_fairness and self._ed is None:
            self._ed = valuation.eo_disparity(state_before, self.valset)
        aug_grads = None
        if self.needs_robustness:
            if self._aug_losses is None:
                self._aug_losses = models.per_point_losses(
                    state_before, self.aug_valset.features, self.aug_valset.labels
                )
            if self.taylor:
                aug_grads = models.per_point_grads(
                    state_before, self.aug_valset.features, self.aug_valset.labels
                )
        self._pending = (epoch, index, bundle, aug_grads)

    def after_step(self, epoch, index, state_after) -> None:
        pend_epoch, pend_index, bundle, aug_grads = self._pending
        assert (pend_epoch, pend_index) == (epoch, index)
        self._pending = None
        val_after = models.per_point_losses(state_after, self.valset.features, self.valset.labels)
        acc_inc = self._val_losses - val_after
        self._val_losses = val_after
        acc_feat = valuation.taylor_feature(bundle) if self.taylor else acc_inc
        blocks_feat: list[tuple[str, np.ndarray]] = []
        blocks_inc: list[tuple[str, np.ndarray]] = []
        if self.pairing == PAIRING_ACCURACY:
            feature = acc_feat
            increment = IncrementalValue(acc_inc, ((ACCURACY, len(acc_inc)),), (epoch, index))
        else:
            if self.needs_robustness:
                aug_after = models.per_point_losses(
                    state_after, self.aug_valset.features, self.aug_valset.labels
                )
                rob_inc = self._aug_losses - aug_after
                self._aug_losses = aug_after
                if self.taylor:
                    rob_feat = valuation.taylor_feature(
                        GradientBundle(bundle.train_gradient, aug_grads)
                    )
                else:
                    rob_feat = rob_inc
            if self.needs_fairness:
                ed_after = valuation.eo_disparity(state_after, self.valset)
                fair_val = np.array([self._ed - ed_after])
                self._ed = ed_after
            if self.pairing == "af":
                blocks_feat = [(ACCURACY, acc_feat), (FAIRNESS, fair_val)]
                blocks_inc = [(ACCURACY, acc_inc), (FAIRNESS, fair_val)]
            elif self.pairing == "ar":
                blocks_feat = [(ACCURACY, acc_feat), (ROBUSTNESS, rob_feat)]
                blocks_inc = [(ACCURACY, acc_inc), (ROBUSTNESS, rob_inc)]
            else:  # rf
                blocks_feat = [(ROBUSTNESS, rob_feat), (FAIRNESS, fair_val)]
                blocks_inc = [(ROBUSTNESS, rob_inc), (FAIRNESS, fair_val)]
            feature = valuation.compose_target(blocks_feat, self.lam, (epoch, index)).values
            increment = valuation.compose_target(blocks_inc, self.lam, (epoch, index))
        self.columns.append(FeatureColumn(ColumnId(epoch, index), feature))
        self.increments.append(increment)

    def targets_by_epoch(self) -> dict[int, ValueTarget]:
        """Cumulative target per epoch: all increments with epoch <= t."""
        epochs = sorted({inc.source[0] for inc in self.increments})
        per_epoch: dict[int, np.ndarray] = {}
        layout = self.increments[0].layout
        for inc in self.increments:
            per_epoch.setdefault(inc.source[0], np.zeros(len(inc.values)))
            per_epoch[inc.source[0]] += inc.values
        targets = {}
        running = np.zeros(len(self.increments[0].values))
        for t in epochs:
            running = running + per_epoch[t]
            targets[t] = ValueTarget(running.copy(), layout, self.lam)
        return targets


# ---------------------------------------------------------------------------
# selection runs
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    run_id: str
    config: dict
    selected: list[dict]
    selected_datapoints: list[int]
    trace_summary: dict
    metrics: dict
    wall_ms: float
    capacity: int
    stream_size: int

    def to_dict(self) -> dict:
        return {
            "schema_version": reports.SCHEMA_VERSION,
            "run_id": self.run_id,
            "config": self.config,
            "capacity": self.capacity,
            "stream_size": self.stream_size,
            "selected": self.selected,
            "selected_datapoints": self.selected_datapoints,
            "trace_summary": self.trace_summary,
            "metrics": self.metrics,
            "wall_ms": self.wall_ms,
            "seed": self.config["seed"],
        }


def _metric_testsets(cfg: RunConfig, valset: LabeledDataset) -> list[LabeledDataset]:
    kinds = _corruption_kinds(cfg)
    return [
        augment.corrupt_dataset(valset, kind, np.random.default_rng((cfg.seed, 9101, j)), tag=j)
        for j, kind in enumerate(kinds)
    ]


def evaluate_model(cfg: RunConfig, state: ModelState, valset: LabeledDataset) -> dict:
    er = metrics_mod.error_rate(state, valset)
    out = {"er": er, "sa": 1.0 - er, "eo_disp": None, "dp_disp": None, "ra": None}
    if valset.sensitive is not None:
        out["eo_disp"] = valuation.eo_disparity(state, valset)
        out["dp_disp"] = valuation.dp_disparity(state, valset)
    testsets = _metric_testsets(cfg, valset)
    if testsets:
        out["ra"] = metrics_mod.robust_accuracy(state, testsets)
    return out


def run_selection(cfg: RunConfig) -> RunReport:
    """Full pipeline: stream features from training, select, retrain, evaluate."""
    started = time.perf_counter()
    train, val = load_datasets(cfg)
    spec = model_spec_from(cfg, train.input_dim)
    sgd = sgd_config_from(cfg)
    kinds = _corruption_kinds(cfg)

    stream_train = train
    aug_val = None
    needs_rob = cfg.pairing in ("ar", "rf")
    if needs_rob:
        aug_val = augment.concat_datasets(
            [
                augment.corrupt_dataset(val, kind, np.random.default_rng((cfg.seed, 9102, j)), tag=j)
                for j, kind in enumerate(kinds)
            ]
        )
        if cfg.augment_train:
            stream_train = augment.concat_datasets(
                [train]
                + [
                    augment.corrupt_dataset(
                        train, kind, np.random.default_rng((cfg.seed, 9103, j)), tag=j
                    )
                    for j, kind in enumerate(kinds)
                ]
            )

    collector = FeatureCollector(cfg.pairing, cfg.lam, val, aug_val, cfg.feature_mode)
    models.train_full(stream_train, val, spec, sgd, hook=collector)

    capacity = cfg.capacity
    if capacity is None:
        capacity = int(np.floor(cfg.fraction * len(stream_train)))
    if capacity < 1:
        raise ConfigError("fraction", "selection budget rounds down to zero")
    buffer, trace = solver.run_online_selection(
        collector.columns, collector.targets_by_epoch(), capacity
    )

    selected = [
        {"epoch": cid.epoch, "index": cid.index, "beta": float(b)}
        for cid, b in zip(buffer.ids, buffer.coefficients)
    ]
    datapoints = sorted({cid.index for cid in buffer.ids})
    retrained = models.train_on_subset(stream_train.subset(datapoints), spec, sgd)
    metric_values = evaluate_model(cfg, retrained, val)
    wall_ms = (time.perf_counter() - started) * 1000.0
    return RunReport(
        run_id=cfg.run_id(),
        config=cfg.resolved(),
        selected=selected,
        selected_datapoints=datapoints,
        trace_summary=trace.summary(),
        metrics=metric_values,
        wall_ms=wall_ms,
        capacity=capacity,
        stream_size=len(stream_train),
    )


def write_run_report(report: RunReport, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    path = reports.write_json_atomic(out_dir / f"run_{report.run_id}.json", report.to_dict())
    row = reports.metrics_csv_row(
        report.run_id,
        report.config["pairing"],
        report.config["lam"],
        report.config["fraction"],
        report.metrics,
        report.wall_ms,
    )
    reports.append_metrics_row(out_dir, row)
    return path


def cmd_select(cfg: RunConfig) -> RunReport:
    report = run_selection(cfg)
    write_run_report(report, cfg.out_dir)
    return report


# ---------------------------------------------------------------------------
# sweeps and search
# ---------------------------------------------------------------------------


def _axis_metrics(pairing: str, metric_values: dict) -> tuple[float, float]:
    if pairing == "af":
        return metric_values["er"], metric_values["eo_disp"]
    if pairing == "ar":
        return metric_values["er"], 1.0 - metric_values["ra"]
    if pairing == "rf":
        return 1.0 - metric_values["ra"], metric_values["eo_disp"]
    raise ValueError(f"pairing {pairing!r} has no tradeoff axes")


def cmd_sweep(cfg: RunConfig, lambda_grid: Sequence[float] | None = None) -> dict:
    """Run one selection per tradeoff weight and extract the non-dominated frontier."""
    if cfg.pairing == PAIRING_ACCURACY:
        raise ConfigError("pairing", "sweep needs a two-family pairing")
    grid = tuple(lambda_grid) if lambda_grid else DEFAULT_LAMBDA_GRID
    if not grid:
        raise ConfigError("lambda_grid", "must be non-empty")
    points: list[ParetoPoint] = []
    runs: list[dict] = []
    failures: list[dict] = []
    for lam in grid:
        sub = dc_replace(cfg, lam=float(lam))
        try:
            report = cmd_select(sub)
        except Exception as exc:  # record and continue with the rest of the grid
            failures.append({"lambda": lam, "error": str(exc)})
            continue
        x, y = _axis_metrics(cfg.pairing, report.metrics)
        points.append(ParetoPoint(float(lam), x, y))
        runs.append({"lambda": lam, "run_id": report.run_id, "metrics": report.metrics})
    frontier = pareto_frontier(points)
    payload = {
        "schema_version": reports.SCHEMA_VERSION,
        "pairing": cfg.pairing,
        "config": cfg.resolved(),
        "grid": list(grid),
        "points": [{"lambda": p.lam, "metric_x": p.metric_x, "metric_y": p.metric_y} for p in points],
        "frontier": [
            {"lambda": p.lam, "metric_x": p.metric_x, "metric_y": p.metric_y} for p in frontier
        ],
        "failures": failures,
        "runs": runs,
    }
    reports.write_json_atomic(Path(cfg.out_dir) / f"sweep_{cfg.run_id()}.json", payload)
    return payload


def _meets(metric: str, value: float | None, threshold: float) -> bool:
    if value is None:
        return False
    return value <= threshold if metric in _LOWER_BETTER else value >= threshold


def cmd_search(cfg: RunConfig, threshold_metric: str, threshold: float) -> dict:
    """Fraction grid at the anchoring endpoint, then bisection on the tradeoff weight.

    The threshold constrains one of the pairing's two metrics; the search
    walks lam toward the other family's endpoint as long as the threshold
    stays satisfied (metrics are assumed monotone in lam; the probe history is
    reported so non-monotone cases can be audited).
    """
    if cfg.pairing == PAIRING_ACCURACY:
        raise ConfigError("pairing", "search needs a two-family pairing")
    axes = PAIRING_AXES[cfg.pairing]
    if threshold_metric not in axes:
        raise ConfigError(
            "threshold_metric", f"must be one of {axes} for pairing {cfg.pairing!r}"
        )
    second_metric = axes[1] if threshold_metric == axes[0] else axes[0]
    # lam = 1 weights the first family, so first-axis thresholds anchor there
    anchor = 1.0 if threshold_metric == axes[0] else 0.0

    grid_runs = []
    best_fraction = None
    best_value = None
    best_report = None
    for fraction in FRACTION_GRID:
        sub = dc_replace(cfg, fraction=fraction, lam=anchor)
        report = cmd_select(sub)
        value = report.metrics[threshold_metric]
        grid_runs.append({"fraction": fraction, threshold_metric: value})
        better = (
            best_value is None
            or (value < best_value if threshold_metric in _LOWER_BETTER else value > best_value)
        )
        if better:
            best_fraction, best_value, best_report = fraction, value, report
    if not _meets(threshold_metric, best_value, threshold):
        raise ThresholdUnreachableError(threshold_metric, threshold, best_value)

    feasible_lam = anchor
    feasible_report = best_report
    lo, hi = 0.0, 1.0
    probes = []
    while hi - lo > LAMBDA_RESOLUTION:
        mid = round((lo + hi) / 2.0 / LAMBDA_RESOLUTION) * LAMBDA_RESOLUTION
        sub = dc_replace(cfg, fraction=best_fraction, lam=mid)
        report = cmd_select(sub)
        value = report.metrics[threshold_metric]
        ok = _meets(threshold_metric, value, threshold)
        probes.append({"lambda": mid, threshold_metric: value, "feasible": ok})
        if ok:
            feasible_lam, feasible_report = mid, report
        # shrink toward the non-anchor side while staying feasible
        if anchor == 1.0:
            if ok:
                hi = mid
            else:
                lo = mid
        else:
            if ok:
                lo = mid
            else:
                hi = mid
    payload = {
        "schema_version": reports.SCHEMA_VERSION,
        "pairing": cfg.pairing,
        "config": cfg.resolved(),
        "threshold_metric": threshold_metric,
        "threshold": threshold,
        "chosen": {
            "fraction": best_fraction,
            "lambda": feasible_lam,
            threshold_metric: feasible_report.metrics[threshold_metric],
            second_metric: feasible_report.metrics[second_metric],
        },
        "fraction_grid": grid_runs,
        "probes": probes,
        "monotonicity_assumed": True,
    }
    reports.write_json_atomic(Path(cfg.out_dir) / f"search_{cfg.run_id()}.json", payload)
    return payload


# ---------------------------------------------------------------------------
# augmentation rounds
# ---------------------------------------------------------------------------


def cmd_saug(
    cfg: RunConfig, epsilon: float = 0.005, max_rounds: int = 10
) -> dict:
    kinds = _corruption_kinds(cfg)
    if not kinds:
        raise ConfigError("corruptions", "sampled augmentation needs at least one kind")
    train, val = load_datasets(cfg)
    spec = model_spec_from(cfg, train.input_dim)
    sgd = sgd_config_from(cfg)
    final, history = augment.saug_loop(
        train, val, kinds, spec, sgd, epsilon, max_rounds=max_rounds, seed=cfg.seed
    )
    tags = final.aug_tags if final.aug_tags is not None else np.full(len(final), -1)
    manifest = {"clean": int(np.sum(tags == -1))}
    for j, kind in enumerate(kinds):
        manifest[f"{kind.name}:{kind.severity}"] = int(np.sum(tags == j))
    payload = {
        "schema_version": reports.SCHEMA_VERSION,
        "config": cfg.resolved(),
        "epsilon": epsilon,
        "max_rounds": max_rounds,
        "rounds": [r.to_dict() for r in history],
        "final_dataset": {"size": len(final), "manifest": manifest},
    }
    reports.write_json_atomic(Path(cfg.out_dir) / f"saug_{cfg.run_id()}.json", payload)
    return payload


# ---------------------------------------------------------------------------
# oracle-equivalence suites
# ---------------------------------------------------------------------------


def _constant_target_stream(
    instance: datagen.SparseInstance, passes: int
) -> tuple[list[FeatureColumn], dict[int, ValueTarget]]:
    columns = []
    for epoch in range(1, passes + 1):
        for idx in range(instance.columns.shape[0]):
            columns.append(
                FeatureColumn(ColumnId(epoch, idx), instance.columns[idx], norm_certified=True)
            )
    target = ValueTarget.plain(instance.target)
    return columns, {t: target for t in range(1, passes + 1)}


def online_support(instance: datagen.SparseInstance, capacity: int, passes: int) -> set[int]:
    columns, targets = _constant_target_stream(instance, passes)
    buffer, _ = solver.run_online_selection(columns, targets, capacity)
    return {cid.index for cid in buffer.ids}


def random_premise_state(seed: int):
    """Construct a full buffer plus candidate where the dominance premises hold.

    Buffered entries inside the optimal support carry positive coefficients
    (never eligible for eviction); entries outside carry strictly negative
    ones, so the qualifier sets of the checker and the replacement rule agree.
    """
    rng = np.random.default_rng(seed)
    while True:
        dim = int(rng.integers(4, 10))
        size = int(rng.integers(2, 6))
        cols = rng.standard_normal((size, dim))
        cols /= np.linalg.norm(cols, axis=1, keepdims=True)
        optimal_mask = rng.random(size) < 0.4
        beta = np.where(
            optimal_mask, rng.uniform(0.05, 1.0, size), -rng.uniform(0.05, 1.0, size)
        )
        columns = [
            FeatureColumn(ColumnId(1, j), cols[j], norm_certified=True) for j in range(size)
        ]
        buffer = solver.SelectionBuffer.from_entries(size, columns, beta)
        rho = rng.standard_normal(dim)
        rho *= rng.uniform(0.5, 2.0) / np.linalg.norm(rho)
        cand_raw = rho / np.linalg.norm(rho) + 0.3 * rng.standard_normal(dim)
        candidate = FeatureColumn(
            ColumnId(2, 1000 + seed % 1000), cand_raw / np.linalg.norm(cand_raw), norm_certified=True
        )
        optimal_support = {columns[j].id for j in range(size) if optimal_mask[j]}
        optimal_support.add(candidate.id)
        pi = abs(candidate.values @ rho)
        holders = [
            j
            for j in range(size)
            if not optimal_mask[j] and pi > abs(cols[j] @ rho) and beta[j] < 0
        ]
        if holders:
            return buffer, candidate, rho, optimal_support


def cmd_oracle_check(
    seed_count: int = 10,
    passes: int = 5,
    consistency_states: int = 100,
    out_dir: str | None = None,
) -> dict:
    """Run the solver-vs-oracle equivalence suites and report pass counts."""
    degenerate_pass = 0
    degenerate_total = 5
    for seed in range(degenerate_total):
        inst = datagen.gen_sparse_instance(50, 60, 5, 0.5, 0.5, seed=seed)
        columns, targets = _constant_target_stream(inst, 1)
        buffer, _ = solver.run_online_selection(columns, targets, 50)
        online_res = float(np.linalg.norm(inst.target - buffer.approximation))
        full_res = oracles.full_least_squares_residual(inst.columns, inst.target)
        if abs(online_res - full_res) <= 1e-8:
            degenerate_pass += 1

    recovery_pass = 0
    batch_pass = 0
    online_vs_batch = 0
    recovery_total = seed_count
    for seed in range(seed_count):
        inst = datagen.gen_sparse_instance(20, 30, 4, 0.0, 0.3, seed=seed)
        oracle_support, _ = oracles.best_subset_least_squares(inst.columns, inst.target, 4)
        got = online_support(inst, 4, passes)
        if got == set(oracle_support):
            recovery_pass += 1
        cols = [
            FeatureColumn(ColumnId(1, j), inst.columns[j], norm_certified=True)
            for j in range(20)
        ]
        batch_ids, _ = solver.batch_omp(cols, ValueTarget.plain(inst.target), 4)
        batch_support = {cid.index for cid in batch_ids}
        if batch_support == set(oracle_support):
            batch_pass += 1
        if batch_support == got:
            online_vs_batch += 1

    mismatches = 0
    for seed in range(consistency_states):
        buffer, candidate, rho, support = random_premise_state(10_000 + seed)
        report = solver.check_inclusion_conditions(rho, candidate, buffer, support)
        if not report.consistent:
            mismatches += 1

    # negative control: tampering with a coefficient sign must be caught
    buffer, candidate, rho, support = random_premise_state(424242)
    clean = solver.check_inclusion_conditions(rho, candidate, buffer, support)
    entries = buffer.entries()
    tampered_beta = [
        abs(b) if cid == clean.predicted_eviction else b for cid, _, b in entries
    ]
    tampered = solver.SelectionBuffer.from_entries(
        buffer.capacity,
        [FeatureColumn(cid, vals, norm_certified=True) for cid, vals, _ in entries],
        tampered_beta,
    )
    target = ValueTarget.plain(rho + buffer.approximation)
    tampered_actual = solver.data_replace(target, tampered, candidate)
    control_detected = not (
        tampered_actual.outcome == solver.REPLACED
        and tampered_actual.evicted == clean.predicted_eviction
    )

    payload = {
        "schema_version": reports.SCHEMA_VERSION,
        "degenerate_equivalence": {"passed": degenerate_pass, "total": degenerate_total},
        "support_recovery": {
            "online_vs_bruteforce": recovery_pass,
            "batch_vs_bruteforce": batch_pass,
            "online_vs_batch": online_vs_batch,
            "total": recovery_total,
            "passes": passes,
        },
        "replacement_consistency": {
            "states": consistency_states,
            "mismatches": mismatches,
        },
        "negative_control": {
            "tampered_coefficient_sign": True,
            "mismatch_detected": control_detected,
        },
    }
    if out_dir is not None:
        reports.write_json_atomic(Path(out_dir) / "oracle_check.json", payload)
    return payload
