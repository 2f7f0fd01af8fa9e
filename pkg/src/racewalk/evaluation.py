"""Leave-one-walker-out cross-validation and per-walker metrics."""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .classifier import Hyperparameters, LogisticModel, predict, train
from .gait_cycle import ProcessedCycle
from .pose_data import FaultLabel


class FoldError(ValueError):
    pass


@dataclass(frozen=True)
class FoldSpec:
    fold_id: str
    test_walker_id: str
    train_walker_ids: tuple[str, ...]

    def __post_init__(self):
        if self.test_walker_id in self.train_walker_ids:
            raise FoldError(f"test walker {self.test_walker_id!r} is also a training walker")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionMatrix":
        t = np.asarray(y_true, dtype=bool)
        p = np.asarray(y_pred, dtype=bool)
        return cls(int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(t & ~p)), int(np.sum(~t & ~p)))


def _ratio(num: float, den: float) -> Optional[float]:
    return num / den if den else None


def compute_metrics(cm: ConfusionMatrix) -> dict[str, Optional[float]]:
    """Accuracy, precision, recall and F-score; undefined ratios are ``None``."""
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn)
    if precision is None or recall is None:
        f_score = None
    else:
        f_score = _ratio(2 * precision * recall, precision + recall)
    return {
        "accuracy": (cm.tp + cm.tn) / cm.total,
        "precision": precision,
        "recall": recall,
        "f_score": f_score,
    }


@dataclass(frozen=True)
class MetricsRow:
    walker_id: str
    fault_type: FaultLabel
    accuracy: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    f_score: Optional[float]
    confusion: Optional[ConfusionMatrix] = None

    @classmethod
    def from_confusion(cls, walker_id: str, fault_type: FaultLabel, cm: ConfusionMatrix) -> "MetricsRow":
        return cls(walker_id, fault_type, confusion=cm, **compute_metrics(cm))


# -- folds --------------------------------------------------------------------


def task_samples(
    cycles: Iterable[ProcessedCycle], fault_type: FaultLabel, include_other_faults: bool = False
) -> list[ProcessedCycle]:
    """Samples of the binary fault-vs-Normal task, sorted by video id."""
    fault_type = FaultLabel(fault_type)
    if fault_type is FaultLabel.NORMAL:
        raise ValueError("fault_type must be BK or LC")
    keep = [c for c in cycles if c.label in (fault_type, FaultLabel.NORMAL) or include_other_faults]
    return sorted(keep, key=lambda c: c.video_id)


def eligible_walkers(cycles: Iterable[ProcessedCycle], fault_type: FaultLabel) -> list[str]:
    """Walkers with at least one sample of the fault (walker E has no BK, for instance)."""
    return sorted({c.walker_id for c in cycles if c.label is FaultLabel(fault_type)})


def make_lowo_folds(cycles: Sequence[ProcessedCycle], fault_type: FaultLabel) -> list[FoldSpec]:
    walkers = eligible_walkers(cycles, fault_type)
    if len(walkers) < 2:
        raise FoldError(f"{FaultLabel(fault_type).value}: need at least 2 eligible walkers, got {len(walkers)}")
    ft = FaultLabel(fault_type).value
    return [
        FoldSpec(f"{ft}-holdout-{w}", w, tuple(o for o in walkers if o != w)) for w in walkers
    ]


@dataclass(frozen=True)
class FoldManifest:
    fold: FoldSpec
    train_video_ids: tuple[str, ...]
    test_video_ids: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "fold_id": self.fold.fold_id,
            "test_walker_id": self.fold.test_walker_id,
            "train_walker_ids": list(self.fold.train_walker_ids),
            "train_video_ids": list(self.train_video_ids),
            "test_video_ids": list(self.test_video_ids),
        }


@dataclass
class CVResult:
    fault_type: FaultLabel
    rows: list[MetricsRow]
    models: list[LogisticModel]
    manifests: list[FoldManifest]
    hyperparameters: Hyperparameters = field(default_factory=Hyperparameters)
    threshold: float = 0.5

    def row(self, walker_id: str) -> MetricsRow:
        return next(r for r in self.rows if r.walker_id == walker_id)


def _targets(samples: Sequence[ProcessedCycle], fault_type: FaultLabel) -> np.ndarray:
    return np.array([c.label is fault_type for c in samples], dtype=float)


def split_fold(samples: Sequence[ProcessedCycle], fold: FoldSpec):
    train_set = set(fold.train_walker_ids)
    tr = [c for c in samples if c.walker_id in train_set]
    te = [c for c in samples if c.walker_id == fold.test_walker_id]
    return tr, te


def train_fold(
    samples: Sequence[ProcessedCycle],
    fold: FoldSpec,
    fault_type: FaultLabel,
    hp: Hyperparameters,
    metadata: Optional[Mapping[str, Any]] = None,
) -> tuple[LogisticModel, FoldManifest]:
    tr, te = split_fold(samples, fold)
    manifest = FoldManifest(fold, tuple(c.video_id for c in tr), tuple(c.video_id for c in te))
    X = np.stack([c.features.values for c in tr])
    meta = {"fold": manifest.to_dict(), **(metadata or {})}
    model = train(
        X, _targets(tr, fault_type), hp.lam, hp.tol, hp.max_iter,
        fault_type=fault_type, training_fold_id=fold.fold_id, metadata=meta,
    )
    return model, manifest


def evaluate_fold(
    model: LogisticModel, test: Sequence[ProcessedCycle], fault_type: FaultLabel, walker_id: str, threshold: float
) -> MetricsRow:
    X = np.stack([c.features.values for c in test])
    cm = ConfusionMatrix.from_predictions(_targets(test, fault_type), predict(model, X, threshold))
    return MetricsRow.from_confusion(walker_id, fault_type, cm)


def run_cv(
    cycles: Sequence[ProcessedCycle],
    fault_type: FaultLabel,
    hyperparameters: Hyperparameters = Hyperparameters(),
    threshold: float = 0.5,
    include_other_faults: bool = False,
    jobs: int = 1,
    metadata: Optional[Mapping[str, Any]] = None,
) -> CVResult:
    """Train one model per held-out walker and score it on that walker only."""
    fault_type = FaultLabel(fault_type)
    samples = task_samples(cycles, fault_type, include_other_faults)
    folds = make_lowo_folds(samples, fault_type)
    walkers = set(eligible_walkers(samples, fault_type))
    samples = [c for c in samples if c.walker_id in walkers]

    def _one(fold: FoldSpec):
        model, manifest = train_fold(samples, fold, fault_type, hyperparameters, metadata)
        _, te = split_fold(samples, fold)
        return model, manifest, evaluate_fold(model, te, fault_type, fold.test_walker_id, threshold)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one, folds))
    else:
        results = [_one(f) for f in folds]
    return CVResult(
        fault_type,
        rows=[r[2] for r in results],
        models=[r[0] for r in results],
        manifests=[r[1] for r in results],
        hyperparameters=hyperparameters,
        threshold=threshold,
    )


def evaluate_models(
    cycles: Sequence[ProcessedCycle],
    models: Sequence[LogisticModel],
    threshold: float = 0.5,
    include_other_faults: bool = False,
) -> CVResult:
    """Score previously trained fold models on the walkers they held out."""
    if not models:
        raise FoldError("no models given")
    fault_type = models[0].fault_type
    samples = task_samples(cycles, fault_type, include_other_faults)
    rows, manifests = [], []
    ordered = sorted(models, key=lambda m: m.metadata["fold"]["test_walker_id"])
    for model in ordered:
        if model.fault_type is not fault_type:
            raise FoldError("models mix fault types")
        f = model.metadata["fold"]
        fold = FoldSpec(f["fold_id"], f["test_walker_id"], tuple(f["train_walker_ids"]))
        _, te = split_fold(samples, fold)
        if not te:
            raise FoldError(f"no samples for held-out walker {fold.test_walker_id!r}")
        leaked = set(f["train_video_ids"]) & {c.video_id for c in te}
        if leaked:
            raise FoldError(f"fold {fold.fold_id}: test videos were used for training: {sorted(leaked)}")
        manifests.append(FoldManifest(fold, tuple(f["train_video_ids"]), tuple(c.video_id for c in te)))
        rows.append(evaluate_fold(model, te, fault_type, fold.test_walker_id, threshold))
    return CVResult(fault_type, rows, list(ordered), manifests, ordered[0].hyperparameters, threshold)


# -- output -------------------------------------------------------------------

METRIC_FIELDS = ("accuracy", "precision", "recall", "f_score")


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else format(v, ".17g")


def write_metrics_csv(rows: Iterable[MetricsRow], dest: Union[str, os.PathLike, io.TextIOBase]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["walker_id", "fault", *METRIC_FIELDS])
    for r in rows:
        w.writerow([r.walker_id, r.fault_type.value, *(_fmt(getattr(r, f)) for f in METRIC_FIELDS)])
    if isinstance(dest, (str, os.PathLike)):
        Path(dest).write_text(buf.getvalue(), encoding="utf-8")
    else:
        dest.write(buf.getvalue())


def read_metrics_csv(source: Union[str, os.PathLike]) -> list[MetricsRow]:
    rows = []
    with open(source, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            vals = {f: (float(rec[f]) if rec[f] != "" else None) for f in METRIC_FIELDS}
            rows.append(MetricsRow(rec["walker_id"], FaultLabel(rec["fault"]), **vals))
    return rows


def metrics_document(results: Sequence[CVResult], config: Optional[Mapping] = None) -> dict:
    doc: dict[str, Any] = {"config": dict(config or {}), "tasks": []}
    for res in results:
        doc["tasks"].append(
            {
                "fault": res.fault_type.value,
                "hyperparameters": res.hyperparameters.to_dict(),
                "threshold": res.threshold,
                "rows": [
                    {
                        "walker_id": r.walker_id,
                        **{f: getattr(r, f) for f in METRIC_FIELDS},
                        "confusion": asdict(r.confusion) if r.confusion else None,
                    }
                    for r in res.rows
                ],
                "folds": [m.to_dict() for m in res.manifests],
            }
        )
    return doc


def write_metrics_json(results: Sequence[CVResult], dest: Union[str, os.PathLike], config: Optional[Mapping] = None):
    Path(dest).write_text(json.dumps(metrics_document(results, config), indent=1) + "\n", encoding="utf-8")
