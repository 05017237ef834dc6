"""Random forest classifier and the multi-threshold macro-F1 report.

Trees are grown by scikit-learn; probabilities are the fraction of trees
whose hard vote is label 1, and the threshold sweep, confusion matrices
and F1 arithmetic live here.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.ensemble import RandomForestClassifier

from .datasets import LabeledDataset
from .errors import ConfigError, ContractError, DataError

THRESHOLDS = (0.2, 0.4, 0.5, 0.6, 0.8)
DEFAULT_THRESHOLD = 0.5
LEAKAGE_NOTE = "best threshold is selected on the test set itself (optimistic)"


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 300
    max_depth: int | None = 20
    min_samples_split: int = 2
    max_features: int | None = None  # None: ceil(sqrt(d))
    bootstrap: bool = True
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1 when set")
        if self.min_samples_split < 2:
            raise ConfigError("min_samples_split must be >= 2")

    def features_per_split(self, d: int) -> int:
        return self.max_features or max(1, math.ceil(math.sqrt(d)))

    def with_seed(self, seed: int) -> "ForestConfig":
        return ForestConfig(**{**asdict(self), "seed": int(seed)})


RENDERED_FOREST = ForestConfig(300, 20)
FLOWS_FOREST = ForestConfig(300, None)


@dataclass
class Forest:
    model: RandomForestClassifier
    n_features: int

    @property
    def trees(self):
        return self.model.estimators_


def rf_train(train: LabeledDataset, cfg: ForestConfig) -> Forest:
    n0, n1 = train.counts()
    if n0 == 0 or n1 == 0:
        raise DataError("training data must contain both labels")
    model = RandomForestClassifier(
        n_estimators=cfg.n_trees,
        criterion="gini",
        max_depth=cfg.max_depth,
        min_samples_split=cfg.min_samples_split,
        max_features=cfg.features_per_split(train.d),
        bootstrap=cfg.bootstrap,
        random_state=cfg.seed,
        n_jobs=cfg.n_jobs,
    )
    model.fit(train.features, train.labels)
    return Forest(model, train.d)


def tree_votes(forest: Forest, rows) -> np.ndarray:
    """Per-tree hard votes for label 1, shape (n_trees, n)."""
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != forest.n_features:
        raise ContractError(f"expected rows of width {forest.n_features}, got shape {x.shape}")
    x32 = x.astype(np.float32)
    classes = forest.model.classes_
    return np.stack([classes[est.predict(x32, check_input=False).astype(np.int64)] == 1
                     for est in forest.trees])


def rf_predict_proba(forest: Forest, rows) -> np.ndarray:
    return tree_votes(forest, rows).mean(axis=0)


@dataclass(frozen=True)
class ThresholdEntry:
    threshold: float
    tn: int
    fp: int
    fn: int
    tp: int
    f1: tuple[float, float]
    precision: tuple[float, float]
    recall: tuple[float, float]
    undefined: tuple[str, ...] = ()

    @property
    def macro_f1(self) -> float:
        return 0.5 * (self.f1[0] + self.f1[1])

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "confusion": [[self.tn, self.fp], [self.fn, self.tp]],
            "macro_f1": self.macro_f1,
            "f1": list(self.f1),
            "precision": list(self.precision),
            "recall": list(self.recall),
            "undefined": list(self.undefined),
        }


def _ratio(num, den, tag, undefined):
    if den == 0:
        undefined.append(tag)
        return 0.0
    return num / den


def entry_from_confusion(threshold: float, tn: int, fp: int, fn: int, tp: int) -> ThresholdEntry:
    """Per-class scores with label 1 positive; rows of the matrix are the true class."""
    und: list[str] = []
    f1 = (_ratio(2 * tn, 2 * tn + fn + fp, "f1_0", und), _ratio(2 * tp, 2 * tp + fp + fn, "f1_1", und))
    prec = (_ratio(tn, tn + fn, "precision_0", und), _ratio(tp, tp + fp, "precision_1", und))
    rec = (_ratio(tn, tn + fp, "recall_0", und), _ratio(tp, tp + fn, "recall_1", und))
    return ThresholdEntry(float(threshold), int(tn), int(fp), int(fn), int(tp), f1, prec, rec, tuple(und))


def macro_f1(tn, fp, fn, tp) -> float:
    return entry_from_confusion(0.5, tn, fp, fn, tp).macro_f1


@dataclass
class ClassifierReport:
    entries: list[ThresholdEntry]
    best_index: int
    default_index: int
    notes: list[str] = field(default_factory=list)

    @property
    def best(self) -> ThresholdEntry:
        return self.entries[self.best_index]

    @property
    def default(self) -> ThresholdEntry:
        return self.entries[self.default_index]

    def macro_f1s(self) -> np.ndarray:
        return np.array([e.macro_f1 for e in self.entries])

    def to_dict(self) -> dict:
        return {
            "thresholds": [e.to_dict() for e in self.entries],
            "best": {"threshold": self.best.threshold, "macro_f1": self.best.macro_f1},
            "default": {"threshold": self.default.threshold, "macro_f1": self.default.macro_f1},
            "notes": list(self.notes),
        }


def best_threshold_index(entries) -> int:
    # highest macro-F1; ties go to the threshold nearest 0.5, then the lower one
    return min(range(len(entries)),
               key=lambda i: (-entries[i].macro_f1, abs(entries[i].threshold - DEFAULT_THRESHOLD),
                              entries[i].threshold))


def report_from_confusion(matrices: dict) -> ClassifierReport:
    """Build a report from ``{threshold: (tn, fp, fn, tp)}``."""
    entries = [entry_from_confusion(t, *matrices[t]) for t in sorted(matrices)]
    thresholds = [e.threshold for e in entries]
    default = thresholds.index(DEFAULT_THRESHOLD) if DEFAULT_THRESHOLD in thresholds else best_threshold_index(entries)
    return ClassifierReport(entries, best_threshold_index(entries), default, [LEAKAGE_NOTE])


def report_from_scores(proba, labels, thresholds=THRESHOLDS) -> ClassifierReport:
    p = np.asarray(proba, dtype=np.float64)
    y = np.asarray(labels)
    if y.size == 0:
        raise DataError("cannot evaluate on an empty test set")
    if p.shape != y.shape:
        raise ContractError("scores and labels differ in length")
    pos = y == 1
    mats = {}
    for t in thresholds:
        pred = p >= t
        tp = int(np.sum(pred & pos))
        fp = int(np.sum(pred & ~pos))
        fn = int(np.sum(~pred & pos))
        tn = int(np.sum(~pred & ~pos))
        mats[float(t)] = (tn, fp, fn, tp)
    rep = report_from_confusion(mats)
    if not pos.any() or pos.all():
        rep.notes.append("test set holds a single label; the absent class's scores are undefined")
    return rep


def evaluate(forest: Forest, test: LabeledDataset, thresholds=THRESHOLDS) -> ClassifierReport:
    if test.n == 0:
        raise DataError("cannot evaluate on an empty test set")
    return report_from_scores(rf_predict_proba(forest, test.features), test.labels, thresholds)
