"""Threshold metrics, ROC AUC, per-breast aggregation and model comparison.

Metrics whose denominator is zero are reported as ``None`` (``null`` in JSON,
``undefined`` in text tables) instead of 0 or NaN.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import EmptyPredictions, SingleClassOnly, UndefinedMetric

UNDEFINED_TEXT = "undefined"
TABLE_COLUMNS = ("Model", "AUC", "Precision", "Recall", "Accuracy", "F-score")
_METRIC_FIELDS = ("auc", "precision", "recall", "accuracy", "f1")


@dataclass
class PredictionSet:
    keys: list[str]
    probabilities: np.ndarray
    labels: np.ndarray
    patient_ids: Optional[list[str]] = None
    lateralities: Optional[list[str]] = None
    folds: Optional[list[int]] = None

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.keys)
        if self.probabilities.shape != (n,) or self.labels.shape != (n,):
            raise ValueError("keys, probabilities and labels must have equal length")
        if n and (self.probabilities.min() < 0 or self.probabilities.max() > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if n and not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")

    def __len__(self) -> int:
        return len(self.keys)

    @classmethod
    def from_arrays(cls, scores, labels) -> "PredictionSet":
        scores = np.asarray(scores, dtype=np.float64)
        return cls([str(i) for i in range(len(scores))], scores, labels)

    def select(self, mask) -> "PredictionSet":
        idx = np.flatnonzero(mask)
        pick = lambda seq: None if seq is None else [seq[i] for i in idx]  # noqa: E731
        return PredictionSet(
            [self.keys[i] for i in idx],
            self.probabilities[idx],
            self.labels[idx],
            pick(self.patient_ids),
            pick(self.lateralities),
            pick(self.folds),
        )


def read_predictions_csv(path: str | Path) -> PredictionSet:
    """Load an out-of-fold predictions CSV (keyed by image_id)."""
    keys, probs, labels, pids, lats, folds = [], [], [], [], [], []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            keys.append(row["image_id"])
            probs.append(float(row["probability"]))
            labels.append(int(row["label"]))
            pids.append(row.get("patient_id", ""))
            lats.append(row.get("laterality", ""))
            folds.append(int(row["fold"]) if row.get("fold", "") != "" else -1)
    return PredictionSet(keys, np.array(probs), np.array(labels, dtype=np.int64), pids, lats, folds)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def n(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass
class MetricReport:
    auc: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    accuracy: Optional[float]
    f1: Optional[float]
    threshold: float = 0.5
    confusion: Optional[ConfusionCounts] = None
    n: Optional[int] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        if not d["extra"]:
            d.pop("extra")
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricReport":
        conf = d.get("confusion")
        return cls(
            auc=d.get("auc"),
            precision=d.get("precision"),
            recall=d.get("recall"),
            accuracy=d.get("accuracy"),
            f1=d.get("f1"),
            threshold=d.get("threshold", 0.5),
            confusion=ConfusionCounts(**conf) if conf else None,
            n=d.get("n"),
            extra=dict(d.get("extra", {})),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------- threshold metrics


def _scores_labels(preds) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(preds, PredictionSet):
        return preds.probabilities, preds.labels
    scores, labels = preds
    return np.asarray(scores, dtype=np.float64), np.asarray(labels, dtype=np.int64)


def confusion_at_threshold(preds, threshold: float = 0.5) -> ConfusionCounts:
    """Tally predictions with ``probability >= threshold`` counted positive."""
    scores, labels = _scores_labels(preds)
    if scores.size == 0:
        raise EmptyPredictions("no predictions to evaluate")
    predicted = scores >= threshold
    actual = labels == 1
    return ConfusionCounts(
        tp=int(np.sum(predicted & actual)),
        tn=int(np.sum(~predicted & ~actual)),
        fp=int(np.sum(predicted & ~actual)),
        fn=int(np.sum(~predicted & actual)),
    )


def _ratio(num: float, den: float) -> Optional[float]:
    return None if den == 0 else num / den


def compute_metrics(counts: ConfusionCounts) -> dict[str, Optional[float]]:
    """Precision, recall, accuracy and F1 from confusion counts."""
    precision = _ratio(counts.tp, counts.tp + counts.fp)
    recall = _ratio(counts.tp, counts.tp + counts.fn)
    accuracy = _ratio(counts.tp + counts.tn, counts.n)
    if precision is None or recall is None:
        f1 = None
    else:
        f1 = _ratio(2 * precision * recall, precision + recall)
    return {"precision": precision, "recall": recall, "accuracy": accuracy, "f1": f1}


def f1_from(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall)


# ---------------------------------------------------------------- AUC


def roc_curve(preds) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds), one point per distinct score plus the origin."""
    scores, labels = _scores_labels(preds)
    n_pos = int(np.sum(labels == 1))
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassOnly("ROC needs both positive and negative labels")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    # last index of each run of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tps = np.cumsum(y)[ends]
    fps = (ends + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    return fpr, tpr, np.r_[np.inf, s[ends]]


def roc_auc(preds) -> float:
    """Trapezoidal area under the ROC curve (ties contribute half)."""
    fpr, tpr, _ = roc_curve(preds)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1])) / 2.0)


def roc_auc_pairwise_oracle(preds) -> float:
    """O(P*N) concordance over all positive/negative pairs; for cross-checking only."""
    scores, labels = _scores_labels(preds)
    pos = [float(s) for s, l in zip(scores, labels) if l == 1]
    neg = [float(s) for s, l in zip(scores, labels) if l == 0]
    if not pos or not neg:
        raise SingleClassOnly("AUC needs both positive and negative labels")
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


# ---------------------------------------------------------------- aggregation


def aggregate_per_breast(image_preds: PredictionSet) -> PredictionSet:
    """Mean probability and OR label per (patient_id, laterality)."""
    if image_preds.patient_ids is None or image_preds.lateralities is None:
        raise ValueError("per-breast aggregation needs patient_id and laterality columns")
    groups: dict[tuple[str, str], list[int]] = {}
    for i, key in enumerate(zip(image_preds.patient_ids, image_preds.lateralities)):
        groups.setdefault(key, []).append(i)
    keys, probs, labels, pids, lats, folds = [], [], [], [], [], []
    for (pid, lat), idx in groups.items():
        keys.append(f"{pid}_{lat}")
        probs.append(float(np.mean(image_preds.probabilities[idx])))
        labels.append(int(np.any(image_preds.labels[idx] == 1)))
        pids.append(pid)
        lats.append(lat)
        if image_preds.folds is not None:
            folds.append(image_preds.folds[idx[0]])
    return PredictionSet(
        keys, np.array(probs), np.array(labels, dtype=np.int64), pids, lats, folds if image_preds.folds else None
    )


# ---------------------------------------------------------------- reports


def evaluate_predictions(preds: PredictionSet, threshold: float = 0.5) -> MetricReport:
    counts = confusion_at_threshold(preds, threshold)
    try:
        auc: Optional[float] = roc_auc(preds)
    except SingleClassOnly:
        auc = None
    return MetricReport(auc=auc, threshold=threshold, confusion=counts, n=counts.n, **compute_metrics(counts))


def evaluate_by_fold(preds: PredictionSet, threshold: float = 0.5) -> dict[int, MetricReport]:
    if preds.folds is None:
        return {}
    folds = np.asarray(preds.folds)
    return {int(f): evaluate_predictions(preds.select(folds == f), threshold) for f in sorted(set(preds.folds))}


@dataclass
class ComparisonTable:
    rows: list[tuple[str, MetricReport]]

    def render_text(self) -> str:
        return render_table([(name, {f: getattr(r, f) for f in _METRIC_FIELDS}) for name, r in self.rows])

    def to_dict(self) -> dict:
        return {"columns": list(TABLE_COLUMNS), "rows": [{"model": n, **r.to_dict()} for n, r in self.rows]}


def _sort_key(item: tuple[str, MetricReport]):
    _, r = item
    f1 = r.f1 if r.f1 is not None else -np.inf
    return (-r.auc, -f1)


def compare_models(reports: Mapping[str, MetricReport] | Iterable[tuple[str, MetricReport]]) -> ComparisonTable:
    """Rank models by AUC (descending), breaking ties on F1."""
    items = list(reports.items()) if isinstance(reports, Mapping) else list(reports)
    if not items:
        raise ValueError("no reports to compare")
    for name, r in items:
        if r.auc is None:
            raise UndefinedMetric(f"{name}: AUC undefined")
    return ComparisonTable(rows=sorted(items, key=_sort_key))


def fmt(value: Optional[float], blank: str = UNDEFINED_TEXT) -> str:
    return blank if value is None else f"{value:.4f}"


def render_table(rows: Sequence[tuple[str, Mapping[str, Optional[float]]]], blank: str = UNDEFINED_TEXT) -> str:
    """Aligned plain-text table: Model, AUC, Precision, Recall, Accuracy, F-score."""
    body = [[name] + [fmt(vals.get(f), blank) for f in _METRIC_FIELDS] for name, vals in rows]
    grid = [list(TABLE_COLUMNS)] + body
    widths = [max(len(r[c]) for r in grid) for c in range(len(TABLE_COLUMNS))]
    lines = []
    for i, r in enumerate(grid):
        cells = [r[0].ljust(widths[0])] + [r[c].rjust(widths[c]) for c in range(1, len(r))]
        lines.append("  ".join(cells).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
