"""Multilabel evaluation: thresholding, element-wise accuracy, per-class and
macro precision/recall/F1, and report rendering."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import NameCountMismatch, ShapeMismatch


@dataclass(frozen=True)
class ClassStats:
    class_id: int
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvalReport:
    per_class: tuple[ClassStats, ...]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    elementwise_accuracy: float  # percent
    threshold: float
    n_samples: int
    positive_fraction: float = 0.0
    subset_accuracy: float | None = None  # percent, informational only

    @property
    def num_classes(self) -> int:
        return len(self.per_class)


def threshold_predictions(probs, threshold: float = 0.5) -> np.ndarray:
    """1 where ``prob >= threshold`` (inclusive), else 0."""
    return (np.asarray(probs) >= threshold).astype(np.int8)


def _check(pred, truth):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 2:
        raise ShapeMismatch(f"pred {pred.shape} vs truth {truth.shape}")
    return pred.astype(bool), truth.astype(bool)


def elementwise_accuracy(pred, truth) -> float:
    pred, truth = _check(pred, truth)
    if pred.size == 0:
        raise ShapeMismatch("empty label matrix")
    return 100.0 * np.count_nonzero(pred == truth) / pred.size


def subset_accuracy(pred, truth) -> float:
    """Percent of samples whose whole label vector is predicted exactly."""
    pred, truth = _check(pred, truth)
    return 100.0 * np.count_nonzero(np.all(pred == truth, axis=1)) / pred.shape[0]


def _ratio(num, den) -> float:
    return float(num) / float(den) if den else 0.0


def macro_prf(pred, truth) -> tuple[float, float, float, tuple[ClassStats, ...]]:
    """Per-class P/R/F1 (zero denominators give 0) and their unweighted means."""
    pred, truth = _check(pred, truth)
    tp = np.sum(pred & truth, axis=0)
    fp = np.sum(pred & ~truth, axis=0)
    fn = np.sum(~pred & truth, axis=0)
    tn = np.sum(~pred & ~truth, axis=0)
    rows = []
    for c in range(pred.shape[1]):
        p = _ratio(tp[c], tp[c] + fp[c])
        r = _ratio(tp[c], tp[c] + fn[c])
        f = _ratio(2 * p * r, p + r)
        rows.append(ClassStats(c, int(tp[c]), int(fp[c]), int(fn[c]), int(tn[c]), p, r, f))
    n = max(len(rows), 1)
    return (sum(r.precision for r in rows) / n,
            sum(r.recall for r in rows) / n,
            sum(r.f1 for r in rows) / n,
            tuple(rows))


def evaluate_predictions(probs, truth, threshold: float = 0.5) -> EvalReport:
    truth = np.asarray(truth)
    pred = threshold_predictions(probs, threshold)
    p, r, f, rows = macro_prf(pred, truth)
    return EvalReport(
        per_class=rows,
        macro_precision=p,
        macro_recall=r,
        macro_f1=f,
        elementwise_accuracy=elementwise_accuracy(pred, truth),
        threshold=threshold,
        n_samples=int(truth.shape[0]),
        positive_fraction=float(truth.mean()) if truth.size else 0.0,
        subset_accuracy=subset_accuracy(pred, truth),
    )


REPORT_COLUMNS = ["class_id", "class_name", "tp", "fp", "fn", "tn", "precision", "recall", "f1"]


def _report_rows(report: EvalReport, class_names) -> list[list]:
    if report.n_samples == 0:
        raise ValueError("report covers no samples")
    if class_names is None:
        class_names = [f"class_{c.class_id}" for c in report.per_class]
    if len(class_names) != report.num_classes:
        raise NameCountMismatch(f"{len(class_names)} names for {report.num_classes} classes")
    rows = []
    for c in report.per_class:
        rows.append([c.class_id, class_names[c.class_id], c.tp, c.fp, c.fn, c.tn,
                     round(c.precision, 4), round(c.recall, 4), round(c.f1, 4)])
    rows.append(["macro", "all",
                 sum(c.tp for c in report.per_class), sum(c.fp for c in report.per_class),
                 sum(c.fn for c in report.per_class), sum(c.tn for c in report.per_class),
                 round(report.macro_precision, 4), round(report.macro_recall, 4),
                 round(report.macro_f1, 4)])
    return rows


def report_csv(report: EvalReport, class_names=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for row in _report_rows(report, class_names):
        w.writerow([f"{v:.4f}" if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def report_text(report: EvalReport, class_names=None) -> str:
    rows = _report_rows(report, class_names)
    width = max(10, max(len(str(r[1])) for r in rows))
    head = f"{'id':>5}  {'class':<{width}} {'tp':>6} {'fp':>6} {'fn':>6} {'tn':>6} {'P':>7} {'R':>7} {'F1':>7}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r[0]!s:>5}  {r[1]!s:<{width}} {r[2]:>6} {r[3]:>6} {r[4]:>6} {r[5]:>6} "
                     f"{r[6]:>7.4f} {r[7]:>7.4f} {r[8]:>7.4f}")
    lines.append("")
    lines.append(f"samples: {report.n_samples}  threshold: {report.threshold}")
    lines.append(f"element-wise accuracy: {report.elementwise_accuracy:.4f}%")
    lines.append(f"all-zeros baseline accuracy: {100.0 * (1 - report.positive_fraction):.4f}%")
    if report.subset_accuracy is not None:
        lines.append(f"exact-subset accuracy: {report.subset_accuracy:.4f}%")
    return "\n".join(lines) + "\n"


def parse_report_csv(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))
