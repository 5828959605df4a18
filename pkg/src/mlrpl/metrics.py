"""Multi-label evaluation: per-class AP / mAP, overall and per-class P/R/F1.

Conventions:
  - AP is the rank-based running-precision average over positives, ties broken
    by stable input order.
  - CP/CR average the per-class precision/recall ratios; OP/OR pool counts.
  - Zero denominators yield 0 with a report flag instead of an exception.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CSV_COLUMNS = ["proportion", "seed", "epoch", "mAP", "OP", "CP", "OR", "CR", "OF1", "CF1"]


@dataclass
class MetricsReport:
    per_class_ap: list[float]
    mAP: float
    OP: float
    CP: float
    OR: float
    CR: float
    OF1: float
    CF1: float
    meta: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_class_ap": self.per_class_ap,
            "mAP": self.mAP,
            "OP": self.OP,
            "CP": self.CP,
            "OR": self.OR,
            "CR": self.CR,
            "OF1": self.OF1,
            "CF1": self.CF1,
            "meta": self.meta,
            "flags": self.flags,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)

    def csv_row(self) -> list:
        meta = self.meta
        return [
            meta.get("proportion", ""), meta.get("seed", ""), meta.get("epoch", ""),
            self.mAP, self.OP, self.CP, self.OR, self.CR, self.OF1, self.CF1,
        ]


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """AP of one class: mean over positives of precision at each positive's rank.

    `labels` uses +1/-1; requires at least one positive.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be matching 1-D arrays")
    positive = labels == 1
    if not positive.any():
        raise ValueError("average precision undefined without positives")
    order = np.argsort(-scores, kind="stable")
    hits = positive[order]
    cum_hits = np.cumsum(hits)
    precision_at = cum_hits / np.arange(1, len(scores) + 1)
    return float(precision_at[hits].mean())


def mean_average_precision(
    scores: np.ndarray, labels: np.ndarray
) -> tuple[float, list[float], list[str]]:
    """mAP over classes with >= 1 positive; classes without positives are
    excluded and flagged. `scores`/`labels` are (N_images, C)."""
    flags = []
    aps: list[float] = []
    for c in range(scores.shape[1]):
        if (labels[:, c] == 1).any():
            aps.append(average_precision(scores[:, c], labels[:, c]))
        else:
            aps.append(float("nan"))
            flags.append(f"class {c} has no positives; excluded from mAP")
    valid = [a for a in aps if not np.isnan(a)]
    if not valid:
        raise ValueError("no class has positive labels")
    return float(np.mean(valid)), aps, flags


def f1_metrics(pred: np.ndarray, gt: np.ndarray) -> tuple[dict, list[str]]:
    """Overall/per-class precision, recall, F1 from binary predictions.

    `pred` is (N_images, C) in {0, 1}; `gt` is (N_images, C) in {-1, +1}
    (fully annotated). Returns the six metrics and any zero-denominator flags.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError("pred and gt shapes disagree")
    if (gt == 0).any():
        raise ValueError("ground truth must be fully annotated (+1/-1)")
    flags: list[str] = []
    correct = ((pred == 1) & (gt == 1)).sum(axis=0).astype(np.float64)  # N^c_i
    predicted = (pred == 1).sum(axis=0).astype(np.float64)  # N^p_i
    actual = (gt == 1).sum(axis=0).astype(np.float64)  # N^g_i

    def ratio(num, den, name):
        if den == 0:
            flags.append(f"{name}: zero denominator, reported as 0")
            return 0.0
        return num / den

    op = ratio(correct.sum(), predicted.sum(), "OP")
    orr = ratio(correct.sum(), actual.sum(), "OR")
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class_p = np.where(predicted > 0, correct / np.maximum(predicted, 1), 0.0)
        per_class_r = np.where(actual > 0, correct / np.maximum(actual, 1), 0.0)
    if (predicted == 0).any():
        flags.append("CP: some classes have no predictions, counted as 0")
    if (actual == 0).any():
        flags.append("CR: some classes have no positives, counted as 0")
    cp = float(per_class_p.mean())
    cr = float(per_class_r.mean())

    def f1(p, r, name):
        if p + r == 0:
            flags.append(f"{name}: zero denominator, reported as 0")
            return 0.0
        return 2 * p * r / (p + r)

    return (
        {"OP": float(op), "CP": cp, "OR": float(orr), "CR": cr,
         "OF1": f1(op, orr, "OF1"), "CF1": f1(cp, cr, "CF1")},
        flags,
    )


def binarize(scores: np.ndarray, policy: str, threshold: float | None = None,
             top_k: int = 3) -> np.ndarray:
    """Turn a (N_images, C) score matrix into binary predictions.

    "threshold": positive iff score >= t (default t = 1/C, the uniform level
    of the category softmax). "top_k": the k highest-scoring categories per
    image are positive, ties broken by stable input order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n, c = scores.shape
    if policy == "threshold":
        t = 1.0 / c if threshold is None else threshold
        if not (0.0 <= t <= 1.0):
            raise ValueError(f"threshold must be in [0, 1], got {t}")
        return (scores >= t).astype(np.int8)
    if policy == "top_k":
        if not (1 <= top_k <= c):
            raise ValueError(f"top_k must be in [1, C], got {top_k}")
        pred = np.zeros((n, c), dtype=np.int8)
        for i in range(n):
            pred[i, np.argsort(-scores[i], kind="stable")[:top_k]] = 1
        return pred
    raise ValueError(f"unknown binarization policy {policy!r}")


def build_report(scores: np.ndarray, gt: np.ndarray, policy: str = "top_k",
                 threshold: float | None = None, top_k: int = 3,
                 meta: dict | None = None) -> MetricsReport:
    """Full evaluation of a score matrix against fully annotated ground truth."""
    m_ap, per_class, flags = mean_average_precision(scores, gt)
    if policy == "top_k" and top_k > scores.shape[1]:
        flags = flags + [f"top_k {top_k} capped at C={scores.shape[1]}"]
        top_k = scores.shape[1]
    pred = binarize(scores, policy, threshold=threshold, top_k=top_k)
    f1, f1_flags = f1_metrics(pred, gt)
    return MetricsReport(
        per_class_ap=[None if np.isnan(a) else a for a in per_class],
        mAP=m_ap, meta=meta or {}, flags=flags + f1_flags, **f1,
    )


def aggregate_reports(reports: list[MetricsReport]) -> dict:
    """Arithmetic means of mAP / OF1 / CF1 across proportions, one table row
    per proportion (mean +/- std over seeds)."""
    if not reports:
        raise ValueError("no reports to aggregate")
    by_prop: dict[float, list[MetricsReport]] = {}
    for r in reports:
        by_prop.setdefault(r.meta.get("proportion", 1.0), []).append(r)
    rows = []
    for prop in sorted(by_prop):
        group = by_prop[prop]
        rows.append({
            "proportion": prop,
            "n_runs": len(group),
            **{
                key: {
                    "mean": float(np.mean([getattr(r, key) for r in group])),
                    "std": float(np.std([getattr(r, key) for r in group])),
                }
                for key in ("mAP", "OF1", "CF1")
            },
        })
    return {
        "rows": rows,
        "average": {
            key: float(np.mean([row[key]["mean"] for row in rows]))
            for key in ("mAP", "OF1", "CF1")
        },
    }


def write_csv(reports: list[MetricsReport], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for r in reports:
            writer.writerow(r.csv_row())


def write_json(report: MetricsReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2))


def read_json(path: str | Path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(path).read_text()))
