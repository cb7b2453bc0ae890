"""Classification metrics: top-k accuracy and one-vs-rest ROC/AUC.

ROC curves come from a descending threshold sweep with tied scores collapsed
into a single group, so tied regions appear as diagonal segments and the
trapezoidal AUC equals the Mann-Whitney pair-count statistic exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RocCurve",
    "DegenerateClassError",
    "topk_accuracy",
    "roc_curve",
    "multiclass_roc",
    "write_roc_csv",
    "write_roc_svg",
]


class DegenerateClassError(ValueError):
    """Raised when a ROC curve is requested without both label values."""


@dataclass
class RocCurve:
    class_index: int
    points: np.ndarray  # (m, 2) columns (fpr, tpr), from (0,0) to (1,1)
    auc: float


def topk_accuracy(scores, labels, k: int) -> float:
    """Fraction of samples whose true class is among the k highest scores.
    Ties are broken toward the lower class index."""
    scores = np.asarray(getattr(scores, "data", scores), dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, num_classes = scores.shape
    if not 1 <= k <= num_classes:
        raise ValueError(f"k must be in [1, {num_classes}], got {k}")
    hits = 0
    class_ids = np.arange(num_classes)
    for i in range(n):
        # lexsort: primary key -score (descending), secondary class index
        order = np.lexsort((class_ids, -scores[i]))
        if labels[i] in order[:k]:
            hits += 1
    return hits / n if n else 0.0


def roc_curve(scores, labels, class_index: int = 0) -> RocCurve:
    """Threshold sweep over unique scores, descending; tied scores form one
    group. Points run (0,0) -> (1,1); AUC is the trapezoid integral."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pos_total = int(np.sum(labels == 1))
    neg_total = int(np.sum(labels == 0))
    if pos_total == 0 or neg_total == 0:
        raise DegenerateClassError(
            f"class {class_index}: need at least one positive and one negative, "
            f"got {pos_total} positives / {neg_total} negatives"
        )
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]

    fpr = [0.0]
    tpr = [0.0]
    tp = fp = 0
    i = 0
    n = len(scores)
    while i < n:
        j = i
        while j < n and sorted_scores[j] == sorted_scores[i]:
            j += 1
        group = sorted_labels[i:j]
        tp += int(np.sum(group == 1))
        fp += int(np.sum(group == 0))
        fpr.append(fp / neg_total)
        tpr.append(tp / pos_total)
        i = j
    points = np.column_stack([fpr, tpr])
    x, y = points[:, 0], points[:, 1]
    auc = float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) * 0.5))
    return RocCurve(class_index, points, auc)


def multiclass_roc(probabilities, labels) -> list[RocCurve | None]:
    """One-vs-rest curve per class: column k scores, label == k positive.
    Degenerate classes yield None with a warning; the rest are computed."""
    probs = np.asarray(getattr(probabilities, "data", probabilities), dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    num_classes = probs.shape[1]
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    curves: list[RocCurve | None] = []
    for k in range(num_classes):
        binary = (labels == k).astype(np.int64)
        try:
            curves.append(roc_curve(probs[:, k], binary, class_index=k))
        except DegenerateClassError as exc:
            warnings.warn(str(exc), stacklevel=2)
            curves.append(None)
    return curves


def write_roc_csv(curves: list[RocCurve | None], out_dir) -> None:
    """roc_points.csv holds class,fpr,tpr rows; roc_auc.csv holds class,auc."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "roc_points.csv", "w", newline="\n") as fh:
        fh.write("class,fpr,tpr\n")
        for curve in curves:
            if curve is None:
                continue
            for x, y in curve.points:
                # plain-float repr round-trips and avoids numpy scalar reprs
                fh.write(f"{curve.class_index},{float(x)!r},{float(y)!r}\n")
    with open(out / "roc_auc.csv", "w", newline="\n") as fh:
        fh.write("class,auc\n")
        for k, curve in enumerate(curves):
            fh.write(f"{k},{'nan' if curve is None else repr(curve.auc)}\n")


_SVG_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def write_roc_svg(curves: list[RocCurve | None], path, size: int = 420) -> None:
    """Minimal polyline plot for quick inspection; axes run 0..1."""
    pad = 30
    span = size - 2 * pad

    def px(x: float) -> float:
        return pad + x * span

    def py(y: float) -> float:
        return size - pad - y * span

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" '
        'fill="white" stroke="#444"/>',
        f'<line x1="{px(0)}" y1="{py(0)}" x2="{px(1)}" y2="{py(1)}" '
        'stroke="#bbb" stroke-dasharray="4 3"/>',
    ]
    for curve in curves:
        if curve is None:
            continue
        color = _SVG_COLORS[curve.class_index % len(_SVG_COLORS)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in curve.points)
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{pad + 6}" y="{pad + 14 + 14 * curve.class_index}" '
            f'font-size="11" fill="{color}">class {curve.class_index} '
            f"auc={curve.auc:.4f}</text>"
        )
    parts.append("</svg>")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")
