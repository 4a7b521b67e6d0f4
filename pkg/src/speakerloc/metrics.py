"""Evaluation metrics and protocol helpers.

ROC/auROC with rank-average tie handling, TPR at a fixed FPR, face-size
and box-count bucketing, IOU-based proposal filtering, and majority-vote
segment labels. Everything here is pure and operates on plain arrays or
the box/score types.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import FaceBox, InstanceScore, iou, GT_NOT_SPEAKING, GT_SPEAKING
from .errors import UndefinedMetricError

# Size-bucket boundaries as fractions of screen area.
SMALL_AREA_MAX = 0.02
MEDIUM_AREA_MAX = 0.15

# Density-bucket boundaries (boxes per frame); 5 and 15 fall in "moderate".
SPARSE_MAX_BOXES = 5
CROWDED_MIN_BOXES = 15

# Conventional operating point for TPR reporting.
DEFAULT_REPORT_FPR = 0.315

TIE_RULES_HEADER = (
    "tie rules: score ties rank-averaged; size buckets small<0.02<=medium<0.15<=large; "
    "box counts 5 and 15 bucket as moderate; majority-vote ties label 1"
)


@dataclass
class EvalReport:
    """ROC points, auROC, TPR-at-FPR readouts, and named sub-reports."""

    roc_points: list[tuple[float, float, float]]  # (fpr, tpr, threshold)
    auroc: float
    tpr_at_fpr: dict[float, float] = field(default_factory=dict)
    buckets: dict[str, "EvalReport"] = field(default_factory=dict)
    n_positive: int = 0
    n_negative: int = 0


def roc_curve(scores, labels) -> list[tuple[float, float, float]]:
    """ROC points sorted by increasing FPR, one per distinct threshold.

    Starts at (0, 0, +inf) and ends at (1, 1, min score). Tied scores
    collapse into a single point, which makes the trapezoidal area equal
    to the Mann-Whitney statistic with half credit for ties.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-d arrays of equal length")
    n_pos = int(labels.sum())
    n_neg = int(len(labels) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"ROC undefined: need both classes, got {n_pos} positive / {n_neg} negative"
        )
    order = np.argsort(-scores, kind="stable")
    scores = scores[order]
    labels = labels[order]
    # Indices where the threshold changes (last of each tie group).
    distinct = np.nonzero(np.diff(scores))[0]
    idx = np.concatenate([distinct, [len(scores) - 1]])
    tp = np.cumsum(labels)[idx]
    fp = (idx + 1) - tp
    points = [(0.0, 0.0, float("inf"))]
    points.extend(
        (float(f) / n_neg, float(t) / n_pos, float(scores[i]))
        for f, t, i in zip(fp, tp, idx)
    )
    return points


def roc_auc(scored: list[tuple[float, int]]) -> EvalReport:
    """Trapezoidal area under the ROC curve for (score, gt_label) pairs."""
    if not scored:
        raise UndefinedMetricError("ROC undefined for empty input")
    scores = [s for s, _ in scored]
    labels = [int(l) for _, l in scored]
    points = roc_curve(scores, labels)
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    auroc = float(np.trapezoid(tpr, fpr))
    report = EvalReport(
        roc_points=points,
        auroc=auroc,
        n_positive=int(sum(labels)),
        n_negative=int(len(labels) - sum(labels)),
    )
    report.tpr_at_fpr[DEFAULT_REPORT_FPR] = tpr_at_fpr(report, DEFAULT_REPORT_FPR)
    return report


def tpr_at_fpr(report: EvalReport, fpr: float) -> float:
    """TPR at the given FPR, linearly interpolated between ROC points."""
    if not 0.0 < fpr <= 1.0:
        raise ValueError(f"fpr must be in (0, 1], got {fpr}")
    xs = np.array([p[0] for p in report.roc_points])
    ys = np.array([p[1] for p in report.roc_points])
    return float(np.interp(fpr, xs, ys))


def instance_pairs(scores: list[InstanceScore]) -> list[tuple[float, int]]:
    """(score, label) pairs from ground-truth-labeled instances."""
    pairs = []
    for s in scores:
        if s.box.gt_label == GT_SPEAKING:
            pairs.append((s.score, 1))
        elif s.box.gt_label == GT_NOT_SPEAKING:
            pairs.append((s.score, 0))
    return pairs


def bucket_by_size(boxes: list[FaceBox]) -> dict[str, list[FaceBox]]:
    """Partition boxes by screen-area fraction: small / medium / large."""
    out: dict[str, list[FaceBox]] = {"small": [], "medium": [], "large": []}
    for b in boxes:
        if b.area < SMALL_AREA_MAX:
            out["small"].append(b)
        elif b.area < MEDIUM_AREA_MAX:
            out["medium"].append(b)
        else:
            out["large"].append(b)
    return out


def bucket_by_density(frames: dict[object, int]) -> dict[str, list[object]]:
    """Partition frames by box count: sparse (<5) / moderate (5..15) / crowded (>15)."""
    out: dict[str, list[object]] = {"sparse": [], "moderate": [], "crowded": []}
    for frame_key, count in frames.items():
        if count < SPARSE_MAX_BOXES:
            out["sparse"].append(frame_key)
        elif count <= CROWDED_MIN_BOXES:
            out["moderate"].append(frame_key)
        else:
            out["crowded"].append(frame_key)
    return out


def iou_filter(
    object_boxes: list[FaceBox],
    face_boxes: list[FaceBox],
    th: float,
) -> list[FaceBox]:
    """Drop object boxes overlapping any same-frame face box with IOU > th.

    Retained boxes are returned labeled not-speaking.
    """
    if not 0.0 <= th <= 1.0:
        raise ValueError(f"IOU threshold {th} outside [0,1]")
    faces_by_frame: dict[int, list[FaceBox]] = {}
    for f in face_boxes:
        faces_by_frame.setdefault(f.frame_index, []).append(f)
    retained = []
    for b in object_boxes:
        faces = faces_by_frame.get(b.frame_index, [])
        if any(iou(b, f) > th for f in faces):
            continue
        retained.append(
            FaceBox(b.frame_index, b.x1, b.y1, b.x2, b.y2, b.track_id, GT_NOT_SPEAKING)
        )
    return retained


def majority_vote_segments(frame_labels, frames_per_segment: int) -> list[int]:
    """Segment labels by majority vote over its frames; exact ties vote 1."""
    if frames_per_segment <= 0:
        raise ValueError("frames_per_segment must be positive")
    labels = [int(x) for x in frame_labels]
    out = []
    for start in range(0, len(labels), frames_per_segment):
        chunk = labels[start:start + frames_per_segment]
        out.append(1 if 2 * sum(chunk) >= len(chunk) else 0)
    return out


def evaluate_scores(
    scores: list[InstanceScore],
    fpr_points: tuple[float, ...] = (DEFAULT_REPORT_FPR,),
    with_buckets: bool = True,
) -> EvalReport:
    """Full report over labeled instances: auROC, TPR readouts, size buckets."""
    report = roc_auc(instance_pairs(scores))
    for f in fpr_points:
        report.tpr_at_fpr[f] = tpr_at_fpr(report, f)
    if with_buckets:
        by_area: dict[str, list[InstanceScore]] = {"small": [], "medium": [], "large": []}
        for s in scores:
            buckets = bucket_by_size([s.box])
            name = next(k for k, v in buckets.items() if v)
            by_area[name].append(s)
        for name, members in by_area.items():
            try:
                report.buckets[name] = roc_auc(instance_pairs(members))
            except UndefinedMetricError:
                continue  # bucket lacks one class; omitted from the report
    return report


def render_report(report: EvalReport, title: str = "evaluation") -> str:
    """Readable text rendition of a report (header documents tie rules)."""
    lines = [f"# {title}", f"# {TIE_RULES_HEADER}"]
    lines.append(f"instances\t{report.n_positive + report.n_negative}")
    lines.append(f"positives\t{report.n_positive}")
    lines.append(f"negatives\t{report.n_negative}")
    lines.append(f"auroc\t{report.auroc:.6f}")
    for f in sorted(report.tpr_at_fpr):
        lines.append(f"tpr@fpr={f:g}\t{report.tpr_at_fpr[f]:.6f}")
    for name in sorted(report.buckets):
        sub = report.buckets[name]
        lines.append(
            f"bucket.{name}\tauroc={sub.auroc:.6f}\tn={sub.n_positive + sub.n_negative}"
        )
    return "\n".join(lines) + "\n"


def plot_roc(reports: dict[str, EvalReport], out_path) -> None:
    """Write a ROC curve figure for one or more named reports."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for name, rep in reports.items():
        xs = [p[0] for p in rep.roc_points]
        ys = [p[1] for p in rep.roc_points]
        ax.plot(xs, ys, label=f"{name} (auROC={rep.auroc:.3f})")
    ax.plot([0, 1], [0, 1], linestyle=":", color="gray")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
