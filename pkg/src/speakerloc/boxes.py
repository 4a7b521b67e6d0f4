"""Face/object box proposals, instance scores, and their file formats.

Box file: one record per box,
    clip_id<TAB>frame_index<TAB>x1<TAB>y1<TAB>x2<TAB>y2<TAB>track_id<TAB>gt_label
with track_id "-" when unknown and gt_label one of "speaking",
"not-speaking" or "-". Score files mirror box files with one appended
score column.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .errors import DataError

GT_SPEAKING = "speaking"
GT_NOT_SPEAKING = "not-speaking"


@dataclass(frozen=True)
class FaceBox:
    """A box proposal in normalized [0,1] frame coordinates."""

    frame_index: int
    x1: float
    y1: float
    x2: float
    y2: float
    track_id: int | None = None
    gt_label: str | None = None

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise DataError(f"degenerate box ({self.x1},{self.y1})-({self.x2},{self.y2})")
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not 0.0 <= v <= 1.0:
                raise DataError(f"box coordinate {v} outside [0,1]")
        if self.gt_label not in (None, GT_SPEAKING, GT_NOT_SPEAKING):
            raise DataError(f"unknown gt_label {self.gt_label!r}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def pixel_slice(self, height: int, width: int) -> tuple[slice, slice]:
        """Half-open pixel ranges, rounded outward and clipped to the frame.

        Never empty for a valid box; a range that still collapses after
        clipping is expanded to one pixel.
        """
        import math

        x_lo = max(0, min(width - 1, math.floor(self.x1 * width)))
        x_hi = min(width, max(x_lo + 1, math.ceil(self.x2 * width)))
        y_lo = max(0, min(height - 1, math.floor(self.y1 * height)))
        y_hi = min(height, max(y_lo + 1, math.ceil(self.y2 * height)))
        return slice(y_lo, y_hi), slice(x_lo, x_hi)


@dataclass(frozen=True)
class InstanceScore:
    """A box plus its active-speaker posterior."""

    clip_id: str
    box: FaceBox
    score: float
    source: str  # "cam" or "mil"

    def with_score(self, score: float) -> "InstanceScore":
        return replace(self, score=float(score))


def iou(a: FaceBox, b: FaceBox) -> float:
    """Intersection over union of two boxes in normalized coordinates."""
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def _format_box_fields(clip_id: str, box: FaceBox) -> list[str]:
    return [
        clip_id,
        str(box.frame_index),
        f"{box.x1:.6f}",
        f"{box.y1:.6f}",
        f"{box.x2:.6f}",
        f"{box.y2:.6f}",
        "-" if box.track_id is None else str(box.track_id),
        "-" if box.gt_label is None else box.gt_label,
    ]


def _parse_box_fields(fields: list[str], where: str) -> tuple[str, FaceBox]:
    try:
        clip_id = fields[0]
        box = FaceBox(
            frame_index=int(fields[1]),
            x1=float(fields[2]),
            y1=float(fields[3]),
            x2=float(fields[4]),
            y2=float(fields[5]),
            track_id=None if fields[6] == "-" else int(fields[6]),
            gt_label=None if fields[7] == "-" else fields[7],
        )
    except (ValueError, IndexError) as exc:
        raise DataError(f"{where}: malformed box record: {exc}") from exc
    return clip_id, box


def write_box_file(path: str | Path, boxes: list[tuple[str, FaceBox]]) -> None:
    lines = ["\t".join(_format_box_fields(cid, b)) for cid, b in boxes]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_box_file(path: str | Path) -> list[tuple[str, FaceBox]]:
    out = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read box file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 8:
            raise DataError(f"{path}:{lineno}: expected 8 fields, got {len(fields)}")
        out.append(_parse_box_fields(fields, f"{path}:{lineno}"))
    return out


def write_score_file(path: str | Path, scores: list[InstanceScore]) -> None:
    lines = []
    for s in scores:
        fields = _format_box_fields(s.clip_id, s.box)
        fields.append(f"{s.score:.8f}")
        lines.append("\t".join(fields))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_score_file(path: str | Path, source: str = "file") -> list[InstanceScore]:
    out = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read score file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 9:
            raise DataError(f"{path}:{lineno}: expected 9 fields, got {len(fields)}")
        clip_id, box = _parse_box_fields(fields[:8], f"{path}:{lineno}")
        out.append(InstanceScore(clip_id, box, float(fields[8]), source))
    return out
