"""Weak label generation from subtitles and forced-alignment output.

Parses SRT subtitle files and word-level alignment records, strips
non-speech annotations, filters by alignment confidence, and converts the
resulting speech intervals into segment-level binary labels: presence of
speech (PoS, positive above 10% segment coverage) and voice activity
(VAD, positive above 50% coverage).

All functions here are pure and safe to call from parallel workers.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError, EmptyInputError

logger = logging.getLogger(__name__)

# Default fraction of a segment that must be covered by speech.
POS_FRACTION_THRESHOLD = 0.10
VAD_FRACTION_THRESHOLD = 0.50

# Gap (seconds) below which adjacent word spans are merged; absorbs
# aligner jitter between consecutive words of one utterance.
DEFAULT_MERGE_GAP_S = 0.1

# Words aligned below this confidence are discarded.
DEFAULT_CONFIDENCE_THRESHOLD = 0.8


class LabelKind(enum.Enum):
    POS = "pos"
    VAD = "vad"

    @property
    def default_threshold(self) -> float:
        return POS_FRACTION_THRESHOLD if self is LabelKind.POS else VAD_FRACTION_THRESHOLD


@dataclass(frozen=True)
class SubtitleCue:
    """One timed subtitle entry."""

    index: int
    start_s: float
    end_s: float
    text: str


@dataclass(frozen=True)
class AlignedWord:
    """One word with aligner timing and confidence."""

    word: str
    start_s: float
    end_s: float
    confidence: float

    def __post_init__(self):
        if self.start_s > self.end_s:
            raise DataError(f"word {self.word!r}: start {self.start_s} > end {self.end_s}")
        if not 0.0 <= self.confidence <= 1.0:
            raise DataError(f"word {self.word!r}: confidence {self.confidence} outside [0,1]")


@dataclass(frozen=True)
class SpeechIntervalSet:
    """Non-overlapping, sorted speech intervals clipped to [0, total_duration_s]."""

    intervals: tuple[tuple[float, float], ...]
    total_duration_s: float

    @classmethod
    def from_intervals(cls, intervals, total_duration_s: float | None = None) -> "SpeechIntervalSet":
        """Normalize raw (start, end) pairs: sort, merge overlaps, clip.

        When total_duration_s is omitted the largest endpoint is used.
        """
        cleaned = [(float(a), float(b)) for a, b in intervals if b > a]
        cleaned.sort()
        if total_duration_s is None:
            total_duration_s = cleaned[-1][1] if cleaned else 0.0
        merged: list[list[float]] = []
        for a, b in cleaned:
            a = max(a, 0.0)
            b = min(b, total_duration_s)
            if b <= a:
                continue
            if merged and a <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], b)
            else:
                merged.append([a, b])
        return cls(tuple((a, b) for a, b in merged), float(total_duration_s))

    def overlap(self, start: float, end: float) -> float:
        """Total speech duration inside the half-open window [start, end)."""
        total = 0.0
        for a, b in self.intervals:
            if a >= end:
                break
            total += max(0.0, min(b, end) - max(a, start))
        return total

    @property
    def total_speech_s(self) -> float:
        return sum(b - a for a, b in self.intervals)


@dataclass(frozen=True)
class WeakLabelSequence:
    """Binary segment labels for one clip."""

    segment_len_s: float
    labels: tuple[int, ...]
    kind: LabelKind
    fraction_threshold: float = field(default=POS_FRACTION_THRESHOLD)


# SRT timestamps: HH:MM:SS,mmm (some files use '.' for the millisecond
# separator).
_TIME_RE = re.compile(r"(\d+):(\d{1,2}):(\d{1,2})[,.](\d{1,3})")
_ARROW_RE = re.compile(
    r"(\d+:\d{1,2}:\d{1,2}[,.]\d{1,3})\s*-->\s*(\d+:\d{1,2}:\d{1,2}[,.]\d{1,3})"
)


def _parse_timestamp(raw: str) -> float:
    m = _TIME_RE.fullmatch(raw.strip())
    if m is None:
        raise ValueError(f"bad timestamp {raw!r}")
    h, mi, s, ms = m.groups()
    return int(h) * 3600 + int(mi) * 60 + int(s) + int(ms.ljust(3, "0")) / 1000.0


def parse_srt(raw: bytes | str) -> list[SubtitleCue]:
    """Parse SRT-formatted text into cues sorted by start time.

    Malformed cue blocks are skipped (counted in a warning); an input with
    zero parseable cues raises EmptyInputError.
    """
    if isinstance(raw, bytes):
        try:
            text = raw.decode("utf-8-sig")
        except UnicodeDecodeError as exc:
            raise DataError(f"subtitle stream is not valid UTF-8: {exc}") from exc
    else:
        text = raw.lstrip("﻿")

    blocks = re.split(r"\n\s*\n", text.replace("\r\n", "\n").replace("\r", "\n"))
    cues: list[SubtitleCue] = []
    skipped = 0
    for block in blocks:
        lines = [ln for ln in block.split("\n") if ln.strip()]
        if not lines:
            continue
        arrow_at = next((i for i, ln in enumerate(lines) if _ARROW_RE.search(ln)), None)
        if arrow_at is None:
            skipped += 1
            continue
        m = _ARROW_RE.search(lines[arrow_at])
        try:
            start_s = _parse_timestamp(m.group(1))
            end_s = _parse_timestamp(m.group(2))
        except ValueError:
            skipped += 1
            continue
        if not (0.0 <= start_s < end_s):
            skipped += 1
            continue
        index_line = lines[arrow_at - 1].strip() if arrow_at > 0 else ""
        index = int(index_line) if index_line.isdigit() else len(cues) + 1
        body = "\n".join(lines[arrow_at + 1:])
        cues.append(SubtitleCue(index=index, start_s=start_s, end_s=end_s, text=body))

    if skipped:
        logger.warning("parse_srt: skipped %d malformed cue block(s)", skipped)
    if not cues:
        raise EmptyInputError("no parseable subtitle cues in input")
    cues.sort(key=lambda c: (c.start_s, c.end_s))
    return cues


def strip_nonspeech(cue_text: str) -> str:
    """Remove bracketed sound annotations like "[door slams]" or "{music}".

    Content is removed inclusive of the brackets; an unbalanced opening
    bracket strips to the end of the cue. Surrounding whitespace collapses
    to single spaces.
    """
    out = []
    square = curly = 0
    for ch in cue_text:
        if ch == "[":
            square += 1
        elif ch == "]":
            square = max(0, square - 1)
        elif ch == "{":
            curly += 1
        elif ch == "}":
            curly = max(0, curly - 1)
        elif square == 0 and curly == 0:
            out.append(ch)
    return " ".join("".join(out).split())


def filter_by_confidence(
    words: list[AlignedWord],
    threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
    merge_gap_s: float = DEFAULT_MERGE_GAP_S,
    total_duration_s: float | None = None,
) -> tuple[SpeechIntervalSet, float]:
    """Keep word spans aligned with confidence >= threshold.

    Spans separated by gaps smaller than merge_gap_s are merged. Returns
    the interval set and the fraction of words discarded.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"confidence threshold {threshold} outside [0,1]")
    kept = [w for w in words if w.confidence >= threshold]
    discarded_fraction = 1.0 - len(kept) / len(words) if words else 0.0

    kept.sort(key=lambda w: (w.start_s, w.end_s))
    merged: list[list[float]] = []
    for w in kept:
        if merged and w.start_s - merged[-1][1] < merge_gap_s:
            merged[-1][1] = max(merged[-1][1], w.end_s)
        else:
            merged.append([w.start_s, w.end_s])
    spans = [(a, b) for a, b in merged if b > a]
    return SpeechIntervalSet.from_intervals(spans, total_duration_s), discarded_fraction


def make_labels(
    speech: SpeechIntervalSet,
    t: float,
    kind: LabelKind,
    fraction_threshold: float | None = None,
) -> WeakLabelSequence:
    """Binary label per half-open segment [i*t, (i+1)*t).

    A segment is positive iff its speech coverage exceeds
    fraction_threshold * t (strictly).
    """
    if t <= 0:
        raise ValueError(f"segment length t must be positive, got {t}")
    if fraction_threshold is None:
        fraction_threshold = kind.default_threshold
    n_segments = math.ceil(round(speech.total_duration_s / t, 9))
    labels = []
    for i in range(n_segments):
        covered = speech.overlap(i * t, (i + 1) * t)
        labels.append(1 if covered / t > fraction_threshold else 0)
    return WeakLabelSequence(
        segment_len_s=t,
        labels=tuple(labels),
        kind=kind,
        fraction_threshold=fraction_threshold,
    )


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------
# Alignment file: one word per line, `word<TAB>start_s<TAB>end_s<TAB>confidence`,
# optional header. Label file: `segment_index<TAB>start_s<TAB>label` plus a
# JSON sidecar (same path + ".meta.json") recording t, kind and threshold.


def read_alignment_file(path: str | Path) -> list[AlignedWord]:
    words: list[AlignedWord] = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read alignment file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
        if lineno == 1 and parts[0].lower() == "word":
            continue  # header
        try:
            words.append(
                AlignedWord(parts[0], float(parts[1]), float(parts[2]), float(parts[3]))
            )
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    return words


def write_label_file(path: str | Path, seq: WeakLabelSequence) -> None:
    path = Path(path)
    lines = [
        f"{i}\t{i * seq.segment_len_s:.3f}\t{label}"
        for i, label in enumerate(seq.labels)
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta = {
        "segment_len_s": seq.segment_len_s,
        "kind": seq.kind.value,
        "fraction_threshold": seq.fraction_threshold,
        "n_segments": len(seq.labels),
    }
    Path(str(path) + ".meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def read_label_file(path: str | Path) -> WeakLabelSequence:
    path = Path(path)
    meta_path = Path(str(path) + ".meta.json")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"missing label metadata sidecar {meta_path}: {exc}") from exc
    labels = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
        labels.append(int(parts[2]))
    return WeakLabelSequence(
        segment_len_s=float(meta["segment_len_s"]),
        labels=tuple(labels),
        kind=LabelKind(meta["kind"]),
        fraction_threshold=float(meta["fraction_threshold"]),
    )


def labels_from_subtitles(
    srt_bytes: bytes,
    aligned_words: list[AlignedWord],
    t: float,
    kind: LabelKind,
    confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
    fraction_threshold: float | None = None,
    merge_gap_s: float = DEFAULT_MERGE_GAP_S,
    total_duration_s: float | None = None,
) -> WeakLabelSequence:
    """Full pipeline: parse subtitles, keep confidently aligned words that
    fall inside cleaned (non-bracketed) cue text, and emit segment labels.

    Subtitle cues whose text is empty after bracket stripping are treated
    as non-speech: aligned words inside such cues are dropped.
    """
    cues = parse_srt(srt_bytes)
    speech_cues = [c for c in cues if strip_nonspeech(c.text)]
    if total_duration_s is None:
        total_duration_s = max((c.end_s for c in cues), default=0.0)
        if aligned_words:
            total_duration_s = max(total_duration_s, max(w.end_s for w in aligned_words))

    def in_speech_cue(w: AlignedWord) -> bool:
        mid = 0.5 * (w.start_s + w.end_s)
        return any(c.start_s <= mid < c.end_s for c in speech_cues)

    usable = [w for w in aligned_words if in_speech_cue(w)]
    speech, discarded = filter_by_confidence(
        usable, confidence_threshold, merge_gap_s, total_duration_s
    )
    logger.info(
        "labelgen: %d/%d aligned words usable, %.1f%% discarded below confidence %.2f",
        len(usable), len(aligned_words), 100 * discarded, confidence_threshold,
    )
    return make_labels(speech, t, kind, fraction_threshold)
