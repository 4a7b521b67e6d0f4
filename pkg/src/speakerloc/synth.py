"""Deterministic synthetic audio-visual benchmark with exact ground truth.

Each clip shows 1-4 "faces" (textured rectangles) drifting in disjoint
lanes. At any instant at most one entity speaks; while speaking, its
mouth region flickers periodically. Per-segment audio embeddings are a
clean speech-indicator pattern corrupted by configurable noise. Every
derived label (per-frame speaker, segment PoS/VAD) comes with the clip,
and PoS/VAD go through the same make_labels code path used for real
subtitle data.

Generation is bit-reproducible: clip i draws from a generator seeded by
(seed, i) regardless of worker count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import labelgen
from .boxes import FaceBox, GT_NOT_SPEAKING, GT_SPEAKING, read_box_file, write_box_file
from .errors import ConfigError, DataError
from .labelgen import LabelKind, SpeechIntervalSet, WeakLabelSequence

AUDIO_DIM = 8

# Fixed clean audio patterns; the speech one is deliberately far from the
# silence one so noise level alone controls task difficulty.
_SPEECH_PATTERN = np.array([1, -1, 1, -1, 1, -1, 1, -1], dtype=np.float64)
_SILENCE_PATTERN = -_SPEECH_PATTERN


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_clips: int = 500
    clip_len_s: float = 4.0
    frame_hw: tuple[int, int] = (36, 72)
    fps: int = 8
    segment_len_s: float = 1.0
    n_entities_range: tuple[int, int] = (1, 4)
    # Explicit speech schedule: list of (entity_index, start_s, end_s).
    # None -> a random schedule per clip.
    speaker_schedule: tuple[tuple[int, float, float], ...] | None = None
    drift_speed_px_s: float = 4.0
    jitter_px: float = 0.3
    mouth_flicker: float = 0.8
    flicker_hz: float = 2.0
    audio_noise_level: float = 0.5
    eval_fraction: float = 0.2

    def validate(self) -> None:
        if self.n_clips < 1:
            raise ConfigError("n_clips must be >= 1")
        if self.clip_len_s <= 0 or self.segment_len_s <= 0:
            raise ConfigError("clip_len_s and segment_len_s must be positive")
        if self.mouth_flicker < 0 or self.audio_noise_level < 0:
            raise ConfigError("mouth_flicker and audio_noise_level must be >= 0")
        lo, hi = self.n_entities_range
        if not 1 <= lo <= hi <= 4:
            raise ConfigError(f"n_entities_range must be within [1,4], got {self.n_entities_range}")
        if self.speaker_schedule is not None:
            spans = sorted(self.speaker_schedule, key=lambda s: s[1])
            for (e, a, b) in spans:
                if not 0 <= a < b <= self.clip_len_s:
                    raise ConfigError(f"schedule interval ({a},{b}) outside clip")
                if e >= hi:
                    raise ConfigError(f"schedule references entity {e} >= {hi}")
            for (_, _, b), (_, a2, _) in zip(spans, spans[1:]):
                if a2 < b:
                    raise ConfigError("infeasible schedule: overlapping speakers")

    @property
    def frames_per_clip(self) -> int:
        return int(round(self.clip_len_s * self.fps))

    @property
    def segments_per_clip(self) -> int:
        return int(round(self.clip_len_s / self.segment_len_s))

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["speaker_schedule"] is not None:
            d["speaker_schedule"] = [list(s) for s in d["speaker_schedule"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        d["frame_hw"] = tuple(d["frame_hw"])
        d["n_entities_range"] = tuple(d["n_entities_range"])
        if d.get("speaker_schedule") is not None:
            d["speaker_schedule"] = tuple(tuple(s) for s in d["speaker_schedule"])
        return cls(**d)


@dataclass
class SynthClip:
    clip_id: str
    frames: np.ndarray  # uint8 [T, H, W, 1]
    boxes: list[FaceBox] = field(default_factory=list)
    frame_speaker: np.ndarray = None  # int [T], entity index or -1
    speech_intervals: SpeechIntervalSet = None
    pos_labels: WeakLabelSequence = None
    vad_labels: WeakLabelSequence = None
    audio_embeddings: np.ndarray = None  # float64 [segments, AUDIO_DIM]

    @property
    def frame_vad_mask(self) -> np.ndarray:
        """Oracle per-frame voice-activity indicator (frame center time)."""
        t = np.arange(self.frames.shape[0], dtype=np.float64)
        fps = self.frames.shape[0] / max(self.speech_intervals.total_duration_s, 1e-9)
        centers = (t + 0.5) / fps
        mask = np.zeros(len(t), dtype=np.int64)
        for a, b in self.speech_intervals.intervals:
            mask[(centers >= a) & (centers < b)] = 1
        return mask


def _random_schedule(rng, n_entities, clip_len_s):
    """Alternating speech bouts and silences; one speaker at a time.

    Tuned so roughly half the one-second segments end up PoS-negative,
    which keeps the weak-label training task balanced.
    """
    spans = []
    t = float(rng.uniform(0.0, 1.2))
    while t < clip_len_s - 0.3:
        if rng.uniform() < 0.55:
            entity = int(rng.integers(0, n_entities))
            dur = float(rng.uniform(0.6, 1.6))
            end = min(t + dur, clip_len_s)
            spans.append((entity, t, end))
            t = end
        t += float(rng.uniform(0.8, 2.2))
    return spans


def _entity_geometry(rng, n_entities, hw):
    """Faces live in disjoint horizontal lanes so boxes never overlap."""
    height, width = hw
    lane_w = width // n_entities
    entities = []
    for j in range(n_entities):
        h_hi = max(7, min(14, height - 6))
        face_h = int(rng.integers(min(9, h_hi - 1), h_hi))
        w_lo = max(4, min(7, lane_w - 4))
        w_hi = max(w_lo + 1, min(11, lane_w - 2))
        face_w = int(rng.integers(w_lo, w_hi))
        x_lo, x_hi = j * lane_w + 1, (j + 1) * lane_w - face_w - 1
        x = float(rng.uniform(x_lo, max(x_lo + 1, x_hi)))
        y = float(rng.uniform(2, height - face_h - 2))
        vx = float(rng.uniform(-1, 1))
        vy = float(rng.uniform(-1, 1))
        base = float(rng.uniform(0.45, 0.75))
        entities.append(
            dict(face_h=face_h, face_w=face_w, x=x, y=y, vx=vx, vy=vy,
                 x_lo=x_lo, x_hi=max(x_lo + 1, x_hi), base=base,
                 phase=float(rng.uniform(0, 2 * np.pi)))
        )
    return entities


def generate_clip(config: SynthConfig, clip_index: int) -> SynthClip:
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), int(clip_index)]))
    height, width = config.frame_hw
    n_frames = config.frames_per_clip
    if config.speaker_schedule is not None:
        n_entities = config.n_entities_range[1]
        spans = list(config.speaker_schedule)
    else:
        n_entities = int(
            rng.integers(config.n_entities_range[0], config.n_entities_range[1] + 1)
        )
        spans = _random_schedule(rng, n_entities, config.clip_len_s)

    entities = _entity_geometry(rng, n_entities, config.frame_hw)
    background = rng.uniform(0.10, 0.22, size=(height, width))

    frames = np.zeros((n_frames, height, width, 1), dtype=np.uint8)
    boxes: list[FaceBox] = []
    frame_speaker = np.full(n_frames, -1, dtype=np.int64)

    # Faces are drawn on a 4x supersampled grid and averaged down, so
    # drifting edges fade smoothly instead of toggling whole pixels;
    # otherwise motion itself would flicker harder than any mouth.
    ss = 4
    speed = config.drift_speed_px_s / config.fps
    for f in range(n_frames):
        t_mid = (f + 0.5) / config.fps
        speaking = next((e for (e, a, b) in spans if a <= t_mid < b), -1)
        frame_speaker[f] = speaking

        fine = np.repeat(np.repeat(background, ss, axis=0), ss, axis=1)
        for j, ent in enumerate(entities):
            # linear drift plus jitter, bouncing inside the entity's lane
            ent["x"] += ent["vx"] * speed + rng.normal(0, config.jitter_px)
            ent["y"] += ent["vy"] * speed + rng.normal(0, config.jitter_px)
            if not ent["x_lo"] <= ent["x"] <= ent["x_hi"]:
                ent["vx"] *= -1
                ent["x"] = np.clip(ent["x"], ent["x_lo"], ent["x_hi"])
            if not 1 <= ent["y"] <= height - ent["face_h"] - 1:
                ent["vy"] *= -1
                ent["y"] = np.clip(ent["y"], 1, height - ent["face_h"] - 1)

            fh, fw = ent["face_h"], ent["face_w"]
            x0, y0 = int(round(ent["x"] * ss)), int(round(ent["y"] * ss))
            fhs, fws = fh * ss, fw * ss
            fine[y0:y0 + fhs, x0:x0 + fws] = ent["base"]
            # eyes: two dark dots in the upper third
            ey, eh = y0 + (fhs // 4), ss
            for ex in (x0 + fws // 4, x0 + (3 * fws) // 4):
                fine[ey:ey + eh, ex:ex + eh] = ent["base"] - 0.25
            # mouth: lower-centre patch, flickering while this entity speaks
            my, mx = y0 + (2 * fhs) // 3, x0 + fws // 6
            mh, mw = max(ss, fhs // 4), max(ss, (2 * fws) // 3)
            mouth = ent["base"] - 0.1
            if j == speaking and config.mouth_flicker > 0:
                wave = np.sign(np.sin(2 * np.pi * config.flicker_hz * t_mid + ent["phase"]))
                mouth += 0.5 * config.mouth_flicker * wave
            fine[my:my + mh, mx:mx + mw] = mouth

            x0c, y0c = x0 / ss, y0 / ss
            boxes.append(
                FaceBox(
                    frame_index=f,
                    x1=x0c / width, y1=y0c / height,
                    x2=min(1.0, (x0c + fw) / width), y2=min(1.0, (y0c + fh) / height),
                    track_id=j,
                    gt_label=GT_SPEAKING if j == speaking else GT_NOT_SPEAKING,
                )
            )
        img = fine.reshape(height, ss, width, ss).mean(axis=(1, 3))
        img += rng.normal(0.0, 0.02, size=(height, width))
        frames[f, :, :, 0] = (np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)

    speech = SpeechIntervalSet.from_intervals(
        [(a, b) for (_, a, b) in spans], total_duration_s=config.clip_len_s
    )
    pos = labelgen.make_labels(speech, config.segment_len_s, LabelKind.POS)
    vad = labelgen.make_labels(speech, config.segment_len_s, LabelKind.VAD)

    audio = np.zeros((config.segments_per_clip, AUDIO_DIM), dtype=np.float64)
    for i, label in enumerate(vad.labels):
        clean = _SPEECH_PATTERN if label else _SILENCE_PATTERN
        audio[i] = clean + config.audio_noise_level * rng.normal(size=AUDIO_DIM)

    return SynthClip(
        clip_id=f"clip{clip_index:04d}",
        frames=frames,
        boxes=boxes,
        frame_speaker=frame_speaker,
        speech_intervals=speech,
        pos_labels=pos,
        vad_labels=vad,
        audio_embeddings=audio,
    )


def generate(config: SynthConfig) -> list[SynthClip]:
    """Generate the full dataset; deterministic given config.seed."""
    config.validate()
    return [generate_clip(config, i) for i in range(config.n_clips)]


def split_clip_ids(config: SynthConfig) -> tuple[list[str], list[str]]:
    """Deterministic train/eval split: the tail goes to eval."""
    ids = [f"clip{i:04d}" for i in range(config.n_clips)]
    n_eval = max(1, int(round(config.n_clips * config.eval_fraction)))
    return ids[:-n_eval], ids[-n_eval:]


# ---------------------------------------------------------------------------
# On-disk dataset
# ---------------------------------------------------------------------------
# dataset_dir/
#   manifest.json
#   clips/<clip_id>/frames.npy        uint8 [T, H, W, 1]
#   clips/<clip_id>/boxes.tsv         box file with gt labels
#   clips/<clip_id>/pos_labels.tsv    + .meta.json sidecar
#   clips/<clip_id>/vad_labels.tsv    + .meta.json sidecar
#   clips/<clip_id>/vad_mask.tsv      frame_index<TAB>{0,1}
#   clips/<clip_id>/audio.tsv         segment_id<TAB>floats


def save_dataset(clips: list[SynthClip], config: SynthConfig, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    clips_dir = out_dir / "clips"
    clips_dir.mkdir(parents=True, exist_ok=True)
    for clip in clips:
        d = clips_dir / clip.clip_id
        d.mkdir(exist_ok=True)
        np.save(d / "frames.npy", clip.frames)
        write_box_file(d / "boxes.tsv", [(clip.clip_id, b) for b in clip.boxes])
        labelgen.write_label_file(d / "pos_labels.tsv", clip.pos_labels)
        labelgen.write_label_file(d / "vad_labels.tsv", clip.vad_labels)
        mask_lines = [f"{i}\t{v}" for i, v in enumerate(clip.frame_vad_mask)]
        (d / "vad_mask.tsv").write_text("\n".join(mask_lines) + "\n", encoding="utf-8")
        write_audio_file(d / "audio.tsv", clip.clip_id, clip.audio_embeddings)

    train_ids, eval_ids = split_clip_ids(config)
    manifest = {
        "kind": "synthbench-dataset",
        "config": config.to_dict(),
        "splits": {"train": train_ids, "eval": eval_ids},
        "n_clips": len(clips),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return out_dir


def write_audio_file(path: str | Path, clip_id: str, embeddings: np.ndarray) -> None:
    lines = []
    for i, vec in enumerate(embeddings):
        fields = [f"{clip_id}/{i}"] + [f"{v:.8f}" for v in vec]
        lines.append("\t".join(fields))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_audio_file(path: str | Path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read audio embedding file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) < 2:
            raise DataError(f"{path}:{lineno}: expected segment_id plus floats")
        out[fields[0]] = np.array([float(v) for v in fields[1:]], dtype=np.float64)
    return out


def load_clip(dataset_dir: str | Path, clip_id: str) -> SynthClip:
    d = Path(dataset_dir) / "clips" / clip_id
    if not d.is_dir():
        raise DataError(f"no such clip {clip_id} in {dataset_dir}")
    frames = np.load(d / "frames.npy")
    boxes = [b for _, b in read_box_file(d / "boxes.tsv")]
    pos = labelgen.read_label_file(d / "pos_labels.tsv")
    vad = labelgen.read_label_file(d / "vad_labels.tsv")
    mask = np.array(
        [int(line.split("\t")[1]) for line in (d / "vad_mask.tsv").read_text().splitlines() if line],
        dtype=np.int64,
    )
    audio_map = read_audio_file(d / "audio.tsv")
    audio = np.stack([audio_map[f"{clip_id}/{i}"] for i in range(len(pos.labels))])

    # Reconstruct intervals from the stored mask (frame-rate resolution).
    fps = len(frames) / (len(pos.labels) * pos.segment_len_s)
    intervals = []
    start = None
    for i, v in enumerate(mask):
        if v and start is None:
            start = i / fps
        elif not v and start is not None:
            intervals.append((start, i / fps))
            start = None
    if start is not None:
        intervals.append((start, len(mask) / fps))
    speech = SpeechIntervalSet.from_intervals(intervals, len(pos.labels) * pos.segment_len_s)

    speaker = np.full(len(frames), -1, dtype=np.int64)
    for b in boxes:
        if b.gt_label == GT_SPEAKING and b.track_id is not None:
            speaker[b.frame_index] = b.track_id
    return SynthClip(
        clip_id=clip_id,
        frames=frames,
        boxes=boxes,
        frame_speaker=speaker,
        speech_intervals=speech,
        pos_labels=pos,
        vad_labels=vad,
        audio_embeddings=audio,
    )


def load_manifest(dataset_dir: str | Path) -> dict:
    path = Path(dataset_dir) / "manifest.json"
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read dataset manifest {path}: {exc}") from exc
    if manifest.get("kind") != "synthbench-dataset":
        raise DataError(f"{path} is not a synthetic dataset manifest")
    return manifest


def load_split(dataset_dir: str | Path, split: str) -> list[SynthClip]:
    manifest = load_manifest(dataset_dir)
    if split not in manifest["splits"]:
        raise DataError(f"unknown split {split!r}; have {sorted(manifest['splits'])}")
    return [load_clip(dataset_dir, cid) for cid in manifest["splits"][split]]
