"""Cross-modal visual backbone.

A short-context 3D convolutional stack followed by three stacked
convolutional bidirectional LSTM layers (HiCA: hierarchical context
aggregation). The network observes raw frames and emits one
presence-of-speech posterior per one-second segment, while preserving
the spatial and temporal axes of every recurrent layer so class
activation maps can be computed at any level.
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError

CHECKPOINT_FORMAT_VERSION = 1

# Layer tags exposed for activation capture / CAM computation.
LAYER_CONV = "conv"          # output of the last 3D conv block
LAYER_REC = ("rec1", "rec2", "rec3")
LAYER_LAST = "rec3"


@dataclass(frozen=True)
class ConvBlockSpec:
    """One 3D conv block: channels, kernel/stride/padding as (t, h, w)."""

    filters: int
    kernel: tuple[int, int, int]
    stride: tuple[int, int, int]
    padding: tuple[int, int, int]

    def out_size(self, size: tuple[int, int, int]) -> tuple[int, int, int]:
        return tuple(
            (s + 2 * p - k) // st + 1
            for s, k, st, p in zip(size, self.kernel, self.stride, self.padding)
        )


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and sampling geometry of the backbone.

    The declared embedding geometry (embed_hw, embed_fps) is verified
    against the conv-stack stride arithmetic at construction time.
    recurrent_filters are per-direction hidden sizes; bidirectional
    outputs concatenate to twice that many channels.
    """

    input_hw: tuple[int, int] = (180, 360)
    input_fps: int = 24
    in_channels: int = 3
    embed_hw: tuple[int, int] = (12, 23)
    embed_fps: int = 6
    conv_blocks: tuple[ConvBlockSpec, ...] = (
        ConvBlockSpec(16, (3, 5, 5), (1, 3, 3), (1, 0, 0)),
        ConvBlockSpec(32, (3, 3, 5), (2, 5, 5), (1, 0, 0)),
        ConvBlockSpec(64, (3, 3, 3), (2, 1, 1), (1, 1, 1)),
    )
    recurrent_filters: tuple[int, ...] = (32, 32, 32)
    t_s: float = 1.0
    k: int = 10

    @classmethod
    def small(cls, k: int = 4) -> "ModelConfig":
        """Desk-scale configuration for synthetic data and CPU runs."""
        return cls(
            input_hw=(36, 72),
            input_fps=8,
            in_channels=1,
            embed_hw=(9, 18),
            embed_fps=2,
            conv_blocks=(
                ConvBlockSpec(8, (3, 3, 3), (1, 2, 2), (1, 1, 1)),
                ConvBlockSpec(16, (3, 3, 3), (2, 2, 2), (1, 1, 1)),
                ConvBlockSpec(24, (3, 3, 3), (2, 1, 1), (1, 1, 1)),
            ),
            recurrent_filters=(12, 12, 12),
            t_s=1.0,
            k=k,
        )

    @classmethod
    def tiny(cls, k: int = 2) -> "ModelConfig":
        """Minimal configuration (< 10k parameters) for numerical tests."""
        return cls(
            input_hw=(12, 20),
            input_fps=4,
            in_channels=1,
            embed_hw=(6, 10),
            embed_fps=1,
            conv_blocks=(
                ConvBlockSpec(4, (3, 3, 3), (2, 2, 2), (1, 1, 1)),
                ConvBlockSpec(6, (3, 3, 3), (2, 1, 1), (1, 1, 1)),
            ),
            recurrent_filters=(3, 3, 3),
            t_s=1.0,
            k=k,
        )

    # -- geometry -----------------------------------------------------------

    @property
    def frames_per_sample(self) -> int:
        return int(round(self.k * self.t_s * self.input_fps))

    @property
    def embed_frames_per_segment(self) -> int:
        return int(round(self.t_s * self.embed_fps))

    @property
    def embed_frames_per_sample(self) -> int:
        return int(round(self.k * self.t_s * self.embed_fps))

    def conv_output_size(self) -> tuple[int, int, int]:
        size = (self.frames_per_sample, *self.input_hw)
        for block in self.conv_blocks:
            size = block.out_size(size)
        return size

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.t_s <= 0:
            raise ConfigError(f"t_s must be positive, got {self.t_s}")
        if len(self.recurrent_filters) == 0:
            raise ConfigError("at least one recurrent layer is required (CAM source)")
        if not self.conv_blocks:
            raise ConfigError("at least one conv block is required")
        if self.input_fps % self.embed_fps != 0:
            raise ConfigError(
                f"input_fps {self.input_fps} must be a multiple of embed_fps {self.embed_fps}"
            )
        t_out, h_out, w_out = self.conv_output_size()
        if (h_out, w_out) != tuple(self.embed_hw):
            raise ConfigError(
                f"conv stack produces spatial size {(h_out, w_out)}, "
                f"config declares embed_hw {tuple(self.embed_hw)}"
            )
        if t_out != self.embed_frames_per_sample:
            raise ConfigError(
                f"conv stack produces {t_out} temporal steps, "
                f"expected {self.embed_frames_per_sample} at {self.embed_fps} fps"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["conv_blocks"] = tuple(
            ConvBlockSpec(
                int(b["filters"]),
                tuple(b["kernel"]),
                tuple(b["stride"]),
                tuple(b["padding"]),
            )
            for b in d["conv_blocks"]
        )
        d["input_hw"] = tuple(d["input_hw"])
        d["embed_hw"] = tuple(d["embed_hw"])
        d["recurrent_filters"] = tuple(d["recurrent_filters"])
        return cls(**d)


class ConvLSTMCell(nn.Module):
    """Convolutional LSTM cell: gates are 3x3 convolutions over [x, h]."""

    def __init__(self, in_channels: int, hidden_channels: int):
        super().__init__()
        self.hidden_channels = hidden_channels
        self.gates = nn.Conv2d(
            in_channels + hidden_channels, 4 * hidden_channels, kernel_size=3, padding=1
        )

    def forward(self, x, state):
        h, c = state
        i, f, o, g = torch.chunk(self.gates(torch.cat([x, h], dim=1)), 4, dim=1)
        i, f, o = torch.sigmoid(i), torch.sigmoid(f), torch.sigmoid(o)
        c = f * c + i * torch.tanh(g)
        h = o * torch.tanh(c)
        return h, c


class ConvBiLSTM(nn.Module):
    """Bidirectional convolutional LSTM over the temporal axis.

    Input/output: [B, C, T, H, W]; forward and backward hidden states are
    concatenated along channels, so out_channels = 2 * hidden_channels.
    The spatial and temporal axes are preserved.
    """

    def __init__(self, in_channels: int, hidden_channels: int):
        super().__init__()
        self.fwd = ConvLSTMCell(in_channels, hidden_channels)
        self.bwd = ConvLSTMCell(in_channels, hidden_channels)
        self.out_channels = 2 * hidden_channels

    def _run(self, cell, xs):
        b, _, h, w = xs[0].shape
        hidden = xs[0].new_zeros(b, cell.hidden_channels, h, w)
        cstate = torch.zeros_like(hidden)
        outs = []
        for x in xs:
            hidden, cstate = cell(x, (hidden, cstate))
            outs.append(hidden)
        return outs

    def forward(self, x):
        xs = list(torch.unbind(x, dim=2))
        f_out = self._run(self.fwd, xs)
        b_out = self._run(self.bwd, xs[::-1])[::-1]
        return torch.stack([torch.cat([f, b], dim=1) for f, b in zip(f_out, b_out)], dim=2)


class HiCANet(nn.Module):
    """The backbone network.

    forward_stage() exposes each named stage so activations can be
    captured at one layer and the remaining computation replayed from
    there (needed by gradient-map code and its finite-difference checks).
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config

        convs = []
        in_ch = config.in_channels
        for block in config.conv_blocks:
            convs.append(
                nn.Sequential(
                    nn.Conv3d(
                        in_ch, block.filters,
                        kernel_size=block.kernel, stride=block.stride, padding=block.padding,
                    ),
                    nn.GroupNorm(num_groups=math.gcd(4, block.filters), num_channels=block.filters),
                )
            )
            in_ch = block.filters
        self.convs = nn.ModuleList(convs)

        recs = []
        for hidden in config.recurrent_filters:
            layer = ConvBiLSTM(in_ch, hidden)
            in_ch = layer.out_channels
            recs.append(layer)
        self.recs = nn.ModuleList(recs)

        self.embed_channels = in_ch
        self.project = nn.Conv2d(in_ch, 1, kernel_size=1)

    # -- staged forward -----------------------------------------------------

    def layer_tags(self) -> list[str]:
        return [LAYER_CONV] + [f"rec{i + 1}" for i in range(len(self.recs))]

    def forward_stage(self, x, upto: str):
        """Run from raw frames [B, C, T, H, W] up to and including `upto`."""
        tags = self.layer_tags()
        if upto not in tags:
            raise ValueError(f"unknown layer tag {upto!r}; available: {tags}")
        for conv in self.convs:
            x = F.relu(conv(x))
        if upto == LAYER_CONV:
            return x
        stop = int(upto[3:])
        for i, rec in enumerate(self.recs, start=1):
            x = rec(x)
            if i == stop:
                return x
        return x

    def forward_from(self, activations, tag: str):
        """Posterior logits [B, k] recomputed from a layer's activations."""
        tags = self.layer_tags()
        if tag not in tags:
            raise ValueError(f"unknown layer tag {tag!r}; available: {tags}")
        x = activations
        if tag != f"rec{len(self.recs)}":
            start = 0 if tag == LAYER_CONV else int(tag[3:])
            for rec in self.recs[start:]:
                x = rec(x)
        return self._head(x)

    def _head(self, embedding):
        """Per-segment logits: shared 1x1 projection, then global pooling
        over space and over the embedding frames of each segment."""
        b, c, t, h, w = embedding.shape
        per_seg = self.config.embed_frames_per_segment
        if t % per_seg != 0:
            raise ValueError(f"temporal size {t} not divisible by {per_seg} frames/segment")
        maps = self.project(embedding.permute(0, 2, 1, 3, 4).reshape(b * t, c, h, w))
        logits = maps.mean(dim=(1, 2, 3)).reshape(b, t // per_seg, per_seg).mean(dim=2)
        return logits

    def forward(self, frames, return_embedding: bool = False):
        """frames: [B, T, H, W, C] floats in [0, 1] -> posteriors [B, k].

        With return_embedding, also returns the last recurrent layer's
        activations as [B, T', H', W', M].
        """
        x = self._to_internal(frames)
        emb = self.forward_stage(x, f"rec{len(self.recs)}")
        logits = self._head(emb)
        posteriors = torch.sigmoid(logits)
        if return_embedding:
            return posteriors, emb.permute(0, 2, 3, 4, 1)
        return posteriors

    def _to_internal(self, frames):
        """Validate a [B, T, H, W, C] batch and permute to [B, C, T, H, W]."""
        if not torch.is_tensor(frames):
            frames = torch.as_tensor(np.asarray(frames), dtype=torch.float32)
        if frames.ndim != 5:
            raise ValueError(f"expected [B, T, H, W, C] frames, got shape {tuple(frames.shape)}")
        b, t, h, w, c = frames.shape
        cfg = self.config
        expected = (cfg.frames_per_sample, *cfg.input_hw, cfg.in_channels)
        if (t, h, w, c) != expected:
            raise ValueError(
                f"frame batch shape {(t, h, w, c)} does not match config {expected}"
            )
        return frames.permute(0, 4, 1, 2, 3).float() - 0.5

    def posterior_logits(self, frames):
        x = self._to_internal(frames)
        return self._head(self.forward_stage(x, f"rec{len(self.recs)}"))

    def parameter_digest(self) -> str:
        """SHA-256 over all parameter bytes; detects any weight change."""
        h = hashlib.sha256()
        for name, p in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
        return h.hexdigest()


@dataclass
class SegmentBatch:
    """A batch of k-segment frame windows plus their weak labels.

    frames: float [batch, k*t*fps, H, W, C] in [0, 1]
    labels: int {0,1} [batch, k]
    """

    frames: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        self.labels = np.asarray(self.labels)
        if self.frames.ndim != 5:
            raise ValueError(f"frames must be 5-d, got shape {self.frames.shape}")
        if self.labels.ndim != 2 or self.labels.shape[0] != self.frames.shape[0]:
            raise ValueError(
                f"labels shape {self.labels.shape} incompatible with batch {self.frames.shape[0]}"
            )
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be binary")


def forward(model: HiCANet, batch: SegmentBatch) -> tuple[np.ndarray, np.ndarray]:
    """Inference: per-segment PoS posteriors and the last-layer embedding map.

    Returns (posteriors [batch, k], embedding [batch, T', H', W', M]).
    """
    if batch.labels.shape[1] != model.config.k:
        raise ValueError(
            f"batch has {batch.labels.shape[1]} segments, model expects {model.config.k}"
        )
    model.eval()
    with torch.no_grad():
        posteriors, emb = model(torch.from_numpy(batch.frames), return_embedding=True)
    return posteriors.numpy(), emb.numpy()


def build_model(config: ModelConfig, seed: int = 0) -> HiCANet:
    """Construct the backbone with deterministic initialization."""
    torch.manual_seed(seed)
    model = HiCANet(config)
    model.eval()
    return model


def save_checkpoint(path, model: HiCANet, extra: dict | None = None) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "backbone",
        "config": model.config.to_dict(),
        "state_dict": model.state_dict(),
    }
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)


def load_checkpoint(path) -> HiCANet:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format version {version!r}")
    if payload.get("kind") != "backbone":
        raise ConfigError(f"checkpoint {path} is not a backbone checkpoint")
    config = ModelConfig.from_dict(payload["config"])
    model = HiCANet(config)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model


def state_digest(state_dict: dict) -> str:
    """SHA-256 digest of an arbitrary state dict (used for frozen checks)."""
    h = hashlib.sha256()
    for name in sorted(state_dict):
        h.update(name.encode())
        buf = io.BytesIO()
        np.save(buf, state_dict[name].detach().cpu().numpy())
        h.update(buf.getvalue())
    return h.hexdigest()
