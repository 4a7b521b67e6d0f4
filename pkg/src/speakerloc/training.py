"""Backbone training: momentum-accelerated SGD on per-segment
presence-of-speech cross-entropy.

Training mutates the model in place (single writer); inference elsewhere
must use a separate instance. Checkpoints and a line-delimited loss
curve (iteration<TAB>loss) are written when an output directory is
given.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
import torch

from .errors import NumericalError
from .model import HiCANet, SegmentBatch, save_checkpoint

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 8
    epochs: int = 10
    grad_clip: float = 5.0
    seed: int = 0
    checkpoint_every: int = 0  # iterations; 0 -> only a final checkpoint


def batch_stream(
    frames: np.ndarray,
    labels: np.ndarray,
    batch_size: int,
    epochs: int,
    seed: int = 0,
) -> Iterator[SegmentBatch]:
    """Shuffled minibatch stream over an in-memory sample array."""
    n = len(frames)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            yield SegmentBatch(frames=frames[idx], labels=labels[idx])


def train_backbone(
    model: HiCANet,
    batches: Iterable[SegmentBatch],
    config: TrainConfig,
    out_dir: str | Path | None = None,
) -> list[tuple[int, float]]:
    """Consume a stream of segment batches, minimizing sigmoid
    cross-entropy between per-segment posteriors and PoS labels.

    Returns the loss curve [(iteration, loss)]. Raises NumericalError on
    divergence (non-finite loss).
    """
    torch.manual_seed(config.seed)
    opt = torch.optim.SGD(
        model.parameters(), lr=config.lr, momentum=config.momentum, nesterov=config.momentum > 0
    )
    loss_fn = torch.nn.BCEWithLogitsLoss()
    curve: list[tuple[int, float]] = []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    model.train()
    for it, batch in enumerate(batches):
        opt.zero_grad()
        logits = model.posterior_logits(torch.from_numpy(batch.frames))
        loss = loss_fn(logits, torch.as_tensor(batch.labels, dtype=torch.float32))
        value = float(loss.detach())
        if not math.isfinite(value):
            raise NumericalError(
                f"training diverged at iteration {it}: loss={value} "
                f"(lr={config.lr}; reduce the learning rate)"
            )
        loss.backward()
        if config.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
        opt.step()
        curve.append((it, value))
        if it % 50 == 0:
            logger.info("train iteration %d loss %.4f", it, value)
        if out_dir is not None and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            save_checkpoint(out_dir / f"backbone_it{it + 1:06d}.pt", model)

    model.eval()
    if out_dir is not None:
        save_checkpoint(out_dir / "backbone.pt", model)
        write_loss_curve(out_dir / "train_curve.tsv", curve)
    return curve


def write_loss_curve(path: str | Path, curve: list[tuple[int, float]]) -> None:
    lines = [f"{it}\t{value:.6f}" for it, value in curve]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def clips_to_arrays(clips, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack synthetic clips into (frames [N,T,H,W,C] in [0,1], labels [N,k])."""
    frames = np.stack([c.frames for c in clips]).astype(np.float32) / 255.0
    labels = np.stack([np.asarray(c.pos_labels.labels[:k]) for c in clips])
    return frames, labels
