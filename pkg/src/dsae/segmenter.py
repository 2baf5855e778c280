"""Sliding-window segmentation of feature matrices.

Training batches share one window length drawn uniformly from [80, 120]
frames; evaluation always uses 100-frame windows. Windows overlap by 50%
(hop = floor(T/2)). Two coverage rules, both switchable, keep every frame
represented: utterances shorter than T are repeat-padded into a single
segment, and a trailing segment anchored at frames-T is appended when the
regular grid would strand tail frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, EmptyFeatures
from .features import FeatureMatrix


@dataclass
class WindowPolicy:
    mode: str = "train"  # train | test
    train_min: int = 80
    train_max: int = 120
    test_length: int = 100
    pad_short: bool = True
    tail_segment: bool = True

    def __post_init__(self):
        if self.mode not in ("train", "test"):
            raise ContractViolation(f"unknown window mode {self.mode!r}")
        if not 1 <= self.train_min <= self.train_max:
            raise ContractViolation("train window range must satisfy 1 <= min <= max")


@dataclass
class Segment:
    utterance_id: str
    start: int
    values: np.ndarray  # (T, F)

    @property
    def length(self) -> int:
        return self.values.shape[0]


def draw_batch_window(policy: WindowPolicy, rng: np.random.Generator) -> int:
    """One window length for a whole batch: uniform in [min, max] (train) or fixed (test)."""
    if policy.mode == "test":
        return policy.test_length
    return int(rng.integers(policy.train_min, policy.train_max + 1))


def segment_starts(frames: int, window: int, tail_segment: bool = True) -> list[int]:
    """Start offsets of the 50%-overlap grid over `frames` (frames >= window)."""
    hop = window // 2
    starts = list(range(0, frames - window + 1, hop))
    if tail_segment and starts[-1] + window < frames:
        starts.append(frames - window)
    return starts


def segment(features: FeatureMatrix, window: int, utterance_id: str = "",
            pad_short: bool = True, tail_segment: bool = True) -> list[Segment]:
    """Split one utterance into fixed-length segments.

    Short utterances are tiled up to `window` frames and yield a single
    segment; otherwise segments start every floor(T/2) frames, plus one
    final segment anchored at frames-T when the grid leaves tail frames
    uncovered.
    """
    frames = features.frames
    if frames == 0:
        raise EmptyFeatures("cannot segment an empty feature matrix")
    if window < 1:
        raise ContractViolation(f"window must be >= 1, got {window}")
    values = features.values
    if frames < window:
        if not pad_short:
            raise EmptyFeatures(
                f"utterance has {frames} frames, shorter than window {window} and padding is off")
        reps = -(-window // frames)  # ceil
        tiled = np.tile(values, (reps, 1))[:window]
        return [Segment(utterance_id=utterance_id, start=0, values=tiled)]
    return [Segment(utterance_id=utterance_id, start=s, values=values[s:s + window])
            for s in segment_starts(frames, window, tail_segment)]
