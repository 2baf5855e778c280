"""Audio front end: WAV decoding, log-mel features, silence pruning, and
corpus normalization.

The pipeline is fixed to 16 kHz mono input, 32 ms periodic-Hamming windows
with a 16 ms shift, a 512-point FFT, and 40 triangular mel filters spanning
0-8000 Hz on the HTK mel scale. Per-dimension mean/variance normalization
uses statistics accumulated over the training split only.
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, EmptyFeatures, UnsupportedAudio

LOG_FLOOR = 1e-10


@dataclass
class AudioClip:
    samples: np.ndarray  # float64 in [-1, 1]
    sample_rate: int


@dataclass
class FeatureMatrix:
    values: np.ndarray  # (frames, dims) float64
    normalized: bool = False

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> int:
        return self.values.shape[1]


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    frame_count: int
    clamped: bool = False


@dataclass
class FeatureConfig:
    sample_rate: int = 16000
    window_ms: int = 32
    hop_ms: int = 16
    mel_bins: int = 40
    fmin: float = 0.0
    fmax: float = 8000.0
    vad_enabled: bool = True
    vad_threshold_db: float = 40.0
    vad_min_region: int = 5

    @property
    def window_samples(self) -> int:
        return self.sample_rate * self.window_ms // 1000

    @property
    def hop_samples(self) -> int:
        return self.sample_rate * self.hop_ms // 1000


# audio IO -------------------------------------------------------------------


def read_wav(path: str, expect_rate: int = 16000) -> AudioClip:
    """Decode a RIFF/WAVE file; anything but 16-bit mono PCM at 16 kHz is rejected."""
    try:
        with wave.open(path, "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            comp = w.getcomptype()
            n = w.getnframes()
            raw = w.readframes(n)
    except (wave.Error, EOFError) as e:
        raise UnsupportedAudio(f"{path}: not a readable RIFF/WAVE file ({e})") from e
    if comp != "NONE":
        raise UnsupportedAudio(f"{path}: compression type {comp!r}, expected NONE (PCM)")
    if channels != 1:
        raise UnsupportedAudio(f"{path}: channels={channels}, expected mono")
    if width != 2:
        raise UnsupportedAudio(f"{path}: sample width {width * 8} bit, expected 16 bit")
    if rate != expect_rate:
        raise UnsupportedAudio(f"{path}: sample_rate={rate}, expected {expect_rate}")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples=samples, sample_rate=rate)


def write_wav(path: str, samples: np.ndarray, sample_rate: int = 16000):
    """Write float samples in [-1, 1] as 16-bit mono PCM."""
    pcm = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = (pcm * 32767.0).round().astype("<i2")
    with wave.open(path, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


# framing and mel ------------------------------------------------------------


def periodic_hamming(n: int) -> np.ndarray:
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(clip: AudioClip, win_ms: int = 32, hop_ms: int = 16) -> np.ndarray:
    """Slice a clip into overlapping windowed frames, shape (n_frames, win)."""
    win = clip.sample_rate * win_ms // 1000
    hop = clip.sample_rate * hop_ms // 1000
    n = clip.samples.shape[0]
    if n < win:
        raise EmptyFeatures(f"clip of {n} samples is shorter than one {win}-sample window")
    count = (n - win) // hop + 1
    starts = np.arange(count) * hop
    frames = np.stack([clip.samples[s:s + win] for s in starts])
    return frames * periodic_hamming(win)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = 40, n_fft: int = 512, sample_rate: int = 16000,
                   fmin: float = 0.0, fmax: float = 8000.0) -> np.ndarray:
    """Triangular mel filters, shape (n_mels, n_fft//2 + 1), each peaking at 1."""
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bin_hz = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    weights = np.zeros((n_mels, bin_hz.size))
    for m in range(n_mels):
        left, center, right = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        up = (bin_hz - left) / (center - left)
        down = (right - bin_hz) / (right - center)
        weights[m] = np.clip(np.minimum(up, down), 0.0, None)
    return weights


def logmel(frames: np.ndarray, config: FeatureConfig | None = None) -> FeatureMatrix:
    """Log mel-filterbank energies of windowed frames."""
    config = config or FeatureConfig()
    n_fft = config.window_samples
    spectrum = np.fft.rfft(frames, n=n_fft, axis=1)
    power = spectrum.real ** 2 + spectrum.imag ** 2
    fbank = mel_filterbank(config.mel_bins, n_fft, config.sample_rate,
                           config.fmin, config.fmax)
    mel = power @ fbank.T
    return FeatureMatrix(values=np.log(mel + LOG_FLOOR), normalized=False)


# silence pruning ------------------------------------------------------------


def energy_vad(features: FeatureMatrix, threshold_db: float = 40.0,
               min_region: int = 5) -> np.ndarray:
    """Frame-keep mask from mean log energy relative to the utterance maximum.

    A frame survives when its mean log-mel value is within `threshold_db`
    (converted to natural log of power) of the loudest frame; surviving runs
    shorter than `min_region` frames are discarded.
    """
    if features.normalized:
        raise ContractViolation("energy_vad expects unnormalized features")
    energy = features.values.mean(axis=1)
    cutoff = energy.max() - threshold_db * math.log(10.0) / 10.0
    mask = energy >= cutoff
    # drop short surviving runs
    start = None
    for i in range(mask.size + 1):
        alive = i < mask.size and mask[i]
        if alive and start is None:
            start = i
        elif not alive and start is not None:
            if i - start < min_region:
                mask[start:i] = False
            start = None
    if not mask.any():
        raise EmptyFeatures("all frames pruned by energy gate")
    return mask


def extract(clip: AudioClip, config: FeatureConfig | None = None) -> FeatureMatrix:
    """Full unnormalized front end: frame, log-mel, silence pruning."""
    config = config or FeatureConfig()
    frames = frame_signal(clip, config.window_ms, config.hop_ms)
    feats = logmel(frames, config)
    if config.vad_enabled:
        mask = energy_vad(feats, config.vad_threshold_db, config.vad_min_region)
        feats = FeatureMatrix(values=feats.values[mask], normalized=False)
    return feats


# corpus normalization --------------------------------------------------------


class NormAccumulator:
    """Single-pass per-dimension sum / sum-of-squares accumulator.

    Accumulators for disjoint utterance sets can be combined with `merge`,
    which makes parallel extraction deterministic as long as the merge order
    is fixed.
    """

    def __init__(self, dims: int):
        self.dims = dims
        self.count = 0
        self.total = np.zeros(dims)
        self.total_sq = np.zeros(dims)

    def update(self, features: FeatureMatrix):
        if features.dims != self.dims:
            raise ContractViolation(f"feature dims {features.dims} != accumulator dims {self.dims}")
        self.count += features.frames
        self.total += features.values.sum(axis=0)
        self.total_sq += (features.values ** 2).sum(axis=0)

    def merge(self, other: "NormAccumulator") -> "NormAccumulator":
        if other.dims != self.dims:
            raise ContractViolation("cannot merge accumulators of different dims")
        self.count += other.count
        self.total += other.total
        self.total_sq += other.total_sq
        return self

    def finalize(self) -> NormStats:
        if self.count == 0:
            raise ContractViolation("no frames accumulated")
        mean = self.total / self.count
        var = np.maximum(self.total_sq / self.count - mean ** 2, 0.0)
        std = np.sqrt(var)
        clamped = bool((std < 1e-8).any())
        return NormStats(mean=mean, std=np.maximum(std, 1e-8),
                         frame_count=self.count, clamped=clamped)


def compute_norm_stats(corpus) -> NormStats:
    """Pooled mean/std over an iterator of unnormalized FeatureMatrix."""
    acc = None
    for feats in corpus:
        if acc is None:
            acc = NormAccumulator(feats.dims)
        acc.update(feats)
    if acc is None:
        raise ContractViolation("empty corpus")
    return acc.finalize()


def apply_norm(features: FeatureMatrix, stats: NormStats) -> FeatureMatrix:
    if features.dims != stats.mean.shape[0]:
        raise ContractViolation(f"feature dims {features.dims} != stats dims {stats.mean.shape[0]}")
    return FeatureMatrix(values=(features.values - stats.mean) / stats.std, normalized=True)
