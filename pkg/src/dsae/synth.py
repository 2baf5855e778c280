"""Synthetic speech-like corpus generator.

Each synthetic speaker is a fixed bank of four resonators (8 poles total)
with a base pitch; utterances excite the bank with a pulse train (pitch
jittered per utterance) mixed with noise, so every segment of an utterance
carries the speaker's spectral envelope. Short leading/trailing near-silence
gives the energy gate something to prune. Train utterances are short and
test utterances long, recreating a duration mismatch between the splits.

All randomness derives from (seed, speaker index, utterance index), so a
seed reproduces the corpus byte for byte.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.signal import sosfilt

from .errors import ContractViolation
from .evaluator import Trial, write_trials
from .features import write_wav


@dataclass
class SynthConfig:
    train_speakers: int = 10
    train_utterances: int = 20
    valid_speakers: int = 0
    valid_utterances: int = 4
    test_speakers: int = 5
    test_utterances: int = 8
    train_duration: tuple = (2.0, 4.0)
    valid_duration: tuple = (4.0, 8.0)
    test_duration: tuple = (15.0, 25.0)
    trials: int = 200
    sample_rate: int = 16000
    seed: int = 0


@dataclass
class SpeakerVoice:
    resonances_hz: np.ndarray   # 4 center frequencies
    bandwidths_hz: np.ndarray   # 4 bandwidths
    base_pitch_hz: float
    noise_mix: float


def draw_voice(seed: int, speaker_index: int) -> SpeakerVoice:
    rng = np.random.default_rng([seed, 1000 + speaker_index])
    lows = np.array([250.0, 900.0, 2200.0, 3600.0])
    highs = np.array([850.0, 2100.0, 3500.0, 6200.0])
    return SpeakerVoice(
        resonances_hz=rng.uniform(lows, highs),
        bandwidths_hz=rng.uniform(80.0, 280.0, size=4),
        base_pitch_hz=float(rng.uniform(85.0, 240.0)),
        noise_mix=float(rng.uniform(0.15, 0.4)),
    )


def _resonator_sos(voice: SpeakerVoice, sample_rate: int) -> np.ndarray:
    sos = np.zeros((4, 6))
    for i, (freq, bw) in enumerate(zip(voice.resonances_hz, voice.bandwidths_hz)):
        r = np.exp(-np.pi * bw / sample_rate)
        theta = 2.0 * np.pi * freq / sample_rate
        sos[i] = [1.0, 0.0, 0.0, 1.0, -2.0 * r * np.cos(theta), r * r]
    return sos


def synth_utterance(voice: SpeakerVoice, duration_s: float, rng: np.random.Generator,
                    sample_rate: int = 16000) -> np.ndarray:
    """One utterance: silence, voiced body through the resonator bank, silence."""
    n = int(round(duration_s * sample_rate))
    lead = int(rng.uniform(0.1, 0.3) * sample_rate)
    trail = int(rng.uniform(0.1, 0.3) * sample_rate)
    body = max(n - lead - trail, sample_rate // 2)
    pitch = voice.base_pitch_hz * float(rng.uniform(0.95, 1.05))
    period = max(int(round(sample_rate / pitch)), 8)
    excitation = np.zeros(body)
    excitation[::period] = 1.0
    excitation = (1.0 - voice.noise_mix) * excitation \
        + voice.noise_mix * rng.standard_normal(body) * 0.05
    # slow amplitude contour so energy varies the way speech does
    t = np.arange(body) / sample_rate
    contour = 0.75 + 0.25 * np.sin(2.0 * np.pi * rng.uniform(2.0, 5.0) * t + rng.uniform(0, 2 * np.pi))
    voiced = sosfilt(_resonator_sos(voice, sample_rate), excitation) * contour
    peak = np.abs(voiced).max()
    if peak > 0:
        voiced = voiced * (0.45 / peak)
    silence_scale = 0.45 * 1e-3  # about -60 dB below the voiced peak
    out = np.concatenate([
        rng.standard_normal(lead) * silence_scale,
        voiced,
        rng.standard_normal(trail) * silence_scale,
    ])
    return out[:n] if out.size >= n else np.pad(out, (0, n - out.size))


@dataclass
class ManifestEntry:
    speaker: str
    utterance: str
    path: str
    split: str


def write_manifest(path: str, entries: list[ManifestEntry]):
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(f"{e.speaker}\t{e.utterance}\t{e.path}\t{e.split}\n")


def read_manifest(path: str) -> list[ManifestEntry]:
    from .errors import FormatError
    entries, seen = [], set()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise FormatError(f"{path}: {e}") from e
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4 or parts[3] not in ("train", "valid", "test"):
            raise FormatError(
                f"{path}:{lineno}: expected 'speaker<TAB>utterance<TAB>path<TAB>split'")
        if parts[1] in seen:
            raise FormatError(f"{path}:{lineno}: duplicate utterance id {parts[1]!r}")
        seen.add(parts[1])
        entries.append(ManifestEntry(*parts))
    return entries


def generate_corpus(out_dir: str, cfg: SynthConfig) -> tuple[str, str]:
    """Write WAVs, a manifest, and a test-split trial list under `out_dir`.

    Returns (manifest_path, trials_path).
    """
    if cfg.trials > 0 and cfg.test_speakers < 2:
        raise ContractViolation("trial generation needs at least 2 test speakers")
    wav_dir = os.path.join(out_dir, "wav")
    os.makedirs(wav_dir, exist_ok=True)
    splits = [
        ("train", cfg.train_speakers, cfg.train_utterances, cfg.train_duration),
        ("valid", cfg.valid_speakers, cfg.valid_utterances, cfg.valid_duration),
        ("test", cfg.test_speakers, cfg.test_utterances, cfg.test_duration),
    ]
    entries = []
    speaker_index = 0
    for split, n_speakers, n_utts, (dur_lo, dur_hi) in splits:
        for _ in range(n_speakers):
            voice = draw_voice(cfg.seed, speaker_index)
            spk = f"s{speaker_index:03d}"
            for u in range(n_utts):
                rng = np.random.default_rng([cfg.seed, 1000 + speaker_index, u])
                duration = float(rng.uniform(dur_lo, dur_hi))
                samples = synth_utterance(voice, duration, rng, cfg.sample_rate)
                utt = f"{spk}_u{u:03d}"
                rel = os.path.join("wav", f"{utt}.wav")
                write_wav(os.path.join(out_dir, rel), samples, cfg.sample_rate)
                entries.append(ManifestEntry(speaker=spk, utterance=utt, path=rel, split=split))
            speaker_index += 1
    manifest_path = os.path.join(out_dir, "manifest.tsv")
    write_manifest(manifest_path, entries)
    trials_path = os.path.join(out_dir, "trials.txt")
    write_trials(trials_path, make_trials(entries, cfg.trials, cfg.seed))
    return manifest_path, trials_path


def make_trials(entries: list[ManifestEntry], n_trials: int, seed: int,
                split: str = "test") -> list[Trial]:
    """Balanced target/nontarget pairs over one split, seeded and duplicate-free."""
    by_speaker = {}
    for e in entries:
        if e.split == split:
            by_speaker.setdefault(e.speaker, []).append(e.utterance)
    speakers = sorted(by_speaker)
    if n_trials == 0:
        return []
    if len(speakers) < 2 or any(len(v) < 2 for v in by_speaker.values()):
        raise ContractViolation(
            f"trial generation needs >=2 {split} speakers with >=2 utterances each")
    rng = np.random.default_rng([seed, 424242])
    trials, seen = [], set()
    n_target = n_trials // 2
    guard = 0
    while len(trials) < n_trials and guard < n_trials * 50:
        guard += 1
        if len(trials) < n_target:
            spk = speakers[rng.integers(len(speakers))]
            a, b = rng.choice(len(by_speaker[spk]), size=2, replace=False)
            trial = Trial(1, by_speaker[spk][a], by_speaker[spk][b])
        else:
            i, j = rng.choice(len(speakers), size=2, replace=False)
            a = by_speaker[speakers[i]][rng.integers(len(by_speaker[speakers[i]]))]
            b = by_speaker[speakers[j]][rng.integers(len(by_speaker[speakers[j]]))]
            trial = Trial(0, a, b)
        key = (trial.label, trial.id_a, trial.id_b)
        if key in seen:
            continue
        seen.add(key)
        trials.append(trial)
    return trials
