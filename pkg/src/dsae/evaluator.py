"""Trial scoring and equal-error-rate computation.

Trials are labeled pairs of utterance ids, scored by cosine similarity of
their embeddings. The EER estimator sweeps every midpoint between adjacent
distinct scores (plus the infinite endpoints), computes false-acceptance
and false-rejection rates at each, and linearly interpolates the operating
point where they cross; ties resolve toward the lower threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as model_mod
from .errors import DegenerateEmbedding, EvaluationError, FormatError
from .features import FeatureMatrix
from .formats import read_features
from .numcore import NORM_EPS
from .segmenter import WindowPolicy


@dataclass
class Trial:
    label: int  # 1 target, 0 nontarget
    id_a: str
    id_b: str


def read_trials(path: str) -> list[Trial]:
    """Parse `label<TAB>idA<TAB>idB` lines, label in {0, 1}."""
    trials = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise FormatError(f"{path}: {e}") from e
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3 or parts[0] not in ("0", "1"):
            raise FormatError(f"{path}:{lineno}: expected 'label<TAB>idA<TAB>idB' with label 0/1")
        trials.append(Trial(label=int(parts[0]), id_a=parts[1], id_b=parts[2]))
    return trials


def write_trials(path: str, trials: list[Trial]):
    with open(path, "w", encoding="utf-8") as fh:
        for t in trials:
            fh.write(f"{t.label}\t{t.id_a}\t{t.id_b}\n")


def score_trial(emb_a, emb_b) -> float:
    """Cosine similarity of two embeddings, in [-1, 1]."""
    a = np.asarray(emb_a, dtype=np.float64).ravel()
    b = np.asarray(emb_b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na <= NORM_EPS or nb <= NORM_EPS:
        raise DegenerateEmbedding("cannot score a zero-norm embedding")
    return float(np.dot(a, b) / (na * nb))


def _operating_points(scores: np.ndarray, labels: np.ndarray):
    """Candidate thresholds (midpoints plus +/-inf) with FAR/FRR at each."""
    targets = np.sort(scores[labels == 1])
    nontargets = np.sort(scores[labels == 0])
    distinct = np.unique(scores)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    thresholds = np.concatenate(([-np.inf], mids, [np.inf]))
    far = 1.0 - np.searchsorted(nontargets, thresholds, side="left") / nontargets.size
    frr = np.searchsorted(targets, thresholds, side="left") / targets.size
    return thresholds, far, frr


def compute_eer(scores, labels) -> tuple[float, float]:
    """EER and its threshold from trial scores and {0,1} labels.

    FAR(t) is the fraction of nontargets scoring >= t, FRR(t) the fraction
    of targets scoring < t. FAR-FRR falls monotonically from 1 to -1 over
    the swept thresholds; the EER is linearly interpolated inside the first
    interval where it changes sign.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise EvaluationError("scores and labels must be equal-length vectors")
    if not (labels == 1).any() or not (labels == 0).any():
        raise EvaluationError("EER needs at least one target and one nontarget trial")
    thresholds, far, frr = _operating_points(scores, labels)
    diff = far - frr
    k_hi = int(np.argmax(diff <= 0.0))  # first candidate at or below the crossing
    k_lo = k_hi - 1
    d_lo, d_hi = diff[k_lo], diff[k_hi]
    alpha = 0.0 if d_lo == d_hi else d_lo / (d_lo - d_hi)
    eer = far[k_lo] + alpha * (far[k_hi] - far[k_lo])
    t_lo, t_hi = thresholds[k_lo], thresholds[k_hi]
    if alpha <= 0.0:
        threshold = t_lo
    elif alpha >= 1.0:
        threshold = t_hi
    else:
        # interpolating against an infinite endpoint: report the finite bound
        if not np.isfinite(t_lo):
            t_lo = float(scores.min()) - 1.0
        if not np.isfinite(t_hi):
            t_hi = float(scores.max()) + 1.0
        threshold = t_lo + alpha * (t_hi - t_lo)
    return float(eer), float(threshold)


@dataclass
class ScoreReport:
    trials: list = field(default_factory=list)    # included trials
    scores: list = field(default_factory=list)
    eer: float = float("nan")
    threshold: float = float("nan")
    n_target: int = 0
    n_nontarget: int = 0
    n_excluded: int = 0
    excluded: list = field(default_factory=list)  # (trial, reason)

    def key_values(self) -> str:
        return "\n".join([
            f"eer={self.eer!r}",
            f"threshold={self.threshold!r}",
            f"n_target={self.n_target}",
            f"n_nontarget={self.n_nontarget}",
            f"n_excluded={self.n_excluded}",
        ])

    def text(self) -> str:
        lines = [
            f"trials scored: {len(self.scores)} "
            f"({self.n_target} target, {self.n_nontarget} nontarget, {self.n_excluded} excluded)",
            f"equal error rate: {self.eer * 100.0:.3f}% at threshold {self.threshold:.6f}",
        ]
        for trial, reason in self.excluded:
            lines.append(f"excluded: {trial.id_a} vs {trial.id_b}: {reason}")
        return "\n".join(lines)


def report_from_scores(trials: list, scores: list, excluded=None) -> ScoreReport:
    excluded = excluded or []
    report = ScoreReport(trials=list(trials), scores=[float(s) for s in scores],
                         excluded=list(excluded), n_excluded=len(excluded))
    labels = [t.label for t in report.trials]
    report.n_target = sum(labels)
    report.n_nontarget = len(labels) - report.n_target
    report.eer, report.threshold = compute_eer(report.scores, labels)
    return report


class EmbeddingCache:
    """Embed each unique utterance once; repeated lookups are bitwise identical."""

    def __init__(self, params: model_mod.ModelParams, policy: WindowPolicy,
                 features_loader, pooling: str = "attentive"):
        if pooling not in ("attentive", "average"):
            raise EvaluationError(f"unknown pooling {pooling!r}")
        self.params = params
        self.policy = policy
        self.load = features_loader
        self.pooling = pooling
        self._cache = {}

    def get(self, utterance_id: str) -> np.ndarray:
        if utterance_id not in self._cache:
            feats = self.load(utterance_id)
            if self.pooling == "attentive":
                emb, _, _ = model_mod.utterance_embed(feats, self.params, self.policy)
            else:
                emb = model_mod.baseline_average_embed(feats, self.params, self.policy)
            self._cache[utterance_id] = emb
        return self._cache[utterance_id]


def features_dir_loader(features_dir: str):
    def load(utterance_id: str) -> FeatureMatrix:
        values = read_features(f"{features_dir}/{utterance_id}.dsaf")
        return FeatureMatrix(values=values, normalized=True)
    return load


def run_trials(params: model_mod.ModelParams, trials: list, policy: WindowPolicy,
               features_loader, pooling: str = "attentive") -> ScoreReport:
    """Score every trial; unresolvable utterances exclude their trials."""
    cache = EmbeddingCache(params, policy, features_loader, pooling)
    included, scores, excluded = [], [], []
    for trial in trials:
        try:
            score = score_trial(cache.get(trial.id_a), cache.get(trial.id_b))
        except (OSError, FormatError, DegenerateEmbedding) as e:
            excluded.append((trial, str(e)))
            continue
        included.append(trial)
        scores.append(score)
    if not included:
        raise EvaluationError("every trial was excluded")
    return report_from_scores(included, scores, excluded)


# score files -----------------------------------------------------------------


def write_scores(path: str, report: ScoreReport):
    with open(path, "w", encoding="utf-8") as fh:
        for trial, score in zip(report.trials, report.scores):
            fh.write(f"{trial.label}\t{trial.id_a}\t{trial.id_b}\t{score!r}\n")


def read_scores(path: str) -> tuple[list[Trial], list[float]]:
    trials, scores = [], []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise FormatError(f"{path}: {e}") from e
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4 or parts[0] not in ("0", "1"):
            raise FormatError(f"{path}:{lineno}: expected 'label<TAB>idA<TAB>idB<TAB>score'")
        trials.append(Trial(label=int(parts[0]), id_a=parts[1], id_b=parts[2]))
        try:
            scores.append(float(parts[3]))
        except ValueError as e:
            raise FormatError(f"{path}:{lineno}: bad score {parts[3]!r}") from e
    return trials, scores
