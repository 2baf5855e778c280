"""Scikit-learn style front door.

`SegmentAttentiveEmbedder` wraps the training loop and encoder behind the
familiar fit/transform surface so the embedder can sit inside sklearn
pipelines or grid searches: `fit(X, y)` trains on a list of per-utterance
feature matrices with speaker labels, `transform(X)` returns one embedding
row per utterance. Inputs are ragged (variable frame counts), so validation
is done per element instead of via `check_array`.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import model as model_mod
from . import trainer as trainer_mod
from .errors import ContractViolation
from .evaluator import score_trial
from .features import FeatureMatrix
from .segmenter import WindowPolicy


def _validate_feature_list(X, expect_dim=None):
    out = []
    for i, x in enumerate(X):
        a = np.asarray(x, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] < 1:
            raise ContractViolation(f"X[{i}] must be a (frames, dims) matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ContractViolation(f"X[{i}] contains non-finite values")
        if expect_dim is None:
            expect_dim = a.shape[1]
        elif a.shape[1] != expect_dim:
            raise ContractViolation(
                f"X[{i}] has {a.shape[1]} feature dims, expected {expect_dim}")
        out.append(a)
    if not out:
        raise ContractViolation("X is empty")
    return out, expect_dim


class SegmentAttentiveEmbedder(BaseEstimator, TransformerMixin):
    """Trainable utterance embedder with attentive segment pooling.

    Parameters mirror the toolkit's config: model shape, episodic batch
    layout (Q speakers x P utterances), loss weights, and optimizer knobs.
    """

    def __init__(self, layers=1, hidden=32, embed_dim=16, attn_dim=16, attn_heads=2,
                 head_merge="average", speakers_per_batch=4, utterances_per_speaker=2,
                 batches=300, learning_rate=0.001, seg_loss_weight=0.2,
                 penalty_weight=0.001, clip_norm=3.0, window_min=80, window_max=120,
                 test_window=100, seed=0, pooling="attentive"):
        self.layers = layers
        self.hidden = hidden
        self.embed_dim = embed_dim
        self.attn_dim = attn_dim
        self.attn_heads = attn_heads
        self.head_merge = head_merge
        self.speakers_per_batch = speakers_per_batch
        self.utterances_per_speaker = utterances_per_speaker
        self.batches = batches
        self.learning_rate = learning_rate
        self.seg_loss_weight = seg_loss_weight
        self.penalty_weight = penalty_weight
        self.clip_norm = clip_norm
        self.window_min = window_min
        self.window_max = window_max
        self.test_window = test_window
        self.seed = seed
        self.pooling = pooling

    def _policy(self, mode: str) -> WindowPolicy:
        return WindowPolicy(mode=mode, train_min=self.window_min,
                            train_max=self.window_max, test_length=self.test_window)

    def fit(self, X, y):
        """Train on utterance feature matrices X with speaker labels y."""
        matrices, dim = _validate_feature_list(X)
        y = np.asarray(y)
        if y.shape != (len(matrices),):
            raise ContractViolation(
                f"y must have one label per utterance, got shape {y.shape} for {len(matrices)}")
        by_speaker = {}
        for i, (m, label) in enumerate(zip(matrices, y)):
            by_speaker.setdefault(str(label), []).append((f"utt{i}", m))
        dataset = trainer_mod.Dataset(by_speaker)
        model_config = model_mod.ModelConfig(
            input_dim=dim, layers=self.layers, hidden=self.hidden,
            embed_dim=self.embed_dim, attn_dim=self.attn_dim,
            attn_heads=self.attn_heads, head_merge=self.head_merge)
        train_config = trainer_mod.TrainConfig(
            speakers_per_batch=self.speakers_per_batch,
            utterances_per_speaker=self.utterances_per_speaker,
            seg_weight=self.seg_loss_weight, penalty_weight=self.penalty_weight,
            lr=self.learning_rate, clip_norm=self.clip_norm,
            max_batches=self.batches, seed=self.seed)
        state = trainer_mod.init_state(model_config, train_config)
        self.loss_history_ = []
        policy = self._policy("train")
        while state.step < train_config.max_batches:
            batch = trainer_mod.sample_batch(
                dataset, train_config.speakers_per_batch,
                train_config.utterances_per_speaker, state.rng, policy)
            metrics = trainer_mod.train_step(state, batch)
            self.loss_history_.append(metrics["loss"])
        self.params_ = state.params
        self.input_dim_ = dim
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("this SegmentAttentiveEmbedder has not been fitted")

    def transform(self, X) -> np.ndarray:
        """Embed each utterance; rows align with X."""
        self._check_fitted()
        matrices, _ = _validate_feature_list(X, expect_dim=self.input_dim_)
        policy = self._policy("test")
        rows = []
        for m in matrices:
            feats = FeatureMatrix(values=m, normalized=True)
            if self.pooling == "average":
                rows.append(model_mod.baseline_average_embed(feats, self.params_, policy))
            else:
                emb, _, _ = model_mod.utterance_embed(feats, self.params_, policy)
                rows.append(emb)
        return np.stack(rows)

    def score_pairs(self, X_a, X_b) -> np.ndarray:
        """Cosine similarity of paired utterances (one score per pair)."""
        emb_a = self.transform(X_a)
        emb_b = self.transform(X_b)
        if emb_a.shape[0] != emb_b.shape[0]:
            raise ContractViolation("X_a and X_b must pair up one-to-one")
        return np.array([score_trial(a, b) for a, b in zip(emb_a, emb_b)])
