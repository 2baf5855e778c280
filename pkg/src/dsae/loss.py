"""Training objective: utterance-level GE2E, segment-level GE2E, and the
attention-diversity penalty, combined as a weighted sum.

Batches hold Q speakers x P utterances. Every utterance embedding is pulled
toward its speaker centroid and pushed from the others via a scaled-cosine
similarity matrix and a log-softmax-style loss; the same construction is
applied to all segment embeddings against per-speaker segment centroids.
Multi-head attention matrices additionally pay ||A^T A - I||_F^2 to keep
heads from collapsing onto the same segments.

Everything here runs on the autodiff tape so the trainer can differentiate
the total through the pooling network and the LSTM in one backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import model as model_mod
from .errors import ContractViolation, DegenerateEmbedding
from .numcore import NORM_EPS


@dataclass
class BatchEmbeddings:
    """Embeddings of a complete Q x P batch, row-ordered speaker-major."""

    speakers: int        # Q
    per_speaker: int     # P
    utterances: ad.Tensor        # (Q*P, embed_dim)
    segments: ad.Tensor          # (total_segments, embed_dim)
    segment_counts: list         # per utterance, speaker-major order
    attention: list              # per utterance, tensors (N_u, heads)

    def __post_init__(self):
        expected = self.speakers * self.per_speaker
        if self.utterances.value.shape[0] != expected:
            raise ContractViolation(
                f"batch needs {expected} utterances, got {self.utterances.value.shape[0]}")
        if len(self.segment_counts) != expected or len(self.attention) != expected:
            raise ContractViolation("incomplete Q x P grid")
        if sum(self.segment_counts) != self.segments.value.shape[0]:
            raise ContractViolation("segment counts do not match the segment stack")

    @property
    def utterance_speaker(self) -> np.ndarray:
        return np.repeat(np.arange(self.speakers), self.per_speaker)

    @property
    def segment_speaker(self) -> np.ndarray:
        return np.repeat(self.utterance_speaker, self.segment_counts)

    @property
    def segment_utterance(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.segment_counts)), self.segment_counts)


def build_batch_embeddings(params: model_mod.ModelParams, utterance_values: list,
                           speakers: int, per_speaker: int) -> BatchEmbeddings:
    """Forward a batch of stacked-segment arrays (one (N_u, T, F) per utterance).

    All utterances must share the same window length T; their segments are
    run through the encoder as one stack, then pooled per utterance.
    """
    if len(utterance_values) != speakers * per_speaker:
        raise ContractViolation(
            f"expected {speakers * per_speaker} utterances, got {len(utterance_values)}")
    lengths = {a.shape[1] for a in utterance_values}
    if len(lengths) != 1:
        raise ContractViolation(f"segments in a batch must share one window length, got {lengths}")
    counts = [a.shape[0] for a in utterance_values]
    stack = np.concatenate(utterance_values, axis=0)
    seg_emb = model_mod.embed_segment_stack(stack, params)
    pooled, attn = [], []
    offset = 0
    for n in counts:
        e_u = ad.narrow_rows(seg_emb, offset, n)
        pooled_u, a_u = model_mod.pool_utterance(e_u, params)
        pooled.append(pooled_u)
        attn.append(a_u)
        offset += n
    return BatchEmbeddings(
        speakers=speakers,
        per_speaker=per_speaker,
        utterances=ad.concat_rows(pooled),
        segments=seg_emb,
        segment_counts=counts,
        attention=attn,
    )


# similarity and per-level losses ----------------------------------------------


def _group_mean_matrix(groups: np.ndarray, n_groups: int) -> np.ndarray:
    """Constant (n_groups, len(groups)) matrix averaging members of each group."""
    m = np.zeros((n_groups, groups.size))
    for g in range(n_groups):
        members = np.flatnonzero(groups == g)
        if members.size == 0:
            raise ContractViolation(f"group {g} has no members")
        m[g, members] = 1.0 / members.size
    return m


def centroids(batch: BatchEmbeddings) -> ad.Tensor:
    """Per-speaker mean of utterance embeddings, shape (Q, embed_dim)."""
    m = _group_mean_matrix(batch.utterance_speaker, batch.speakers)
    return ad.matmul(ad.constant(m), batch.utterances)


def similarity_matrix(embeddings, cents, w, b) -> ad.Tensor:
    """Scaled cosine similarities: S[r, k] = w * cos(e_r, c_k) + b."""
    e = ad.as_tensor(embeddings)
    c = ad.as_tensor(cents)
    w = ad.as_tensor(w)
    b = ad.as_tensor(b)
    if float(w.value) <= 0.0:
        raise ContractViolation(f"similarity scale w must be positive, got {float(w.value)}")
    e_norms = ad.row_norms(e)
    c_norms = ad.row_norms(c)
    if (e_norms.value <= NORM_EPS).any() or (c_norms.value <= NORM_EPS).any():
        raise DegenerateEmbedding("zero-norm vector in similarity computation")
    cos = ad.div(ad.matmul(e, ad.transpose(c)), ad.matmul(e_norms, ad.transpose(c_norms)))
    return ad.add(ad.mul(w, cos), b)


def ge2e_loss(similarities, true_cols) -> ad.Tensor:
    """Sum over rows of log-sum-exp(row) minus the true-column entry."""
    s = ad.as_tensor(similarities)
    true_cols = np.asarray(true_cols, dtype=int)
    n, k = s.value.shape
    if true_cols.shape != (n,):
        raise ContractViolation(f"need one true column per row, got {true_cols.shape} for {n} rows")
    onehot = np.zeros((n, k))
    onehot[np.arange(n), true_cols] = 1.0
    lse = ad.logsumexp(s, axis=1, keepdims=True)
    return ad.sub(ad.tsum(lse), ad.tsum(ad.mul(s, ad.constant(onehot))))


def _row_cosine(a: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    dots = ad.tsum(ad.mul(a, b), axis=1, keepdims=True)
    return ad.div(dots, ad.mul(ad.row_norms(a), ad.row_norms(b)))


def utterance_ge2e(batch: BatchEmbeddings, w, b, exclude_self: bool = False) -> ad.Tensor:
    """GE2E loss over utterance embeddings vs. speaker centroids.

    With `exclude_self`, the true-speaker column of each row is rescored
    against a centroid that leaves that row's utterance out (the original
    GE2E trick); the plain form uses the full centroid everywhere.
    """
    labels = batch.utterance_speaker
    cents = centroids(batch)
    sims = similarity_matrix(batch.utterances, cents, w, b)
    if exclude_self:
        p = batch.per_speaker
        if p < 2:
            raise ContractViolation("centroid self-exclusion needs at least 2 utterances per speaker")
        w = ad.as_tensor(w)
        b = ad.as_tensor(b)
        rowmap = np.zeros((labels.size, batch.speakers))
        rowmap[np.arange(labels.size), labels] = 1.0
        own = ad.matmul(ad.constant(rowmap), cents)
        excl = ad.mul(ad.sub(ad.mul(own, float(p)), batch.utterances), 1.0 / (p - 1))
        if (ad.row_norms(excl).value <= NORM_EPS).any():
            raise DegenerateEmbedding("zero-norm self-excluded centroid")
        true_col = ad.add(ad.mul(w, _row_cosine(batch.utterances, excl)), b)
        sims = ad.add(ad.mul(sims, ad.constant(1.0 - rowmap)), ad.mul(true_col, ad.constant(rowmap)))
    return ge2e_loss(sims, labels)


def segment_ge2e(batch: BatchEmbeddings, w, b, centroid_mode: str = "speaker") -> ad.Tensor:
    """GE2E loss over all segment embeddings.

    `speaker` centroids pool every segment a speaker contributed to the
    batch; the `utterance` alternative pools within utterances and treats
    each segment's own utterance as its target.
    """
    if centroid_mode == "speaker":
        groups = batch.segment_speaker
        n_groups = batch.speakers
    elif centroid_mode == "utterance":
        groups = batch.segment_utterance
        n_groups = len(batch.segment_counts)
    else:
        raise ContractViolation(f"unknown segment centroid mode {centroid_mode!r}")
    m = _group_mean_matrix(groups, n_groups)
    cents = ad.matmul(ad.constant(m), batch.segments)
    sims = similarity_matrix(batch.segments, cents, w, b)
    return ge2e_loss(sims, groups)


def penalty(attention) -> ad.Tensor:
    """Head-diversity penalty ||A^T A - I||_F^2 for one attention matrix."""
    a = ad.as_tensor(attention)
    heads = a.value.shape[1]
    gram = ad.matmul(ad.transpose(a), a)
    diff = ad.sub(gram, ad.constant(np.eye(heads)))
    return ad.tsum(ad.mul(diff, diff))


@dataclass
class LossBreakdown:
    node: ad.Tensor
    total: float
    utterance: float
    segment: float
    penalty: float


def total_loss(batch: BatchEmbeddings, params: model_mod.ModelParams,
               seg_weight: float = 0.2, penalty_weight: float = 0.001,
               exclude_self: bool = False, segment_centroids: str = "speaker") -> LossBreakdown:
    """Weighted sum of the three terms, differentiable w.r.t. all parameters.

    The diversity penalty only applies with more than one attention head;
    at a single head it is identically zero regardless of its weight.
    """
    if seg_weight < 0 or penalty_weight < 0:
        raise ContractViolation("loss weights must be non-negative")
    w, b = params["sim.w"], params["sim.b"]
    l_u = utterance_ge2e(batch, w, b, exclude_self=exclude_self)
    l_s = segment_ge2e(batch, w, b, centroid_mode=segment_centroids)
    if params.config.attn_heads > 1:
        l_p = ad.as_tensor(sum((penalty(a) for a in batch.attention), ad.constant(0.0)))
    else:
        l_p = ad.constant(0.0)
    node = ad.add(l_u, ad.add(ad.mul(l_s, seg_weight), ad.mul(l_p, penalty_weight)))
    return LossBreakdown(node=node, total=node.item(), utterance=l_u.item(),
                         segment=l_s.item(), penalty=l_p.item())
