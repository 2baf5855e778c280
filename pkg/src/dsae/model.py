"""Segment encoder and attentive pooling.

A stack of LSTM layers reads each fixed-length segment; the projected last
hidden state, L2-normalized, is the segment embedding. Per utterance, a
small attention network scores every segment under one or more heads, and
the heads' weighted sums are merged into the utterance embedding.

All forward passes run on the autodiff tape so the training loss can
backpropagate through every stage; evaluation simply never calls backward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractViolation, DegenerateEmbedding
from .features import FeatureMatrix
from .numcore import NORM_EPS
from .segmenter import WindowPolicy, draw_batch_window, segment

GATES = ("i", "f", "c", "o")


@dataclass
class ModelConfig:
    input_dim: int = 40
    layers: int = 1
    hidden: int = 32
    embed_dim: int = 16
    attn_dim: int = 16
    attn_heads: int = 2
    head_merge: str = "average"  # average | concat
    renorm_utterance: bool = False

    def __post_init__(self):
        if self.head_merge not in ("average", "concat"):
            raise ContractViolation(f"unknown head_merge {self.head_merge!r}")
        for name in ("input_dim", "layers", "hidden", "embed_dim", "attn_dim", "attn_heads"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be >= 1")


def parameter_shapes(config: ModelConfig) -> dict[str, tuple]:
    shapes = {}
    for layer in range(config.layers):
        in_dim = config.input_dim if layer == 0 else config.hidden
        for g in GATES:
            shapes[f"lstm{layer}.w_x{g}"] = (in_dim, config.hidden)
            shapes[f"lstm{layer}.w_h{g}"] = (config.hidden, config.hidden)
            shapes[f"lstm{layer}.b_{g}"] = (config.hidden,)
    shapes["proj.w"] = (config.hidden, config.embed_dim)
    shapes["attn.w1"] = (config.embed_dim, config.attn_dim)
    shapes["attn.w2"] = (config.attn_dim, config.attn_heads)
    if config.head_merge == "concat":
        shapes["merge.w"] = (config.attn_heads * config.embed_dim, config.embed_dim)
    shapes["sim.w"] = ()
    shapes["sim.b"] = ()
    return shapes


class ModelParams:
    """All trainable weights, held as gradient-tracking tensors."""

    def __init__(self, config: ModelConfig, arrays: dict[str, np.ndarray]):
        self.config = config
        expected = parameter_shapes(config)
        if set(arrays) != set(expected):
            missing = sorted(set(expected) - set(arrays))
            extra = sorted(set(arrays) - set(expected))
            raise ContractViolation(f"parameter set mismatch: missing={missing} extra={extra}")
        self.tensors = {}
        for name in sorted(expected):
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != expected[name]:
                raise ContractViolation(
                    f"parameter {name}: shape {a.shape}, expected {expected[name]}")
            self.tensors[name] = ad.Tensor(a, requires_grad=True)

    @classmethod
    def initialize(cls, config: ModelConfig, rng: np.random.Generator) -> "ModelParams":
        """Uniform(-k, k) with k = 1/sqrt(fan_in); forget-gate bias +1; w=10, b=5."""
        arrays = {}
        for name, shape in parameter_shapes(config).items():
            if name == "sim.w":
                arrays[name] = np.asarray(10.0)
            elif name == "sim.b":
                arrays[name] = np.asarray(5.0)
            elif name.startswith("lstm") and ".b_" in name:
                bias = np.zeros(shape)
                if name.endswith("b_f"):
                    bias += 1.0
                arrays[name] = bias
            else:
                k = 1.0 / np.sqrt(shape[0])
                arrays[name] = rng.uniform(-k, k, size=shape)
        return cls(config, arrays)

    def __getitem__(self, name: str) -> ad.Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self.tensors.items()}

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()

    def gradients(self) -> dict[str, np.ndarray]:
        return {k: (t.grad if t.grad is not None else np.zeros_like(t.value))
                for k, t in self.tensors.items()}


# forward passes ---------------------------------------------------------------


def _lstm_layer(x_steps: list, params: ModelParams, layer: int, batch: int) -> list:
    """One LSTM layer over a sequence of (batch, in_dim) tensors."""
    w_x = {g: params[f"lstm{layer}.w_x{g}"] for g in GATES}
    w_h = {g: params[f"lstm{layer}.w_h{g}"] for g in GATES}
    b = {g: params[f"lstm{layer}.b_{g}"] for g in GATES}
    hidden = params.config.hidden
    h = ad.constant(np.zeros((batch, hidden)))
    c = ad.constant(np.zeros((batch, hidden)))
    outputs = []
    for x_t in x_steps:
        pre = {g: ad.add(ad.add(ad.matmul(x_t, w_x[g]), ad.matmul(h, w_h[g])), b[g]) for g in GATES}
        gate_i = ad.sigmoid(pre["i"])
        gate_f = ad.sigmoid(pre["f"])
        gate_o = ad.sigmoid(pre["o"])
        candidate = ad.tanh(pre["c"])
        c = ad.add(ad.mul(gate_f, c), ad.mul(gate_i, candidate))
        h = ad.mul(gate_o, ad.tanh(c))
        outputs.append(h)
    return outputs


def lstm_outputs(x: np.ndarray, params: ModelParams) -> list:
    """Last-layer hidden states for a stacked segment batch x of shape (S, T, F)."""
    batch, steps, feat_dim = x.shape
    if feat_dim != params.config.input_dim:
        raise ContractViolation(f"input dim {feat_dim} != configured {params.config.input_dim}")
    # time-major constant so each step is a contiguous row block
    flat = ad.constant(np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(steps * batch, feat_dim))
    x_steps = [ad.narrow_rows(flat, t * batch, batch) for t in range(steps)]
    for layer in range(params.config.layers):
        x_steps = _lstm_layer(x_steps, params, layer, batch)
    return x_steps


def lstm_forward(segment_values: np.ndarray, params: ModelParams) -> np.ndarray:
    """Projected output sequence for one segment, shape (T, embed_dim)."""
    seg = np.asarray(segment_values, dtype=np.float64)
    if seg.ndim != 2:
        raise ContractViolation(f"segment must be (T, F), got shape {seg.shape}")
    steps = lstm_outputs(seg[None, :, :], params)
    proj = params["proj.w"]
    return np.concatenate([ad.matmul(h, proj).value for h in steps], axis=0)


def embed_segment_stack(x: np.ndarray, params: ModelParams) -> ad.Tensor:
    """Unit-norm embeddings for stacked segments x (S, T, F) -> tensor (S, embed_dim)."""
    h_last = lstm_outputs(x, params)[-1]
    rep = ad.matmul(h_last, params["proj.w"])
    norms = ad.row_norms(rep)
    if (norms.value <= NORM_EPS).any():
        raise DegenerateEmbedding("segment representation has (near-)zero norm")
    return ad.div(rep, norms)


def segment_embed(segment_values: np.ndarray, params: ModelParams) -> np.ndarray:
    """Embedding of a single segment, unit L2 norm."""
    seg = np.asarray(segment_values, dtype=np.float64)
    return embed_segment_stack(seg[None, :, :], params).value[0].copy()


def attention_scores(embeddings, params: ModelParams) -> ad.Tensor:
    """Per-head softmax weights over segments; columns sum to 1."""
    e = ad.as_tensor(embeddings)
    if e.value.ndim != 2 or e.value.shape[0] < 1:
        raise ContractViolation(f"need (N, embed_dim) embeddings, got shape {e.value.shape}")
    logits = ad.matmul(ad.relu(ad.matmul(e, params["attn.w1"])), params["attn.w2"])
    return ad.softmax(logits, axis=0)


def attentive_pool(embeddings, attention, params: ModelParams) -> ad.Tensor:
    """Merge per-head weighted sums of segment embeddings, shape (1, embed_dim)."""
    e = ad.as_tensor(embeddings)
    a = ad.as_tensor(attention)
    if a.value.shape[0] != e.value.shape[0]:
        raise ContractViolation("attention rows must match segment count")
    per_head = ad.matmul(ad.transpose(a), e)  # (heads, embed_dim)
    if params.config.head_merge == "concat":
        flat = ad.reshape(per_head, (1, per_head.shape[0] * per_head.shape[1]))
        return ad.matmul(flat, params["merge.w"])
    return ad.mean(per_head, axis=0, keepdims=True)


def pool_utterance(e: ad.Tensor, params: ModelParams):
    a = attention_scores(e, params)
    pooled = attentive_pool(e, a, params)
    if params.config.renorm_utterance:
        pooled = ad.div(pooled, ad.row_norms(pooled))
    return pooled, a


def _segment_stack(features: FeatureMatrix, window: int, pad_short: bool, tail: bool) -> np.ndarray:
    segs = segment(features, window, pad_short=pad_short, tail_segment=tail)
    return np.stack([s.values for s in segs])


def _resolve_window(policy: WindowPolicy, window, rng) -> int:
    if window is not None:
        return int(window)
    if policy.mode == "test":
        return policy.test_length
    if rng is None:
        raise ContractViolation("training-mode embedding needs an explicit window or rng")
    return draw_batch_window(policy, rng)


def utterance_embed(features: FeatureMatrix, params: ModelParams, policy: WindowPolicy,
                    window: int | None = None, rng=None):
    """Full utterance pass. Returns (embedding, attention, segment embeddings) as arrays."""
    t = _resolve_window(policy, window, rng)
    e = embed_segment_stack(_segment_stack(features, t, policy.pad_short, policy.tail_segment), params)
    pooled, a = pool_utterance(e, params)
    return pooled.value[0].copy(), a.value.copy(), e.value.copy()


def baseline_average_embed(features: FeatureMatrix, params: ModelParams, policy: WindowPolicy,
                           window: int | None = None, rng=None) -> np.ndarray:
    """Plain mean of segment embeddings (no attention)."""
    t = _resolve_window(policy, window, rng)
    e = embed_segment_stack(_segment_stack(features, t, policy.pad_short, policy.tail_segment), params)
    return e.value.mean(axis=0)
