"""Training loop: episodic batch sampling, Adam with global-norm clipping,
validation-driven learning-rate decay, and exact-resume checkpoints.

Each batch draws Q speakers and P utterances per speaker, one shared window
length, and takes a single optimizer step on the combined objective. The
gradient's global L2 norm over all parameters is clipped, the similarity
scale is clamped positive after every update, and all randomness flows from
one seeded generator so a (seed, config, dataset) triple fully determines
the metric log.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import loss as loss_mod
from . import model as model_mod
from .errors import (ContractViolation, DatasetShapeError, FormatError,
                     IncompatibleConfig, NumericFailure)
from .features import FeatureMatrix
from .formats import read_checkpoint, write_checkpoint
from .segmenter import WindowPolicy, draw_batch_window, segment

W_FLOOR = 1e-4


@dataclass
class TrainConfig:
    speakers_per_batch: int = 8       # Q
    utterances_per_speaker: int = 4   # P
    seg_weight: float = 0.2
    penalty_weight: float = 0.001
    exclude_self: bool = False
    segment_centroids: str = "speaker"
    lr: float = 0.001
    clip_norm: float = 3.0
    clip_per_tensor: bool = False
    max_batches: int = 15000
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    validate_every: int = 0           # 0 = never
    patience: int = 3
    decay_factor: float = 0.5
    lr_floor: float = 1e-5
    log_every: int = 1
    checkpoint_every: int = 0
    validation_trials: int = 200

    def __post_init__(self):
        if self.speakers_per_batch < 2:
            raise ContractViolation("GE2E needs at least 2 speakers per batch")
        if self.utterances_per_speaker < 1:
            raise ContractViolation("need at least 1 utterance per speaker")
        for name in ("lr", "clip_norm", "max_batches", "decay_factor", "lr_floor"):
            if getattr(self, name) <= 0:
                raise ContractViolation(f"{name} must be positive")


@dataclass
class Batch:
    speaker_ids: list
    utterance_ids: list
    stacks: list          # per utterance, (N, T, F) arrays
    window: int


class Dataset:
    """Feature matrices grouped by speaker, with deterministic ordering."""

    def __init__(self, by_speaker: dict):
        self.by_speaker = {spk: list(items) for spk, items in sorted(by_speaker.items())}
        self.speakers = list(self.by_speaker)

    def __len__(self):
        return sum(len(v) for v in self.by_speaker.values())


def sample_batch(dataset: Dataset, speakers_per_batch: int, utterances_per_speaker: int,
                 rng: np.random.Generator, policy: WindowPolicy,
                 window: int | None = None) -> Batch:
    """Uniform Q-speaker / P-utterance sample sharing one window length."""
    q, p = speakers_per_batch, utterances_per_speaker
    eligible = [s for s in dataset.speakers if len(dataset.by_speaker[s]) >= p]
    if len(eligible) < q:
        raise DatasetShapeError(
            f"need {q} speakers with >= {p} utterances, dataset has {len(eligible)} "
            f"(of {len(dataset.speakers)} total)")
    window = draw_batch_window(policy, rng) if window is None else int(window)
    chosen = [eligible[i] for i in rng.choice(len(eligible), size=q, replace=False)]
    speaker_ids, utterance_ids, stacks = [], [], []
    for spk in chosen:
        items = dataset.by_speaker[spk]
        for i in rng.choice(len(items), size=p, replace=False):
            utt_id, values = items[i]
            segs = segment(FeatureMatrix(values=values), window,
                           pad_short=policy.pad_short, tail_segment=policy.tail_segment)
            speaker_ids.append(spk)
            utterance_ids.append(utt_id)
            stacks.append(np.stack([s.values for s in segs]))
    return Batch(speaker_ids=speaker_ids, utterance_ids=utterance_ids,
                 stacks=stacks, window=window)


@dataclass
class TrainerState:
    params: model_mod.ModelParams
    config: TrainConfig
    rng: np.random.Generator
    opt_m: dict = field(default_factory=dict)
    opt_v: dict = field(default_factory=dict)
    step: int = 0
    lr: float = 0.0
    best_metric: float = math.inf
    bad_validations: int = 0

    def __post_init__(self):
        if not self.opt_m:
            self.opt_m = {k: np.zeros_like(v.value) for k, v in self.params.tensors.items()}
            self.opt_v = {k: np.zeros_like(v.value) for k, v in self.params.tensors.items()}
        if self.lr == 0.0:
            self.lr = self.config.lr


def init_state(model_config: model_mod.ModelConfig, train_config: TrainConfig) -> TrainerState:
    rng = np.random.default_rng(train_config.seed)
    params = model_mod.ModelParams.initialize(model_config, rng)
    return TrainerState(params=params, config=train_config, rng=rng)


def global_grad_norm(grads: dict) -> float:
    total = 0.0
    for name in sorted(grads):
        g = grads[name]
        total += float((g * g).sum())
    return math.sqrt(total)


def clip_gradients(grads: dict, clip_norm: float, per_tensor: bool = False) -> float:
    """Scale gradients in place so their (global or per-tensor) L2 norm is <= clip_norm.

    Returns the pre-clip global norm.
    """
    norm = global_grad_norm(grads)
    if per_tensor:
        for name in sorted(grads):
            n = math.sqrt(float((grads[name] ** 2).sum()))
            if n > clip_norm:
                grads[name] *= clip_norm / n
    elif norm > clip_norm:
        scale = clip_norm / norm
        for name in sorted(grads):
            grads[name] *= scale
    return norm


def train_step(state: TrainerState, batch: Batch) -> dict:
    """One forward/backward/update pass. Raises NumericFailure (state untouched)
    if the loss or gradient goes non-finite."""
    cfg = state.config
    params = state.params
    params.zero_grad()
    emb = loss_mod.build_batch_embeddings(
        params, batch.stacks, cfg.speakers_per_batch, cfg.utterances_per_speaker)
    breakdown = loss_mod.total_loss(
        emb, params, seg_weight=cfg.seg_weight, penalty_weight=cfg.penalty_weight,
        exclude_self=cfg.exclude_self, segment_centroids=cfg.segment_centroids)
    if not math.isfinite(breakdown.total):
        raise NumericFailure(
            f"non-finite loss {breakdown.total} at step {state.step}",
            diagnostics={"speakers": batch.speaker_ids, "utterances": batch.utterance_ids,
                         "window": batch.window, "utterance_term": breakdown.utterance,
                         "segment_term": breakdown.segment, "penalty_term": breakdown.penalty})
    breakdown.node.backward()
    grads = params.gradients()
    pre_norm = global_grad_norm(grads)
    if not math.isfinite(pre_norm):
        raise NumericFailure(
            f"non-finite gradient norm at step {state.step}",
            diagnostics={"speakers": batch.speaker_ids, "window": batch.window})
    clip_gradients(grads, cfg.clip_norm, per_tensor=cfg.clip_per_tensor)
    state.step += 1
    t = state.step
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    for name in params.names():
        g = grads[name]
        m = state.opt_m[name]
        v = state.opt_v[name]
        m[...] = b1 * m + (1.0 - b1) * g
        v[...] = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        params[name].value[...] = params[name].value - state.lr * m_hat / (np.sqrt(v_hat) + eps)
    w = params["sim.w"]
    w.value[...] = max(float(w.value), W_FLOOR)
    return {
        "loss": breakdown.total,
        "utterance": breakdown.utterance,
        "segment": breakdown.segment,
        "penalty": breakdown.penalty,
        "grad_norm": pre_norm,
        "lr": state.lr,
    }


# validation-driven schedule -----------------------------------------------------


def apply_validation_metric(state: TrainerState, metric: float):
    """Decay lr after `patience` consecutive validations without improvement."""
    if metric < state.best_metric:
        state.best_metric = metric
        state.bad_validations = 0
        return
    state.bad_validations += 1
    if state.bad_validations >= state.config.patience:
        state.lr = max(state.lr * state.config.decay_factor, state.config.lr_floor)
        state.bad_validations = 0


def validate_and_schedule(state: TrainerState, valid_features: dict, trials,
                          policy: WindowPolicy) -> float:
    """Score a fixed trial list with the current parameters and update the lr."""
    from .evaluator import compute_eer, score_trial
    cache = {}
    scores, labels = [], []
    for label, id_a, id_b in trials:
        for uid in (id_a, id_b):
            if uid not in cache:
                emb, _, _ = model_mod.utterance_embed(valid_features[uid], state.params, policy)
                cache[uid] = emb
        scores.append(score_trial(cache[id_a], cache[id_b]))
        labels.append(label)
    eer, _ = compute_eer(scores, labels)
    apply_validation_metric(state, eer)
    return eer


# checkpointing -------------------------------------------------------------------


def _bytes_to_floats(data: bytes) -> np.ndarray:
    return np.frombuffer(data, dtype=np.uint8).astype(np.float64)


def _floats_to_bytes(values: np.ndarray) -> bytes:
    return values.astype(np.uint8).tobytes()


def save_checkpoint(state: TrainerState, path: str, digest: bytes):
    records = {}
    for name, tensor in state.params.tensors.items():
        records[f"param.{name}"] = tensor.value
        records[f"adam.m.{name}"] = state.opt_m[name]
        records[f"adam.v.{name}"] = state.opt_v[name]
    records["adam.step"] = np.asarray(float(state.step))
    records["lr"] = np.asarray(state.lr)
    records["best_metric"] = np.asarray(state.best_metric)
    records["bad_validations"] = np.asarray(float(state.bad_validations))
    records["rng.state"] = _bytes_to_floats(
        json.dumps(state.rng.bit_generator.state, sort_keys=True).encode("utf-8"))
    meta = {"adam_beta1": state.config.adam_beta1, "adam_beta2": state.config.adam_beta2,
            "adam_eps": state.config.adam_eps,
            "init": "uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); forget bias +1; w=10 b=5"}
    records["meta.json"] = _bytes_to_floats(json.dumps(meta, sort_keys=True).encode("utf-8"))
    write_checkpoint(path, digest, records)


def _check_digest(path: str, found: bytes, expected: bytes):
    if expected is not None and bytes(found) != bytes(expected):
        raise IncompatibleConfig(
            f"{path}: checkpoint config digest {bytes(found).hex()} does not match "
            f"current config {bytes(expected).hex()}")


def load_model_params(path: str, model_config: model_mod.ModelConfig,
                      digest: bytes = None) -> model_mod.ModelParams:
    """Model weights only (for scoring); optimizer records are ignored."""
    found, records = read_checkpoint(path)
    _check_digest(path, found, digest)
    arrays = {k[len("param."):]: v for k, v in records.items() if k.startswith("param.")}
    if not arrays:
        raise FormatError(f"{path}: no parameter records")
    return model_mod.ModelParams(model_config, arrays)


def load_checkpoint(path: str, model_config: model_mod.ModelConfig,
                    train_config: TrainConfig, digest: bytes = None) -> TrainerState:
    found, records = read_checkpoint(path)
    _check_digest(path, found, digest)
    try:
        arrays = {k[len("param."):]: v for k, v in records.items() if k.startswith("param.")}
        params = model_mod.ModelParams(model_config, arrays)
        opt_m = {k: records[f"adam.m.{k}"].copy() for k in arrays}
        opt_v = {k: records[f"adam.v.{k}"].copy() for k in arrays}
        rng = np.random.default_rng(0)
        rng.bit_generator.state = json.loads(_floats_to_bytes(records["rng.state"]).decode("utf-8"))
        state = TrainerState(
            params=params, config=train_config, rng=rng, opt_m=opt_m, opt_v=opt_v,
            step=int(records["adam.step"]), lr=float(records["lr"]),
            best_metric=float(records["best_metric"]),
            bad_validations=int(records["bad_validations"]))
    except KeyError as e:
        raise FormatError(f"{path}: missing checkpoint record {e}") from e
    return state


# the loop ------------------------------------------------------------------------


def format_metrics_line(step: int, metrics: dict) -> str:
    cols = [str(step)] + [repr(float(metrics[k]))
                          for k in ("loss", "utterance", "segment", "penalty", "grad_norm", "lr")]
    return "\t".join(cols)


def run_training(state: TrainerState, dataset: Dataset, policy: WindowPolicy,
                 log_fn=None, validation=None, checkpoint_fn=None) -> TrainerState:
    """Run `max_batches` steps; `validation` is an optional callable(state) -> metric
    invoked every `validate_every` steps, `checkpoint_fn(state)` every
    `checkpoint_every` steps."""
    cfg = state.config
    while state.step < cfg.max_batches:
        batch = sample_batch(dataset, cfg.speakers_per_batch, cfg.utterances_per_speaker,
                             state.rng, policy)
        metrics = train_step(state, batch)
        if log_fn is not None and state.step % cfg.log_every == 0:
            log_fn(format_metrics_line(state.step, metrics))
        if validation is not None and cfg.validate_every and state.step % cfg.validate_every == 0:
            validation(state)
        if checkpoint_fn is not None and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
            checkpoint_fn(state)
    return state
