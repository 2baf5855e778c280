"""Duration-robust speaker verification toolkit.

Raw audio is turned into normalized log-mel features, sliced into
overlapping fixed-length segments, embedded by an LSTM encoder, and pooled
across segments with multi-head attention into one utterance embedding.
Training optimizes a joint objective over utterance- and segment-level
similarity plus an attention-diversity penalty; verification scores cosine
similarities of trial pairs and reports the equal error rate.
"""

from .config import Config
from .errors import DsaeError
from .estimator import SegmentAttentiveEmbedder
from .evaluator import ScoreReport, Trial, compute_eer, run_trials, score_trial
from .features import AudioClip, FeatureConfig, FeatureMatrix, NormStats
from .model import ModelConfig, ModelParams
from .segmenter import Segment, WindowPolicy
from .trainer import TrainConfig, TrainerState

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "Config",
    "DsaeError",
    "FeatureConfig",
    "FeatureMatrix",
    "ModelConfig",
    "ModelParams",
    "NormStats",
    "ScoreReport",
    "Segment",
    "SegmentAttentiveEmbedder",
    "TrainConfig",
    "TrainerState",
    "Trial",
    "WindowPolicy",
    "compute_eer",
    "run_trials",
    "score_trial",
    "__version__",
]
