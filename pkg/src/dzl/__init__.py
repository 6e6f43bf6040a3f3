"""Disarranged zone learning: label-free stenosis scoring from frame-order recovery."""

from .disarrange import DisarrangeRecord, apply_disarrangement, make_disarrangement
from .flow import FarnebackFlow, FlowParams, compute_flow
from .metrics import auc, average_precision
from .model import EncoderDecoderParams, SequenceGRUClassifier, TrainConfig
from .scoring import DZLScorer, DzlScore, classify
from .synth import SynthConfig, generate_clip, generate_corpus
from .video_io import VideoClip, load_clip
from .zone import EffectiveZone, ZoneSpec

__version__ = "0.1.0"

__all__ = [
    "DZLScorer",
    "DisarrangeRecord",
    "DzlScore",
    "EffectiveZone",
    "EncoderDecoderParams",
    "FarnebackFlow",
    "FlowParams",
    "SequenceGRUClassifier",
    "SynthConfig",
    "TrainConfig",
    "VideoClip",
    "ZoneSpec",
    "apply_disarrangement",
    "auc",
    "average_precision",
    "classify",
    "compute_flow",
    "generate_clip",
    "generate_corpus",
    "load_clip",
    "make_disarrangement",
]
