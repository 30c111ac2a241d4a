"""Multi-granularity network with modal attention for dense affective prediction."""

from .evaluator import EvalReport, ensemble, evaluate, pearson
from .feature_store import FeatureTrack, VideoRecord, align_sample, read_track, uniform_subsample, write_track
from .fusion import ModalFusion
from .model import FrameModel, ModelConfig
from .moe import MoE
from .trainer import TrainConfig, TrainReport, train
from .video_level import NetVLAD, VideoConfig, VideoLevelModel, video_target

__version__ = "0.1.0"

__all__ = [
    "EvalReport", "ensemble", "evaluate", "pearson",
    "FeatureTrack", "VideoRecord", "align_sample", "read_track", "uniform_subsample", "write_track",
    "ModalFusion", "FrameModel", "ModelConfig", "MoE",
    "TrainConfig", "TrainReport", "train",
    "NetVLAD", "VideoConfig", "VideoLevelModel", "video_target",
]
