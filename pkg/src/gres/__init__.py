"""Group-wise referring expression segmentation at desk scale."""

from .config import RunConfig, SynthConfig, load_config
from .dataset import DatasetManifest, GroupSample, ImageRecord, generate_corpus, generate_synthetic, regroup_res
from .model import GRSer
from .trainer import Checkpoint, ablate, evaluate, infer_group, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "DatasetManifest",
    "GRSer",
    "GroupSample",
    "ImageRecord",
    "RunConfig",
    "SynthConfig",
    "ablate",
    "evaluate",
    "generate_corpus",
    "generate_synthetic",
    "infer_group",
    "load_config",
    "regroup_res",
    "train",
]
