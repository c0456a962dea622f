"""slotscene: object-centric what+where scene representations driving
behavior-cloning and implicit Q-learning policies, evaluated in a
deterministic sprite pouring environment."""

__version__ = "0.1.0"

from .backbone import FeatureGrid, FrameBatch, extract_features, write_feature_cache
from .config import ExperimentConfig, load_config
from .encoder import (AttentionMaps, EncoderCheckpoint, SlotSet, bind_slots,
                      decode_slots)
from .merging import MergedSlots, merge_slots
from .representation import (SceneRepresentation, WhereVector, build_representation,
                             build_where, resize_mask, scaled_softmax)

__all__ = [
    "__version__",
    "FrameBatch",
    "FeatureGrid",
    "extract_features",
    "write_feature_cache",
    "ExperimentConfig",
    "load_config",
    "SlotSet",
    "AttentionMaps",
    "EncoderCheckpoint",
    "bind_slots",
    "decode_slots",
    "MergedSlots",
    "merge_slots",
    "WhereVector",
    "SceneRepresentation",
    "resize_mask",
    "scaled_softmax",
    "build_where",
    "build_representation",
]
