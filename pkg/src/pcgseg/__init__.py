"""Heart sound (PCG) segmentation with an attention bi-LSTM regressor."""

from .estimators import (AttentionBiLSTMRegressor, FeatureScaler, HeartSoundSegmenter,
                         PcgFeatureExtractor)
from .features import FeatureSpec, extract
from .model import ModelDims, ModelParams, count_params, init_params, model_forward
from .signal_io import (PcgRecording, State, StateInterval, split_dataset,
                        synth_dataset, synth_pcg)

__version__ = "0.1.0"

__all__ = [
    "AttentionBiLSTMRegressor", "FeatureScaler", "FeatureSpec", "HeartSoundSegmenter",
    "ModelDims", "ModelParams", "PcgFeatureExtractor", "PcgRecording", "State", "StateInterval",
    "count_params", "extract", "init_params", "model_forward", "split_dataset", "synth_dataset", "synth_pcg",
]
