"""Multilabel mixed-audio classification: corpus mixing, log-Mel/MFCC features,
a numpy CNN with handwritten backpropagation, and multilabel metrics."""

from .audio_io import AudioSegment, load_wav, resample, save_wav, slice_segments
from .errors import DataError, NumericError, SoundMixError
from .features import FeatureConfig, FeatureMatrix, log_mel_spectrogram, mel_filterbank, mfcc, stft
from .metrics import EvalReport, evaluate_predictions
from .mixer import MixSpec, build_mix_plan, mix_segments, read_metadata, write_metadata
from .model import ModelConfig, ModelParams, backward, bce_with_logits, forward, init_params, sigmoid
from .trainer import TrainConfig, adam_step, split_dataset, train

__version__ = "0.1.0"

__all__ = [
    "AudioSegment", "load_wav", "resample", "save_wav", "slice_segments",
    "DataError", "NumericError", "SoundMixError",
    "FeatureConfig", "FeatureMatrix", "log_mel_spectrogram", "mel_filterbank", "mfcc", "stft",
    "EvalReport", "evaluate_predictions",
    "MixSpec", "build_mix_plan", "mix_segments", "read_metadata", "write_metadata",
    "ModelConfig", "ModelParams", "backward", "bce_with_logits", "forward", "init_params", "sigmoid",
    "TrainConfig", "adam_step", "split_dataset", "train",
]
