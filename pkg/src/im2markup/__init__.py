"""Attention-based image-to-markup transduction on a small numpy autodiff engine."""

from .config import ModelConfig, SynthConfig, TrainConfig, load_config, model_preset
from .dataset import Vocab
from .decoding import beam_search, bestpath_decode, sample_sequence
from .errors import ConfigError, ContractError, NumericError, ShapeError
from .metrics import corpus_bleu, edit_distance, visual_match
from .model import Im2MarkupModel

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "Im2MarkupModel", "ModelConfig", "NumericError",
    "ShapeError", "SynthConfig", "TrainConfig", "Vocab", "beam_search", "bestpath_decode",
    "corpus_bleu", "edit_distance", "load_config", "model_preset", "sample_sequence",
    "visual_match",
]
