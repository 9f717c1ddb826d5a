"""Multi-mapping conversation model with posterior mapping selection, built on numpy."""

from .model import ModelDims, ModelParams
from .numerics import Graph, Tensor, backward, grad_check
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train
from .vocab_data import Vocab, build_vocab, encode_pairs, synth_corpus

__version__ = "0.1.0"

__all__ = ["Graph", "ModelDims", "ModelParams", "Tensor", "TrainConfig", "Vocab", "backward", "build_vocab",
           "encode_pairs", "grad_check", "load_checkpoint", "save_checkpoint", "synth_corpus", "train"]
