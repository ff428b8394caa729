"""Joint intent classification and slot filling over a from-scratch Transformer encoder."""

from .crf import CrfParams, crf_nll, log_partition, sequence_score, viterbi_decode
from .data import Dataset, LabelMaps, Record, load_dataset, load_split, validate_dataset
from .encoder import EncoderConfig, encode
from .heads import JointModel, Prediction, init_model, joint_loss, predict
from .metrics import Metrics, compute_metrics, extract_chunks, frame_accuracy, slot_f1
from .tensor import Tensor, no_grad
from .tokenizer import Vocabulary, build_vocab, encode_example, tokenize_word
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "CrfParams", "crf_nll", "log_partition", "sequence_score", "viterbi_decode",
    "Dataset", "LabelMaps", "Record", "load_dataset", "load_split", "validate_dataset",
    "EncoderConfig", "encode",
    "JointModel", "Prediction", "init_model", "joint_loss", "predict",
    "Metrics", "compute_metrics", "extract_chunks", "frame_accuracy", "slot_f1",
    "Tensor", "no_grad",
    "Vocabulary", "build_vocab", "encode_example", "tokenize_word",
    "TrainConfig", "load_checkpoint", "save_checkpoint", "train",
]
