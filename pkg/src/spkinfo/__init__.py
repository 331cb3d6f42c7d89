"""Information content of speaker embeddings, measured on quantized vectors."""

from .data import QuantizedDataset, SpeakerDataset, load, save, split_by_speaker, subsample
from .entropy import (
    UniquenessEstimate,
    conditional_entropy,
    element_entropy,
    mutual_information,
    vector_entropy,
)
from .quantizer import QuantizerBank, ScalarQuantizer, train_bank, train_lloyd_max

__version__ = "0.1.0"

__all__ = [
    "QuantizedDataset",
    "QuantizerBank",
    "ScalarQuantizer",
    "SpeakerDataset",
    "UniquenessEstimate",
    "conditional_entropy",
    "element_entropy",
    "load",
    "mutual_information",
    "save",
    "split_by_speaker",
    "subsample",
    "train_bank",
    "train_lloyd_max",
    "vector_entropy",
]
