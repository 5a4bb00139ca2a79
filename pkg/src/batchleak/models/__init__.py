"""Toy model zoo: char transformer, residual MLP classifiers, data, trainer, file I/O."""

from .classifier import ClassifierSpec, MLPClassifier, forward_classifier
from .corpus import CharVocab, Corpus
from .datasets import blob_splits, load_idx_dataset, make_blobs, read_idx, write_idx
from .io import ModelFormatError, load_model, model_bytes, save_model
from .transformer import CacheOverflow, KvCache, TransformerLM, TransformerSpec, forward_lm

__all__ = [
    "CacheOverflow", "CharVocab", "ClassifierSpec", "Corpus", "KvCache", "MLPClassifier",
    "ModelFormatError", "TransformerLM", "blob_splits", "TransformerSpec", "forward_classifier", "forward_lm",
    "load_idx_dataset", "load_model", "make_blobs", "model_bytes", "read_idx", "save_model", "write_idx",
]
