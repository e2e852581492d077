"""Knowledge-graph embeddings composed from pretrained word vectors (TransW), with a TransE baseline."""

__version__ = "0.1.0"

from .data import (RelationFoldPlan, Split, Triple, TripleDataset, TripleIndex, Vocab, build_index,  # noqa: E402
                   load_dataset, load_name_map, load_triples, split_relations_kfold, tokenize)
from .model import TransE, TransW, compose, distance  # noqa: E402
from .trainer import TrainConfig, margin_loss, sample_negative, train, train_epoch  # noqa: E402
from .words import WordEmbeddingTable, load_word_vectors  # noqa: E402

__all__ = [
    "RelationFoldPlan", "Split", "Triple", "TripleDataset", "TripleIndex", "Vocab", "build_index",
    "load_dataset", "load_name_map", "load_triples", "split_relations_kfold", "tokenize",
    "TransE", "TransW", "compose", "distance",
    "TrainConfig", "margin_loss", "sample_negative", "train", "train_epoch",
    "WordEmbeddingTable", "load_word_vectors",
]
