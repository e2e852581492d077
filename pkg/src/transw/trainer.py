"""Margin-ranking training with uniform head/tail corruption and plain SGD."""

import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional

import numpy as np

from . import model as kge
from .data import Triple, TripleDataset, TripleIndex
from .words import WordEmbeddingTable

logger = logging.getLogger(__name__)

# independent random streams derived from the one run seed
STREAM_TRAIN = 1
STREAM_VALID = 2


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    margin: float = 1.0
    lr: float = 0.01
    epochs: int = 1000
    batch_size: int = 1
    negatives: int = 1
    norm: str = "L2"
    seed: int = 0
    fine_tune_words: bool = False
    project: bool = False
    checkpoint_interval: int = 0
    patience: int = 50
    max_retries: int = 10

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueError("margin must be > 0")
        if not self.lr >= 0:
            raise ValueError("learning rate must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1 or self.negatives < 1:
            raise ValueError("batch_size and negatives must be >= 1")
        if self.norm not in kge.NORMS:
            raise ValueError(f"norm must be one of {kge.NORMS}")
        if self.checkpoint_interval < 0 or self.patience < 0:
            raise ValueError("checkpoint_interval and patience must be >= 0")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    active_fraction: float
    seconds: float
    valid_loss: Optional[float] = None
    checkpoint: Optional[str] = None


@dataclass
class TrainStats:
    epochs: List[EpochRecord] = field(default_factory=list)
    stopped_early: bool = False

    @property
    def losses(self):
        return [e.mean_loss for e in self.epochs]


def epoch_rng(seed: int, stream: int, epoch: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, stream, epoch])


def margin_loss(d_pos, d_neg, margin):
    """``max(0, margin + d_pos - d_neg)``, elementwise."""
    return np.maximum(0.0, margin + np.asarray(d_pos, dtype=float) - np.asarray(d_neg, dtype=float))


def sample_negatives(positives, n_entities: int, index: Optional[TripleIndex], rng: np.random.Generator,
                     max_retries: int = 10, slot: Optional[str] = None) -> np.ndarray:
    """Corrupt the head or tail (fair coin per triple) of each positive with a uniform entity.

    Corruptions that hit a known triple, or reproduce the positive itself, are
    redrawn up to ``max_retries`` times; survivors are then drawn uniformly from
    the valid candidates of their slot, and only when no valid candidate exists
    is a known triple returned (with a warning).
    """
    pos = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    if n_entities < 2:
        raise ValueError("negative sampling needs at least two entities")
    n = len(pos)
    if slot is None:
        head = rng.random(n) < 0.5
    else:
        head = np.full(n, slot == "head")
    col = np.where(head, 0, 2)

    def invalid(cand, src):
        bad = np.all(cand == src, axis=-1)
        if index is not None and len(index):
            bad |= index.contains_many(cand)
        return bad

    # all draws up front: row i keeps its first acceptable draw
    draws = rng.integers(0, n_entities, (n, max_retries + 1))
    cands = np.repeat(pos[:, None, :], max_retries + 1, axis=1)
    rows = np.arange(n)
    cands[rows, :, col] = draws
    ok = ~invalid(cands, pos[:, None, :])
    first = np.where(ok.any(axis=1), ok.argmax(axis=1), max_retries)
    neg = cands[rows, first]
    bad = np.flatnonzero(~ok[rows, first])
    if len(bad):
        stuck = 0
        for i in bad.tolist():
            cands = np.repeat(pos[i:i + 1], n_entities, axis=0)
            cands[:, col[i]] = np.arange(n_entities)
            ok = np.flatnonzero(~invalid(cands, pos[i:i + 1]))
            if len(ok):
                neg[i] = cands[ok[rng.integers(len(ok))]]
            else:
                stuck += 1
        if stuck:
            logger.warning("%d corrupted triples could not avoid known facts; keeping them", stuck)
    return neg


def sample_negative(positive, n_entities: int, index: Optional[TripleIndex], rng: np.random.Generator,
                    max_retries: int = 10, slot: Optional[str] = None) -> Triple:
    h, r, t = sample_negatives([tuple(positive[:3])], n_entities, index, rng, max_retries, slot)[0].tolist()
    return Triple(h, r, t)


def train_epoch(model: kge.TranslationModel, triples, config: TrainConfig, rng: np.random.Generator,
                index: Optional[TripleIndex] = None, n_entities: Optional[int] = None,
                epoch: int = 0) -> EpochRecord:
    """One pass over ``triples`` in shuffled order, one SGD step per batch of pairs."""
    start = time.perf_counter()
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    n_entities = model.n_entities if n_entities is None else n_entities
    order = rng.permutation(len(triples))
    total, active, count = 0.0, 0, 0
    for lo in range(0, len(order), config.batch_size):
        pos = triples[order[lo:lo + config.batch_size]]
        if config.negatives > 1:
            pos = np.repeat(pos, config.negatives, axis=0)
        neg = sample_negatives(pos, n_entities, index, rng, config.max_retries)
        losses, grads = model.pair_gradients(pos, neg, config.margin)
        if not np.all(np.isfinite(losses)):
            i = int(np.flatnonzero(~np.isfinite(losses))[0])
            raise TrainingDiverged(f"non-finite loss at epoch {epoch} on triple {tuple(pos[i])} "
                                   f"against corruption {tuple(neg[i])}")
        if config.lr > 0:
            model.apply_gradients(grads, config.lr)
        total += float(losses.sum())
        active += int(np.count_nonzero(losses > 0))
        count += len(losses)
    model.end_epoch()
    return EpochRecord(epoch, total / max(count, 1), active / max(count, 1), time.perf_counter() - start)


def build_model(kind: str, dataset: TripleDataset, config: TrainConfig,
                words: Optional[WordEmbeddingTable] = None, dim: Optional[int] = None):
    if kind == "transw":
        if words is None:
            raise ValueError("TransW needs a word-vector table")
        return kge.TransW.build(dataset, words, config.norm, config.seed, config.fine_tune_words, config.project)
    if kind == "transe":
        dim = dim or (words.dim if words is not None else None)
        if not dim:
            raise ValueError("TransE needs an embedding dimension")
        return kge.TransE.build(dataset, dim, config.norm, config.seed)
    raise ValueError(f"unknown model kind {kind!r}")


def _valid_pairs(dataset: TripleDataset, index: TripleIndex, config: TrainConfig):
    if config.patience == 0 or not len(dataset.valid):
        return None
    pos = dataset.valid.positives()
    if not len(pos):
        return None
    neg = sample_negatives(pos, len(dataset.entities), index, epoch_rng(config.seed, STREAM_VALID),
                           config.max_retries)
    return pos, neg


def checkpoint_path(directory, epoch: int) -> str:
    return os.path.join(directory, f"checkpoint-epoch{epoch:05d}.bin")


def train(config: TrainConfig, dataset: TripleDataset, words: Optional[WordEmbeddingTable] = None,
          kind: str = "transw", dim: Optional[int] = None, checkpoint_dir=None, resume=None,
          triples=None, callback=None):
    """Run up to ``config.epochs`` epochs, checkpointing and early-stopping as configured.

    ``triples`` overrides the training facts (used by the relation-fold protocol).
    Resuming from a checkpoint continues with the same per-epoch random streams,
    so an interrupted run ends bitwise equal to an uninterrupted one.
    """
    train_triples = dataset.train.positives() if triples is None else np.asarray(triples)
    index = TripleIndex(train_triples, len(dataset.entities), len(dataset.relations))
    stats = TrainStats()
    best, bad_epochs, first_epoch = math.inf, 0, 1
    if resume is not None:
        model = kge.load(resume)
        state = model.metadata.get("train_state", {})
        first_epoch = int(model.metadata["epoch"]) + 1
        best = state.get("best", math.inf)
        bad_epochs = state.get("bad_epochs", 0)
        stats.epochs = [EpochRecord(**rec) for rec in state.get("history", [])]
        if model.n_entities != len(dataset.entities) or model.n_relations != len(dataset.relations):
            raise ValueError("checkpoint vocabulary does not match the dataset")
    else:
        model = build_model(kind, dataset, config, words, dim)
    model.metadata = {}
    valid = _valid_pairs(dataset, index, config)
    if valid is not None and resume is not None and bad_epochs >= config.patience:
        # the checkpointed run had already stopped early
        stats.stopped_early = True
        first_epoch = config.epochs + 1
    for epoch in range(first_epoch, config.epochs + 1):
        rec = train_epoch(model, train_triples, config, epoch_rng(config.seed, STREAM_TRAIN, epoch),
                          index, len(dataset.entities), epoch)
        if valid is not None:
            rec.valid_loss = float(margin_loss(model.score(valid[0]), model.score(valid[1]), config.margin).mean())
            if rec.valid_loss < best:
                best, bad_epochs = rec.valid_loss, 0
            else:
                bad_epochs += 1
        stats.epochs.append(rec)
        if checkpoint_dir and config.checkpoint_interval and epoch % config.checkpoint_interval == 0:
            rec.checkpoint = checkpoint_path(checkpoint_dir, epoch)
            history = [dict(asdict(r), seconds=0.0) for r in stats.epochs]
            model.save(rec.checkpoint, {"epoch": epoch, "train_state": {
                "best": best, "bad_epochs": bad_epochs, "history": history}})
        logger.debug("epoch %d loss %.6f active %.3f", epoch, rec.mean_loss, rec.active_fraction)
        if callback is not None:
            callback(model, rec)
        if valid is not None and bad_epochs >= config.patience:
            logger.info("early stop at epoch %d: validation loss has not improved for %d epochs", epoch, bad_epochs)
            stats.stopped_early = True
            break
    model.metadata = {"epochs_run": len(stats.epochs)}
    return model, stats
